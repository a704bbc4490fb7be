import type { LossReport } from "./types";

export interface ChartSeries {
  label: string;
  color: string;
  /** pixel polyline, one point per epoch. */
  points: { x: number; y: number }[];
}

const PAD = 10;

/** Pixel polylines for total/contrastive/regularization loss curves. */
export function layoutSeries(
  report: LossReport,
  width: number,
  height: number,
): ChartSeries[] {
  const rows = report.epochs;
  if (rows.length === 0) return [];
  const columns: { label: string; color: string; index: number }[] = [
    { label: "total", color: "#111827", index: 1 },
    { label: "contrastive", color: "#dc2626", index: 2 },
    { label: "regularization", color: "#2563eb", index: 3 },
  ];
  const values = rows.flatMap((r) => [r[1], r[2], r[3]]);
  const max = Math.max(...values, 1e-12);
  const innerW = width - 2 * PAD;
  const innerH = height - 2 * PAD;
  const xAt = (i: number) =>
    PAD + (rows.length === 1 ? innerW / 2 : (i / (rows.length - 1)) * innerW);
  return columns.map(({ label, color, index }) => ({
    label,
    color,
    points: rows.map((row, i) => ({
      x: xAt(i),
      y: PAD + innerH * (1 - row[index] / max),
    })),
  }));
}

export function drawLossChart(canvas: HTMLCanvasElement, report: LossReport): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, width, height);
  ctx.strokeStyle = "#e5e7eb";
  ctx.strokeRect(PAD, PAD, width - 2 * PAD, height - 2 * PAD);
  for (const series of layoutSeries(report, width, height)) {
    ctx.strokeStyle = series.color;
    ctx.lineWidth = series.label === "total" ? 2 : 1;
    ctx.beginPath();
    series.points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
  }
}
