import type { Schematic } from "./types";

/** Pixel layout helpers are pure so the court geometry is unit-testable;
 * only the draw calls touch the canvas. */

export interface Point {
  x: number;
  y: number;
}

const COURT_MARGIN = 6;

export function toPixels(
  position: number[],
  width: number,
  height: number,
): Point {
  const innerW = width - 2 * COURT_MARGIN;
  const innerH = height - 2 * COURT_MARGIN;
  return {
    x: COURT_MARGIN + position[0] * innerW,
    y: COURT_MARGIN + position[1] * innerH,
  };
}

export function framePoints(
  schematic: Schematic,
  frame: number,
  width: number,
  height: number,
): Point[] {
  const rows = schematic.positions[frame] ?? [];
  return rows.map((pos) => toPixels(pos, width, height));
}

/** Per-person trail: pixel points of the last `length` frames up to `frame`. */
export function personTrail(
  schematic: Schematic,
  person: number,
  frame: number,
  length: number,
  width: number,
  height: number,
): Point[] {
  const start = Math.max(0, frame - length);
  const out: Point[] = [];
  for (let t = start; t <= frame; t++) {
    out.push(toPixels(schematic.positions[t][person], width, height));
  }
  return out;
}

const PERSON_COLORS = [
  "#2563eb", "#dc2626", "#16a34a", "#9333ea", "#ea580c", "#0891b2",
  "#be185d", "#4d7c0f", "#7c3aed", "#b91c1c", "#0d9488", "#a16207",
];

export function personColor(index: number): string {
  return PERSON_COLORS[index % PERSON_COLORS.length];
}

export function drawFrame(
  canvas: HTMLCanvasElement,
  schematic: Schematic,
  frame: number,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return; // headless environments have no 2d context
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#f0fdf4";
  ctx.fillRect(0, 0, width, height);
  ctx.strokeStyle = "#86efac";
  ctx.strokeRect(COURT_MARGIN, COURT_MARGIN, width - 2 * COURT_MARGIN, height - 2 * COURT_MARGIN);
  ctx.beginPath();
  ctx.moveTo(width / 2, COURT_MARGIN);
  ctx.lineTo(width / 2, height - COURT_MARGIN);
  ctx.stroke();

  for (let person = 0; person < schematic.persons; person++) {
    const trail = personTrail(schematic, person, frame, 3, width, height);
    ctx.strokeStyle = personColor(person);
    ctx.globalAlpha = 0.35;
    ctx.beginPath();
    trail.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
    ctx.globalAlpha = 1.0;

    const dot = trail[trail.length - 1];
    ctx.fillStyle = personColor(person);
    ctx.beginPath();
    ctx.arc(dot.x, dot.y, 3.2, 0, 2 * Math.PI);
    ctx.fill();
  }
}

/** Loop the clip on the canvas; returns a stop function. */
export function animateClip(
  canvas: HTMLCanvasElement,
  schematic: Schematic,
  intervalMs = 280,
): () => void {
  let frame = 0;
  drawFrame(canvas, schematic, frame);
  const timer = setInterval(() => {
    frame = (frame + 1) % schematic.frames;
    drawFrame(canvas, schematic, frame);
  }, intervalMs);
  return () => clearInterval(timer);
}
