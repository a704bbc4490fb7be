import { ApiClient, ApiError } from "./api";
import { drawLossChart } from "./lossChart";
import { pollJob } from "./pollJob";
import { diffRankings, movementBadge, ranksAreContiguous } from "./ranking";
import { animateClip } from "./schematic";
import {
  canAnnotate,
  canCompare,
  canCreateSession,
  canStartFinetune,
  effectiveLabels,
  isValidTransition,
  missingLabels,
} from "./state";
import type {
  DatasetSummary,
  Label,
  RetrievalResponse,
  Schematic,
  SelectionRow,
  SessionView,
} from "./types";

interface WorkbenchState {
  dataset: DatasetSummary | null;
  picked: string[];
  targetQueryCount: number;
  session: SessionView | null;
  jobStatus: string | null;
  showClassBadges: boolean;
  comparison: {
    pretrained: RetrievalResponse;
    finetuned: RetrievalResponse;
  } | null;
  error: string | null;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

export class Workbench {
  readonly state: WorkbenchState = {
    dataset: null,
    picked: [],
    targetQueryCount: 3,
    session: null,
    jobStatus: null,
    showClassBadges: false,
    comparison: null,
    error: null,
  };
  private schematics = new Map<string, Schematic>();
  private animators: (() => void)[] = [];

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private pollIntervalMs = 400,
  ) {}

  // ---- data flow (all domain values come from service responses) ----------

  async connect(datasetId: string): Promise<void> {
    await this.guard(async () => {
      this.state.dataset = await this.api.getDataset(datasetId);
      this.state.picked = [];
      this.state.session = null;
      this.state.comparison = null;
    });
  }

  async loadSchematic(videoId: string): Promise<Schematic | null> {
    if (!this.schematics.has(videoId)) {
      try {
        const schematic = await this.api.schematic(
          videoId,
          this.state.dataset?.id,
        );
        this.schematics.set(videoId, schematic);
      } catch {
        return null;
      }
    }
    return this.schematics.get(videoId) ?? null;
  }

  togglePick(videoId: string): void {
    const picked = this.state.picked;
    const at = picked.indexOf(videoId);
    if (at >= 0) picked.splice(at, 1);
    else picked.push(videoId);
    this.render();
  }

  async createSession(): Promise<void> {
    const { dataset, picked } = this.state;
    if (!dataset || !canCreateSession(picked.length, this.state.targetQueryCount)) return;
    await this.guard(async () => {
      const session = await this.api.createSession({
        dataset_id: dataset.id,
        query_ids: [...picked],
        seed: 0,
      });
      this.adoptSession(session);
    });
  }

  async submitLabel(videoId: string, label: Label): Promise<void> {
    const session = this.state.session;
    if (!session || !canAnnotate(session.state)) return;
    await this.guard(async () => {
      // no optimistic update: the server response is the session truth
      const res = await this.api.annotate(session.id, [
        { video_id: videoId, label, annotator: "workbench" },
      ]);
      this.adoptSession(res.session);
    });
  }

  async startFinetune(config: Record<string, unknown> = {}): Promise<void> {
    const session = this.state.session;
    if (!session || !canStartFinetune(session)) return;
    await this.guard(async () => {
      const { job_id } = await this.api.startFinetune(session.id, config);
      this.adoptSession(await this.api.getSession(session.id));
      this.state.jobStatus = "running";
      this.render();
      await pollJob(
        this.api,
        job_id,
        (job) => {
          this.state.jobStatus = job.status;
        },
        this.pollIntervalMs,
      );
      this.adoptSession(await this.api.getSession(session.id));
    });
  }

  async loadComparison(queryId: string, k: number): Promise<void> {
    const session = this.state.session;
    if (!session || !canCompare(session.state)) return;
    await this.guard(async () => {
      const [pretrained, finetuned] = await Promise.all([
        this.api.retrieval(session.id, queryId, k, "pretrained"),
        this.api.retrieval(session.id, queryId, k, "finetuned"),
      ]);
      for (const res of [pretrained, finetuned]) {
        if (!ranksAreContiguous(res.results)) {
          throw new Error(`service returned non-contiguous ranks for ${res.space}`);
        }
      }
      this.state.comparison = { pretrained, finetuned };
    });
  }

  private adoptSession(next: SessionView): void {
    const prev = this.state.session;
    if (prev && prev.id === next.id && !isValidTransition(prev.state, next.state)) {
      this.state.error = `illegal session transition ${prev.state} -> ${next.state}`;
    }
    this.state.session = next;
    this.render();
  }

  private async guard(action: () => Promise<void>): Promise<void> {
    try {
      this.state.error = null;
      await action();
    } catch (err) {
      this.state.error =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    }
    this.render();
  }

  /** Stop animations and clear the DOM (used on teardown). */
  dispose(): void {
    this.animators.forEach((stop) => stop());
    this.animators = [];
    this.root.replaceChildren();
  }

  // ---- rendering -----------------------------------------------------------

  render(): void {
    this.animators.forEach((stop) => stop());
    this.animators = [];
    this.root.replaceChildren(
      this.renderError(),
      this.renderBrowser(),
      this.renderSession(),
      this.renderComparison(),
    );
  }

  private renderError(): HTMLElement {
    const box = el("div", { "data-testid": "error-box", class: "error-box" });
    if (this.state.error) {
      box.append(
        el("span", {}, this.state.error),
        el("button", { "data-testid": "error-dismiss" }, "dismiss"),
      );
      box.querySelector("button")?.addEventListener("click", () => {
        this.state.error = null;
        this.render();
      });
    } else {
      box.style.display = "none";
    }
    return box;
  }

  private clipCanvas(videoId: string, size = 150): HTMLCanvasElement {
    const canvas = el("canvas", { class: "clip-canvas" });
    canvas.width = size;
    canvas.height = Math.round(size * 0.62);
    void this.loadSchematic(videoId).then((schematic) => {
      if (schematic) this.animators.push(animateClip(canvas, schematic));
    });
    return canvas;
  }

  private renderBrowser(): HTMLElement {
    const panel = el("section", { class: "panel", "data-testid": "browser" });
    const dataset = this.state.dataset;
    panel.append(el("h2", {}, "1. Pick query clips"));
    if (!dataset) {
      panel.append(el("p", {}, "Connect to a dataset to browse clips."));
      return panel;
    }
    const picked = this.state.picked;
    const counter = el(
      "p",
      { "data-testid": "picked-count" },
      `picked ${picked.length} of ${this.state.targetQueryCount} query clips`,
    );
    const badgeToggle = el("label", { class: "badge-toggle" });
    const checkbox = el("input", { type: "checkbox", "data-testid": "badge-toggle" });
    checkbox.checked = this.state.showClassBadges;
    checkbox.addEventListener("change", () => {
      this.state.showClassBadges = checkbox.checked;
      this.render();
    });
    badgeToggle.append(checkbox, " show class badges (debug)");

    const grid = el("div", { class: "clip-grid" });
    for (const video of dataset.videos.filter((v) => v.split === "test")) {
      const card = el("div", {
        class: `clip-card${picked.includes(video.id) ? " picked" : ""}`,
        "data-testid": `clip-card-${video.id}`,
      });
      card.append(this.clipCanvas(video.id));
      const caption = el("div", { class: "caption" }, video.id);
      if (this.state.showClassBadges && video.class) {
        caption.append(
          el("span", { class: "badge", "data-testid": `class-badge-${video.id}` },
             video.class),
        );
      }
      card.append(caption);
      card.addEventListener("click", () => this.togglePick(video.id));
      grid.append(card);
    }

    const createBtn = el(
      "button",
      { "data-testid": "create-session" },
      "Create session from picked queries",
    ) as HTMLButtonElement;
    createBtn.disabled =
      !canCreateSession(picked.length, this.state.targetQueryCount) ||
      this.state.session !== null;
    createBtn.addEventListener("click", () => void this.createSession());

    panel.append(counter, badgeToggle, grid, createBtn);
    return panel;
  }

  private scoreFor(session: SessionView, videoId: string): SelectionRow | undefined {
    return session.selection_rows.find((row) => row.video_id === videoId);
  }

  private renderSession(): HTMLElement {
    const panel = el("section", { class: "panel", "data-testid": "session" });
    panel.append(el("h2", {}, "2. Label selected clips"));
    const session = this.state.session;
    if (!session) {
      panel.append(el("p", {}, "No session yet."));
      return panel;
    }
    panel.append(
      el("p", {},
         `session ${session.id} — state: `,
         el("strong", { "data-testid": "session-state" }, session.state)),
    );
    const labels = effectiveLabels(session.annotations);
    const list = el("div", { class: "clip-grid" });
    for (const videoId of session.selected_ids) {
      const card = el("div", {
        class: "clip-card selected-clip",
        "data-testid": `selected-clip-${videoId}`,
      });
      card.append(this.clipCanvas(videoId));
      const row = this.scoreFor(session, videoId);
      const caption = el("div", { class: "caption" }, videoId);
      if (row) {
        caption.append(
          el("span", { class: "scores" },
             ` S=${row.similarity.toFixed(3)} V=${row.dissimilarity.toFixed(4)} ` +
             `I=${row.informative.toFixed(3)}`),
        );
      }
      const current = labels.get(videoId);
      const controls = el("div", { class: "label-controls" });
      for (const label of ["positive", "negative"] as Label[]) {
        const btn = el(
          "button",
          {
            "data-testid": `label-${label}-${videoId}`,
            class: current === label ? `label-btn active-${label}` : "label-btn",
          },
          label,
        ) as HTMLButtonElement;
        btn.disabled = !canAnnotate(session.state);
        btn.addEventListener("click", () => void this.submitLabel(videoId, label));
        controls.append(btn);
      }
      card.append(caption, controls);
      list.append(card);
    }

    const missing = missingLabels(session);
    const progress = el(
      "p",
      { "data-testid": "label-progress" },
      missing.length === 0
        ? `all ${session.selected_ids.length} clips labeled`
        : `${session.selected_ids.length - missing.length}/${session.selected_ids.length} labeled, missing: ${missing.join(", ")}`,
    );

    const finetuneBtn = el(
      "button",
      { "data-testid": "finetune-btn" },
      "Fine-tune embedding",
    ) as HTMLButtonElement;
    finetuneBtn.disabled = !canStartFinetune(session);
    finetuneBtn.addEventListener("click", () => void this.startFinetune());

    const jobLine = el(
      "p",
      { "data-testid": "job-status" },
      this.state.jobStatus ? `fine-tune job: ${this.state.jobStatus}` : "",
    );

    panel.append(list, progress, finetuneBtn, jobLine);

    if (session.loss_report && session.loss_report.epochs.length > 0) {
      const chart = el("canvas", { "data-testid": "loss-chart" });
      chart.width = 420;
      chart.height = 160;
      drawLossChart(chart, session.loss_report);
      panel.append(
        el("p", {},
           `fine-tuned in ${session.loss_report.epochs.length} epochs ` +
           `(${session.loss_report.stop_reason})`),
        chart,
      );
    }
    return panel;
  }

  private renderComparison(): HTMLElement {
    const panel = el("section", { class: "panel", "data-testid": "comparison" });
    panel.append(el("h2", {}, "3. Compare rankings"));
    const session = this.state.session;
    if (!session || !canCompare(session.state)) {
      panel.append(el("p", {}, "Fine-tune the session to unlock the comparison."));
      return panel;
    }
    const querySelect = el("select", { "data-testid": "compare-query" });
    for (const qid of session.query_ids) {
      querySelect.append(el("option", { value: qid }, qid));
    }
    const kInput = el("input", {
      type: "number",
      value: "10",
      min: "1",
      "data-testid": "compare-k",
    }) as HTMLInputElement;
    const loadBtn = el("button", { "data-testid": "compare-load" }, "Load rankings");
    loadBtn.addEventListener("click", () =>
      void this.loadComparison(querySelect.value, Number(kInput.value)),
    );
    panel.append(el("div", { class: "compare-controls" }, querySelect, kInput, loadBtn));

    const comparison = this.state.comparison;
    if (!comparison) return panel;

    const columns = el("div", { class: "compare-columns" });
    const changes = diffRankings(comparison.pretrained.results, comparison.finetuned.results);
    const renderColumn = (
      title: string,
      space: "pretrained" | "finetuned",
      rows: { id: string; score: number; cls: string | null; badge?: string }[],
    ) => {
      const column = el("div", {
        class: "ranking",
        "data-testid": `ranking-${space}`,
      });
      column.append(el("h3", {}, title));
      const list = el("ol", {});
      rows.forEach((row, idx) => {
        const item = el(
          "li",
          { "data-testid": `rank-row-${space}-${idx}`, "data-video": row.id },
          `${row.id}  (${row.score.toFixed(4)})`,
        );
        if (row.badge) item.append(el("span", { class: "movement" }, ` ${row.badge}`));
        if (this.state.showClassBadges && row.cls) {
          item.append(el("span", { class: "badge" }, row.cls));
        }
        list.append(item);
      });
      column.append(list);
      return column;
    };

    columns.append(
      renderColumn(
        "Pre-trained space",
        "pretrained",
        comparison.pretrained.results.map((r) => ({
          id: r.id,
          score: r.score,
          cls: r.class,
        })),
      ),
      renderColumn(
        "Fine-tuned space",
        "finetuned",
        changes.map(({ item, delta }) => ({
          id: item.id,
          score: item.score,
          cls: item.class,
          badge: movementBadge(delta),
        })),
      ),
    );
    panel.append(columns);
    return panel;
  }
}

/** Build the workbench UI inside `root`, wired to the service at `baseUrl`. */
export function createWorkbench(
  root: HTMLElement,
  baseUrl: string,
  pollIntervalMs = 400,
): Workbench {
  const api = new ApiClient(baseUrl);
  const bench = new Workbench(root, api, pollIntervalMs);
  bench.render();
  return bench;
}
