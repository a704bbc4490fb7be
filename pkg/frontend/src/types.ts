/** Payload shapes of the retrieval service API. The UI never invents domain
 * values: every id, score and rank shown on screen comes from one of these. */

export type SessionState =
  | "created"
  | "awaiting_annotations"
  | "finetuning"
  | "ready"
  | "failed";

export type Label = "positive" | "negative";

export interface ClassCount {
  name: string;
  count: number;
}

export interface VideoMeta {
  id: string;
  split: "train" | "test";
  class: string | null;
  frames: number;
  persons: number;
}

export interface DatasetSummary {
  id: string;
  feature_dim: number;
  video_count: number;
  classes: ClassCount[];
  videos: VideoMeta[];
}

export interface Schematic {
  id: string;
  dataset_id: string;
  class: string | null;
  split: string;
  frames: number;
  persons: number;
  /** frames x persons x [x, y], normalized court coordinates. */
  positions: number[][][];
}

export interface SelectionRow {
  query_id: string;
  query_index: number;
  video_id: string;
  similarity: number;
  dissimilarity: number;
  informative: number;
  rank: number;
  chosen: boolean;
}

export interface AnnotationRecord {
  video_id: string;
  label: Label;
  annotator: string | null;
  timestamp: number;
}

export interface LossReport {
  stop_reason: string;
  /** rows of [epoch, total, contrastive, regularization]. */
  epochs: number[][];
}

export interface SessionView {
  id: string;
  dataset_id: string;
  seed: number;
  state: SessionState;
  query_ids: string[];
  selection_config: Record<string, unknown>;
  extended_ids: string[];
  selected_ids: string[];
  selection_rows: SelectionRow[];
  annotations: AnnotationRecord[];
  loss_report: LossReport | null;
  has_finetuned_params: boolean;
  error: string | null;
}

export interface AnnotateResponse {
  session: SessionView;
  labeled: string[];
  missing: string[];
  ready_for_finetune: boolean;
}

export interface JobView {
  id: string;
  session_id: string;
  status: "running" | "completed" | "failed";
  error: string | null;
  loss_report: LossReport | null;
}

export interface RetrievalItem {
  rank: number;
  id: string;
  score: number;
  class: string | null;
}

export interface RetrievalResponse {
  session_id: string;
  query_id: string;
  space: "pretrained" | "finetuned";
  k: number;
  results: RetrievalItem[];
}
