/** Wire types of the classification service. */

export const CLASS_LABELS = ["normal", "bacteria", "virus", "mycoplasma"] as const;
export type ClassLabel = (typeof CLASS_LABELS)[number];

export type CamMethod = "gap_head" | "score_cam";

export interface PreprocessingEcho {
  clahe_clip: number;
  clahe_grid: [number, number];
  normalize_mean: number[];
  normalize_std: number[];
}

export interface ClassifyResponse {
  probabilities: Record<ClassLabel, number>;
  predicted: ClassLabel;
  model: string;
  preprocessing: PreprocessingEcho;
  latency_ms: number;
}

export interface ExplainResponse extends ClassifyResponse {
  heatmap_png: string;
  overlay_png: string;
  cam: { method: CamMethod; layer: string; top_k: number | null };
  target: ClassLabel;
}

export interface ModelInfo {
  architecture: string;
  class_labels: string[];
  parameter_count: number;
  flops: number;
  weight_file_digest: string;
}

export interface HealthStatus {
  status: "ok" | "degraded";
  uptime_s: number;
}

/** Everything the clinician can steer; values always pass through clampControls. */
export interface ControlState {
  method: CamMethod;
  target: ClassLabel | null; // null = explain the predicted class
  topK: number | null; // null = all channels
  overlayAlpha: number; // applied client-side, [0, 1]
  claheClip: number; // (0, 8]
  claheGrid: [number, number]; // each in [2, 16]
}

export interface HistoryEntry {
  controls: ControlState;
  response: ExplainResponse;
  at: number;
}
