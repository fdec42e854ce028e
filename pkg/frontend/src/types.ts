// Shapes of the service API payloads the UI touches.

export interface SessionStats {
  session_id: string;
  dataset_id: string;
  total: number;
  counts: Record<string, number>;
  acceptance_rate: number;
  prompts: number;
  quality?: {
    mean_iou: number;
    recall: number;
    coverage_rate: number;
    images: number;
    ious?: number[];
  };
}

export interface ItemSummary {
  image_id: string;
  state: string;
  attempted_prompt_ids: string[];
  has_candidate: boolean;
}

export interface ItemDetail {
  image_id: string;
  state: string;
  attempted_prompt_ids: string[];
  history: [string, number, string][];
  candidate_overlay_png?: string; // base64
  palette?: { colors: number[][]; separation: number };
}

export interface Stroke {
  points: [number, number][]; // [x, y] in native image pixels
  radius: number;
}

export interface PromptResponse {
  prompt_id: string;
  kind: string;
  pixel_count: number;
  pixels?: [number, number][]; // [row, col], present for small scribbles
}

export interface JobDescriptor {
  job_id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  result: Record<string, unknown> | null;
  error: string | null;
}

export interface ApiErrorBody {
  error: { code: string; message: string; field?: string };
}
