// Thin typed client over the service HTTP API. Every UI state change flows
// through these calls; nothing is computed client-side that the server owns.

import {
  ApiErrorBody, ItemDetail, ItemSummary, JobDescriptor, PromptResponse,
  SessionStats, Stroke,
} from "./types.js";

export class ApiError extends Error {
  code: string;
  status: number;
  field?: string;

  constructor(status: number, body: ApiErrorBody["error"]) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.field = body.field;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(private base = "", private fetchImpl: FetchLike = fetch.bind(globalThis)) {}

  private async request<T>(method: string, path: string, body?: unknown,
                           headers: Record<string, string> = {}): Promise<T> {
    const init: RequestInit = { method, headers: { ...headers } };
    if (body !== undefined) {
      (init.headers as Record<string, string>)["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let parsed: ApiErrorBody | null = null;
      try {
        parsed = (await resp.json()) as ApiErrorBody;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status,
        parsed?.error ?? { code: "HttpError", message: `HTTP ${resp.status}` });
    }
    return (await resp.json()) as T;
  }

  listDatasetImages(datasetId: string) {
    return this.request<{ dataset_id: string; class_names: string[];
      images: { image_id: string; labeled: boolean; split: string }[] }>(
      "GET", `/datasets/${datasetId}`);
  }

  imageUrl(datasetId: string, imageId: string): string {
    return `${this.base}/datasets/${datasetId}/images/${imageId}`;
  }

  createSession(datasetId: string): Promise<{ session_id: string }> {
    return this.request("POST", "/sessions", { dataset_id: datasetId });
  }

  sessionStats(sessionId: string): Promise<SessionStats> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  listItems(sessionId: string, state?: string, page = 1, pageSize = 50) {
    const query = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (state) query.set("item_state", state);
    return this.request<{ total: number; items: ItemSummary[] }>(
      "GET", `/sessions/${sessionId}/items?${query}`);
  }

  itemDetail(sessionId: string, imageId: string): Promise<ItemDetail> {
    return this.request("GET", `/sessions/${sessionId}/items/${imageId}`);
  }

  submitPrompt(sessionId: string, imageId: string, classId: number,
               strokes: Stroke[]): Promise<PromptResponse> {
    return this.request("POST", `/sessions/${sessionId}/prompts`, {
      image_id: imageId, class_id: classId, strokes,
    });
  }

  launchAutolabel(sessionId: string, promptId: string,
                  itemIds: string[]): Promise<JobDescriptor> {
    return this.request("POST", `/sessions/${sessionId}/jobs`, {
      kind: "autolabel", prompt_id: promptId, item_ids: itemIds,
    });
  }

  job(jobId: string): Promise<JobDescriptor> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  async waitForJob(jobId: string, pollMs = 300, timeoutMs = 120_000): Promise<JobDescriptor> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.job(jobId);
      if (job.state === "done" || job.state === "failed") return job;
      if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`);
      await new Promise((r) => setTimeout(r, pollMs));
    }
  }

  submitReview(sessionId: string, itemId: string, verdict: "approve" | "reject",
               idempotencyKey: string) {
    return this.request<{ image_id: string; state: string }>(
      "POST", `/sessions/${sessionId}/reviews`,
      { item_id: itemId, verdict },
      { "Idempotency-Key": idempotencyKey });
  }

  exportUrl(sessionId: string): string {
    return `${this.base}/sessions/${sessionId}/export`;
  }
}
