import type {
  AnnotateResponse,
  DatasetSummary,
  JobView,
  Label,
  RetrievalResponse,
  Schematic,
  SessionView,
} from "./types";

/** Error carrying the service's machine-readable code and message. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public extra: Record<string, unknown> = {},
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let code = "unknown";
  let message = `${res.status} ${res.statusText}`;
  let extra: Record<string, unknown> = {};
  try {
    const body = await res.json();
    const detail = body?.detail;
    if (detail && typeof detail === "object") {
      code = detail.code ?? code;
      message = detail.message ?? message;
      extra = detail;
    } else if (typeof detail === "string") {
      message = detail;
    }
  } catch {
    // non-JSON error body: keep the status line
  }
  return new ApiError(res.status, code, message, extra);
}

export class ApiClient {
  constructor(public baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      throw await parseError(res);
    }
    return (await res.json()) as T;
  }

  listDatasets(): Promise<{ datasets: string[] }> {
    return this.request("/datasets");
  }

  getDataset(id: string): Promise<DatasetSummary> {
    return this.request(`/datasets/${encodeURIComponent(id)}`);
  }

  schematic(videoId: string, datasetId?: string): Promise<Schematic> {
    const query = datasetId ? `?dataset_id=${encodeURIComponent(datasetId)}` : "";
    return this.request(`/videos/${encodeURIComponent(videoId)}/schematic${query}`);
  }

  createSession(body: {
    dataset_id: string;
    query_ids: string[];
    selection?: Record<string, unknown>;
    seed?: number;
  }): Promise<SessionView> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getSession(id: string): Promise<SessionView> {
    return this.request(`/sessions/${encodeURIComponent(id)}`);
  }

  annotate(
    sessionId: string,
    annotations: { video_id: string; label: Label; annotator?: string }[],
  ): Promise<AnnotateResponse> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}/annotations`, {
      method: "POST",
      body: JSON.stringify({ annotations }),
    });
  }

  startFinetune(
    sessionId: string,
    config: Record<string, unknown> = {},
  ): Promise<{ job_id: string; session_id: string; status: string }> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}/finetune`, {
      method: "POST",
      body: JSON.stringify({ config }),
    });
  }

  getJob(id: string): Promise<JobView> {
    return this.request(`/jobs/${encodeURIComponent(id)}`);
  }

  retrieval(
    sessionId: string,
    queryId: string,
    k: number,
    space: "pretrained" | "finetuned",
  ): Promise<RetrievalResponse> {
    const params = new URLSearchParams({ query: queryId, k: String(k), space });
    return this.request(`/sessions/${encodeURIComponent(sessionId)}/retrieval?${params}`);
  }
}
