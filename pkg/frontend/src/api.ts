/** Typed client for the inference service HTTP API. */

import type {
  ApiError,
  ContextItem,
  PredictResponse,
  ServiceInfo,
  SessionInfo,
  StrokeSet,
} from "./types.js";

export class ApiClientError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
    public retryAfter: number | null = null,
  ) {
    super(message);
  }
}

async function parseError(res: Response): Promise<never> {
  let body: ApiError = { code: "http_error", message: res.statusText };
  try {
    body = (await res.json()) as ApiError;
  } catch {
    /* non-JSON error body */
  }
  const retry = res.headers.get("Retry-After");
  throw new ApiClientError(body.code, body.message, res.status, retry ? Number(retry) : null);
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!res.ok) await parseError(res);
    if (res.status === 204) return undefined as T;
    return (await res.json()) as T;
  }

  info(): Promise<ServiceInfo> {
    return this.request("/api/info");
  }

  createSession(task: string, seed?: number, cueKind?: string): Promise<SessionInfo> {
    return this.request("/api/sessions", {
      method: "POST",
      body: JSON.stringify({ task, seed: seed ?? null, cue_kind: cueKind ?? null }),
    });
  }

  context(sessionId: string): Promise<{ id: string; context: ContextItem[] }> {
    return this.request(`/api/sessions/${sessionId}/context`);
  }

  predict(
    sessionId: string,
    query: { png?: string; corpus_index?: number },
    strokes: StrokeSet | null,
    mode: "single" | "tbt",
  ): Promise<PredictResponse> {
    return this.request(`/api/sessions/${sessionId}/predict`, {
      method: "POST",
      body: JSON.stringify({ query, strokes, mode }),
    });
  }

  deleteSession(sessionId: string): Promise<void> {
    return this.request(`/api/sessions/${sessionId}`, { method: "DELETE" });
  }
}
