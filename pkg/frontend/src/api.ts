/**
 * Typed client for the inference service.
 *
 * Decode requests (predict/refine) share one cancellation slot: a new
 * request aborts any still-pending one, so the view only ever reflects the
 * analyst's latest action.
 */

export interface LocationDoc {
  kind: "register" | "stack";
  name?: string | null;
  offset?: number | null;
}

export interface LayoutDoc {
  location?: LocationDoc | null;
  size?: number | null;
  offsets?: number[];
}

export interface VariableDoc {
  decompiler_name: string;
  occurrences: number[];
  layout?: LayoutDoc | null;
  decompiler_type?: string | null;
}

export interface FunctionDoc {
  binary_id?: string;
  function_id?: string;
  tokens: string[];
  variables: VariableDoc[];
}

export interface CandidateDoc {
  type_id: number | null;
  type: string | null;
  name_id: number | null;
  name: string | null;
  log_prob: number;
}

export interface VariablePanel {
  index: number;
  decompiler_name: string;
  layout_tokens: string[];
  truncated_out: boolean;
  candidates: CandidateDoc[];
}

export interface PredictResponse {
  variables: VariablePanel[];
  warnings: string[];
}

export interface ConstraintSpec {
  type_id?: number;
  name_id?: number;
}

export type ConstraintMap = Record<number, ConstraintSpec>;

export type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

const DECODE_SLOT = "decode";

export class ApiClient {
  private pending = new Map<string, AbortController>();

  constructor(
    public baseUrl: string = "http://127.0.0.1:8571",
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async post<T>(path: string, body: unknown, slot?: string): Promise<T> {
    const init: RequestInit = {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    };
    if (slot !== undefined) {
      this.pending.get(slot)?.abort();
      const controller = new AbortController();
      this.pending.set(slot, controller);
      init.signal = controller.signal;
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const parsed = (await response.json()) as { detail?: unknown };
        if (parsed.detail !== undefined) detail = JSON.stringify(parsed.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  predict(fn: FunctionDoc, beamWidth = 5, topK = 5): Promise<PredictResponse> {
    return this.post(
      "/v1/predict",
      { function: fn, beam_width: beamWidth, top_k: topK },
      DECODE_SLOT,
    );
  }

  refine(
    fn: FunctionDoc,
    constraints: ConstraintMap,
    beamWidth = 5,
    topK = 5,
  ): Promise<PredictResponse> {
    return this.post(
      "/v1/refine",
      { function: fn, beam_width: beamWidth, top_k: topK, constraints },
      DECODE_SLOT,
    );
  }

  async health(): Promise<{ status: string; model_loaded: boolean }> {
    const response = await this.fetchFn(this.baseUrl + "/v1/health", { method: "GET" });
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return (await response.json()) as { status: string; model_loaded: boolean };
  }
}
