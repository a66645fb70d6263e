// Typed client for the session HTTP API. Field names mirror docs/api.md
// exactly; the console never invents state the server did not confirm.

export interface Ticket {
  ticket_id: string;
  pair: [number, number];
  class_names: [string, string];
  prompt: string;
  jsd: number;
}

export interface Metrics {
  round: number;
  fine_accuracy: number;
  coarse_accuracy: number;
  per_class: number[];
  train_losses: Record<string, number>;
}

export interface Group {
  group_id: number;
  members: number[];
  class_names: string[];
}

export interface Architecture {
  num_classes: number;
  arity: number;
  round: number;
  groups: Group[];
  nodes: { kind: string; ref: number }[];
}

export interface SessionView {
  session_id: string;
  phase: string;
  k: number;
  b: number;
  mode: string;
  seed: number;
  dataset: string;
  rounds_completed: number;
  exhausted: boolean;
  tickets: Ticket[];
  metrics: Metrics[];
  architecture: Architecture;
  patches_created: number;
}

export interface NewSessionResult {
  session_id: string;
  phase: string;
  round0: Metrics;
  tickets: Ticket[];
}

export interface ExplanationOutcome {
  ticket_id: string;
  status: "ok" | "error" | "skipped";
  segments?: string[];
  grounded_segments?: string[];
  error?: string;
}

export interface AdvanceResult {
  metrics: Metrics;
  tickets: Ticket[];
  done: boolean;
}

export interface SaliencyView {
  sample_id: number;
  fine_label: number;
  class: number;
  h: number;
  w: number;
  grid: number[][];
}

export type AnswerItem =
  | { ticket_id: string; text: string }
  | { ticket_id: string; skip: true };

export interface SessionConfigBody {
  dataset: string;
  k?: number;
  b?: number;
  mode?: string;
  seed?: number;
  epochs?: number;
  m_queries?: number;
  [extra: string]: unknown;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const err = (payload as { error?: { code?: string; message?: string } }).error ?? {};
      throw new ApiError(resp.status, err.code ?? "unknown", err.message ?? resp.statusText);
    }
    return payload as T;
  }

  createSession(config: SessionConfigBody): Promise<NewSessionResult> {
    return this.request("POST", "/sessions", config);
  }

  getSession(id: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${id}`);
  }

  getQueries(id: string): Promise<{ tickets: Ticket[] }> {
    return this.request("GET", `/sessions/${id}/queries`);
  }

  getMetrics(id: string): Promise<{ history: Metrics[] }> {
    return this.request("GET", `/sessions/${id}/metrics`);
  }

  getArchitecture(id: string): Promise<Architecture> {
    return this.request("GET", `/sessions/${id}/architecture`);
  }

  getSaliency(id: string, sample: number, klass: number | string): Promise<SaliencyView> {
    const params = new URLSearchParams({ sample: String(sample), class: String(klass) });
    return this.request("GET", `/sessions/${id}/saliency?${params.toString()}`);
  }

  submitExplanations(id: string, items: AnswerItem[]): Promise<{ results: ExplanationOutcome[] }> {
    return this.request("POST", `/sessions/${id}/explanations`, items);
  }

  advance(id: string): Promise<AdvanceResult> {
    return this.request("POST", `/sessions/${id}/advance`);
  }
}
