// Console state mirrors the server; it changes only when a server
// response is applied (no optimistic updates).

import type {
  AdvanceResult,
  Architecture,
  ExplanationOutcome,
  Metrics,
  SessionView,
  Ticket,
} from "./api.js";

export interface ConsoleState {
  sessionId: string | null;
  phase: string;
  k: number;
  roundsCompleted: number;
  mode: string;
  dataset: string;
  exhausted: boolean;
  tickets: Ticket[];
  metrics: Metrics[];
  architecture: Architecture | null;
  patchesCreated: number;
  outcomes: Record<string, ExplanationOutcome>;
  connected: boolean;
  busy: boolean;
}

export function emptyState(): ConsoleState {
  return {
    sessionId: null,
    phase: "",
    k: 0,
    roundsCompleted: 0,
    mode: "",
    dataset: "",
    exhausted: false,
    tickets: [],
    metrics: [],
    architecture: null,
    patchesCreated: 0,
    outcomes: {},
    connected: true,
    busy: false,
  };
}

export function applySession(state: ConsoleState, view: SessionView): ConsoleState {
  const live = new Set(view.tickets.map((t) => t.ticket_id));
  const outcomes: Record<string, ExplanationOutcome> = {};
  for (const [tid, outcome] of Object.entries(state.outcomes)) {
    if (live.has(tid) || outcome.status === "ok" || outcome.status === "skipped") {
      outcomes[tid] = outcome;
    }
  }
  return {
    ...state,
    sessionId: view.session_id,
    phase: view.phase,
    k: view.k,
    roundsCompleted: view.rounds_completed,
    mode: view.mode,
    dataset: view.dataset,
    exhausted: view.exhausted,
    tickets: view.tickets,
    metrics: view.metrics,
    architecture: view.architecture,
    patchesCreated: view.patches_created,
    outcomes,
    connected: true,
  };
}

export function applyOutcomes(
  state: ConsoleState,
  results: ExplanationOutcome[],
): ConsoleState {
  const outcomes = { ...state.outcomes };
  for (const result of results) outcomes[result.ticket_id] = result;
  // tickets stay as-is: the follow-up session refresh decides what is
  // still pending
  return { ...state, outcomes };
}

export function applyAdvance(state: ConsoleState, result: AdvanceResult): ConsoleState {
  return {
    ...state,
    metrics: [...state.metrics, result.metrics],
    tickets: result.tickets,
    roundsCompleted: result.metrics.round,
    phase: result.done ? "done" : "awaiting-explanations",
    outcomes: {},
  };
}

export function connectionLost(state: ConsoleState): ConsoleState {
  return { ...state, connected: false };
}

export function isDone(state: ConsoleState): boolean {
  return state.phase === "done";
}

export function pendingCount(state: ConsoleState): number {
  return state.tickets.length;
}
