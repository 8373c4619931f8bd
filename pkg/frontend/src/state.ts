/**
 * Workspace state: a thin store over the service session plus the local
 * editing knobs. The round history is always a pure render of the last
 * GET /sessions/{id} payload; the only client-side state is which round
 * is "current" (for branch-free re-editing) and the in-progress controls.
 */

import type { PlanPayload, RoundPayload, SessionPayload } from "./api";

export type Tool = "brush" | "eraser";

export interface Controls {
  preservationScale: number; // "w", [0, 1]
  blurRadius: number;
  seed: number;
  steps: number;
  brushRadius: number;
  tool: Tool;
}

export interface Workspace {
  sessionId: string | null;
  session: SessionPayload | null;
  planRef: string | null;
  plan: PlanPayload | null;
  caption: string; // editable; seeded from the plan
  maskDirty: boolean; // user repainted the proposed mask
  currentRef: string | null; // image the next round edits (promotable)
  busy: boolean; // one in-flight round per session tab
  error: string | null;
  controls: Controls;
}

export const initialWorkspace: Workspace = {
  sessionId: null,
  session: null,
  planRef: null,
  plan: null,
  caption: "",
  maskDirty: false,
  currentRef: null,
  busy: false,
  error: null,
  controls: {
    preservationScale: 1.0,
    blurRadius: 7,
    seed: 0,
    steps: 10,
    brushRadius: 6,
    tool: "brush",
  },
};

type Listener = (ws: Workspace) => void;

export class WorkspaceStore {
  private ws: Workspace = initialWorkspace;
  private listeners: Listener[] = [];

  get(): Workspace {
    return this.ws;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  update(patch: Partial<Workspace>): Workspace {
    this.ws = { ...this.ws, ...patch };
    for (const fn of this.listeners) fn(this.ws);
    return this.ws;
  }

  updateControls(patch: Partial<Controls>): Workspace {
    return this.update({ controls: { ...this.ws.controls, ...patch } });
  }

  /** Apply a fresh session payload; keeps the user's promoted current. */
  setSession(session: SessionPayload): Workspace {
    const currentRef = this.ws.currentRef ?? latestResultRef(session);
    return this.update({ sessionId: session.id, session, currentRef });
  }

  adoptPlan(planRef: string, plan: PlanPayload): Workspace {
    return this.update({
      planRef, plan, caption: plan.target_caption, maskDirty: false,
      error: null,
    });
  }

  /** Promote any prior round's result to be the next round's source. */
  promote(ref: string): Workspace {
    return this.update({ currentRef: ref, planRef: null, plan: null });
  }
}

export function latestResultRef(session: SessionPayload): string {
  for (let i = session.rounds.length - 1; i >= 0; i--) {
    const round = session.rounds[i];
    if (round && round.status === "done" && round.result_ref) {
      return round.result_ref;
    }
  }
  return session.source_ref;
}

export function doneRounds(session: SessionPayload): RoundPayload[] {
  return session.rounds.filter((r) => r.status === "done");
}

/** Caption override only when the user actually changed it. */
export function captionOverride(ws: Workspace): string | undefined {
  if (!ws.plan) return ws.caption || undefined;
  return ws.caption !== ws.plan.target_caption ? ws.caption : undefined;
}
