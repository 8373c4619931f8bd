/**
 * Typed client for the editing service. Mirrors the documented endpoint
 * contract one-to-one; no pixel math happens on this side of the wire.
 */

export interface ApiError {
  code: "validation" | "not_found" | "stage_failure" | "model_error";
  message: string;
  stage?: string;
}

export class ServiceError extends Error {
  readonly api: ApiError;
  readonly status: number;

  constructor(status: number, api: ApiError) {
    super(api.message);
    this.status = status;
    this.api = api;
  }
}

export interface PlanPayload {
  edit_type: "addition" | "removal" | "local_edit" | "background_edit";
  target_object: string;
  mask_ref: string;
  target_caption: string;
  confidence: number;
  anchor?: string;
  low_confidence?: boolean;
}

export interface PlanResponse {
  plan_ref: string;
  plan: PlanPayload;
}

export interface RoundPayload {
  index: number;
  plan_ref: string;
  plan: PlanPayload;
  overrides: Record<string, unknown>;
  seed: number;
  steps: number;
  w: number;
  blur_radius: number;
  status: "done" | "failed" | "pending";
  result_ref: string | null;
  mask_ref: string | null;
  source_ref: string | null;
  caption_used: string | null;
  timing_ms: number | null;
  denoiser_evals: number | null;
  error: ApiError | null;
}

export interface SessionPayload {
  id: string;
  created_at: string;
  source_ref: string;
  rounds: RoundPayload[];
}

export interface RoundRequest {
  plan_ref?: string;
  /** Manual round: inline plan when detection found nothing and the user
   * drew the mask themselves (mask_ref as a data URI). */
  plan?: PlanPayload;
  overrides?: { mask_b64?: string; caption?: string };
  w?: number;
  blur_radius?: number;
  seed?: number;
  steps?: number;
}

async function parseError(resp: Response): Promise<never> {
  let api: ApiError;
  try {
    api = (await resp.json()) as ApiError;
  } catch {
    api = { code: "model_error", message: `HTTP ${resp.status}` };
  }
  throw new ServiceError(resp.status, api);
}

export class EditingService {
  constructor(readonly baseUrl: string = "") {}

  artifactUrl(ref: string): string {
    return `${this.baseUrl}/artifacts/${ref}`;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  async createSession(imagePngB64: string): Promise<{ session_id: string; source_ref: string }> {
    return this.post("/sessions", { image_b64: imagePngB64 });
  }

  async getSession(id: string): Promise<SessionPayload> {
    const resp = await fetch(`${this.baseUrl}/sessions/${id}`);
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as SessionPayload;
  }

  async plan(sessionId: string, instruction: string): Promise<PlanResponse> {
    return this.post(`/sessions/${sessionId}/plan`, { instruction });
  }

  async runRound(sessionId: string, req: RoundRequest): Promise<RoundPayload> {
    return this.post(`/sessions/${sessionId}/rounds`, req);
  }

  async fetchArtifact(ref: string): Promise<Uint8Array> {
    const resp = await fetch(this.artifactUrl(ref));
    if (!resp.ok) await parseError(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }
}
