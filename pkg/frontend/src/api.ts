/**
 * Typed client for the design-service JSON API.
 *
 * The client never computes physics: every number the UI displays comes
 * back from one of these endpoints. Non-2xx responses are raised as
 * ServiceError with the HTTP status and the server's `detail` payload so
 * callers can render budget warnings (422) and job locks (409) distinctly
 * from generic failures.
 */

export interface MeshData {
  positions: number[][];
  triangles: number[][];
}

export interface ClutchSpecData {
  element: number;
  u: number;
  v: number;
  du: number;
  dv: number;
  length: number;
  width: number;
}

export interface ClutchData {
  spec: ClutchSpecData;
  mesh: MeshData;
}

export interface SceneData {
  garment: MeshData;
  pose_labels: string[];
  clutches: ClutchData[];
  design: number[];
  activation: number[];
  coverage: number;
  coverage_budget: number;
}

export interface SimulateData {
  pose: string;
  mode: string;
  converged: boolean;
  energy_total: number;
  energy_garment: number;
  densities: number[];
  garment_positions: number[][];
  clutch_positions: number[][][];
}

export interface ProgressRecordData {
  iteration: number;
  coverage: number;
  rho_on: number[];
  rho_off: number[];
  objective: number;
  snapshot_id: number;
  solver_converged: boolean;
}

export interface ProgressData {
  running: boolean;
  error: string | null;
  records: ProgressRecordData[];
}

export interface SnapshotData {
  iteration: number;
  design: number[];
}

export type ClutchEditAction = "create" | "update" | "delete";

export interface ClutchEditRequest {
  action: ClutchEditAction;
  index?: number;
  spec?: ClutchSpecData;
}

/** Error detail for a rejected paint request (HTTP 422). */
export interface BudgetRejection {
  detail: string;
  budget: number;
  current_coverage: number;
  attempted_coverage: number;
}

export class ServiceError extends Error {
  status: number;
  /** The server's `detail` field (string or validation errors). */
  detail: unknown;
  /** Full response body; 422 rejections carry budget fields beside `detail`. */
  body: unknown;

  constructor(status: number, body: unknown) {
    super(`service error ${status}: ${JSON.stringify(body)}`);
    this.status = status;
    this.body = body;
    this.detail = (body as { detail?: unknown })?.detail ?? body;
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiClient {
  private base: string;
  private fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? (fetch as unknown as FetchLike);
  }

  private async request<T>(path: string, method: string, body?: unknown): Promise<T> {
    const init: { method: string; headers?: Record<string, string>; body?: string } = {
      method,
    };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchImpl(this.base + path, init);
    const payload = await res.json();
    if (res.status < 200 || res.status >= 300) {
      throw new ServiceError(res.status, payload);
    }
    return payload as T;
  }

  getScene(): Promise<SceneData> {
    return this.request<SceneData>("/scene", "GET");
  }

  editClutch(edit: ClutchEditRequest): Promise<{ clutches: MeshData[] }> {
    return this.request("/clutch", "POST", edit);
  }

  paint(elements: number[], value: 0 | 1): Promise<{ coverage: number }> {
    return this.request("/design/paint", "POST", { elements, value });
  }

  simulate(pose: number, mode: "ON" | "OFF" | "CURRENT"): Promise<SimulateData> {
    return this.request("/simulate", "POST", { pose, mode });
  }

  startOptimize(budget?: number): Promise<{ started: boolean }> {
    return this.request("/optimize", "POST", budget === undefined ? {} : { budget });
  }

  getProgress(): Promise<ProgressData> {
    return this.request<ProgressData>("/optimize/progress", "GET");
  }

  getSnapshot(i: number): Promise<SnapshotData> {
    return this.request<SnapshotData>(`/optimize/snapshot/${i}`, "GET");
  }

  setActivation(gamma: number[]): Promise<{ activation: number[] }> {
    return this.request("/activation", "POST", { gamma });
  }
}
