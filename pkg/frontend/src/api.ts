/** Typed client for the shape-space HTTP API. Only the documented endpoints
 *  are used; every response's content hash header is surfaced for caching
 *  and determinism checks. */

export interface PosePreset {
  name: string;
  theta: number[][]; // per-joint axis-angle rows
}

export interface ApiInfo {
  category: string;
  N: number;
  n: number;
  sigma: number[];
  pose_presets: PosePreset[];
  joint_names: string[];
  n_joints: number;
  resolution: number;
}

export interface MeshPayload {
  vertices: number[][];
  faces: number[][];
  mask_texels?: number;
  collision_violations?: number;
}

export interface InferResult {
  s: number[];
  residual: number;
  residual_flag: boolean;
}

export interface ApiError {
  error: string;
  error_id: string;
}

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly errorId: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class StudioApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<{ body: T; hash: string }> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const hash = res.headers.get("X-Content-Hash") ?? "";
    if (!res.ok) {
      let detail: ApiError | null = null;
      try {
        detail = (await res.json()) as ApiError;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiRequestError(res.status, detail?.error_id ?? "", detail?.error ?? res.statusText);
    }
    return { body: (await res.json()) as T, hash };
  }

  private post<T>(path: string, payload: unknown): Promise<{ body: T; hash: string }> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async info(): Promise<ApiInfo> {
    return (await this.request<ApiInfo>("/api/info")).body;
  }

  decode(s: number[]): Promise<{ body: MeshPayload; hash: string }> {
    return this.post<MeshPayload>("/api/decode", { s });
  }

  animate(s: number[], theta: number[], beta: number[]): Promise<{ body: MeshPayload; hash: string }> {
    return this.post<MeshPayload>("/api/animate", { s, theta, beta });
  }

  async interpolate(a: number[], b: number[], steps: number): Promise<MeshPayload[]> {
    const r = await this.post<{ meshes: MeshPayload[] }>("/api/interpolate", { a, b, steps });
    return r.body.meshes;
  }

  async infer(garmentObjBase64: string, humanObjBase64: string): Promise<InferResult> {
    const r = await this.post<InferResult>("/api/infer", {
      garment_obj: garmentObjBase64,
      human_obj: humanObjBase64,
    });
    return r.body;
  }
}
