/**
 * Typed client for the kplabel annotation service.
 *
 * Every response is validated with zod before it reaches the UI, so a
 * misbehaving server surfaces as a structured error instead of undefined
 * properties deep in rendering code. The fetch implementation is injectable
 * for tests.
 */

import { z } from "zod";

export const ProjectInfoSchema = z.object({
  object_name: z.string(),
  keypoint_names: z.array(z.string()),
  n_keypoints: z.number().int().nonnegative(),
  scenes: z.array(z.string()),
});
export type ProjectInfo = z.infer<typeof ProjectInfoSchema>;

export const SceneInfoSchema = z.object({
  scene_id: z.string(),
  frame_count: z.number().int().nonnegative(),
  fps: z.number(),
  width: z.number().int().positive(),
  height: z.number().int().positive(),
});
export type SceneInfo = z.infer<typeof SceneInfoSchema>;

export const ConnectivityReportSchema = z.object({
  pairs: z.array(
    z.object({
      scenes: z.tuple([z.string(), z.string()]),
      shared_keypoints: z.number().int().nonnegative(),
      rigid: z.boolean(),
    }),
  ),
  components: z.array(z.array(z.string())),
  solvable: z.boolean(),
  lift_failures: z.number().int().nonnegative(),
});
export type ConnectivityReport = z.infer<typeof ConnectivityReportSchema>;

export const SolveStatusSchema = z.object({
  state: z.enum(["idle", "running", "done", "error"]),
  rms_residual_m: z.number().nullable(),
  iterations: z.number().int().nullable(),
  error: z.string().nullable(),
});
export type SolveStatus = z.infer<typeof SolveStatusSchema>;

export interface ClickOut {
  scene: string;
  frame: number;
  keypoint: number;
  u: number;
  v: number;
  timestamp?: number;
  author?: string;
}

/** Raised when the server answers with a non-2xx status. `detail` carries the
 * server's explanation (for 400s, the violated invariant) for inline display. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  arrayBuffer(): Promise<ArrayBuffer>;
}>;

async function raiseForStatus(resp: Awaited<ReturnType<FetchLike>>): Promise<void> {
  if (resp.ok) return;
  let detail = `status ${resp.status}`;
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the generic detail
  }
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async getJson<T>(path: string, schema: z.ZodType<T>): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path);
    await raiseForStatus(resp);
    return schema.parse(await resp.json());
  }

  getProject(): Promise<ProjectInfo> {
    return this.getJson("/api/project", ProjectInfoSchema);
  }

  getScenes(): Promise<SceneInfo[]> {
    return this.getJson("/api/scenes", z.array(SceneInfoSchema));
  }

  getConnectivity(): Promise<ConnectivityReport> {
    return this.getJson("/api/connectivity", ConnectivityReportSchema);
  }

  getSolveStatus(): Promise<SolveStatus> {
    return this.getJson("/api/solve/status", SolveStatusSchema);
  }

  colorFrameUrl(sceneId: string, frame: number): string {
    return `${this.baseUrl}/api/scenes/${encodeURIComponent(sceneId)}/frames/${frame}/color`;
  }

  async postAnnotation(click: ClickOut): Promise<void> {
    const resp = await this.fetchImpl(this.baseUrl + "/api/annotations", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(click),
    });
    await raiseForStatus(resp);
  }

  async startSolve(): Promise<void> {
    const resp = await this.fetchImpl(this.baseUrl + "/api/solve", {
      method: "POST",
    });
    await raiseForStatus(resp);
  }
}
