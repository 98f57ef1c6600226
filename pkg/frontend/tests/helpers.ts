import type { FetchLike } from "../src/api.js";

export interface RecordedRequest {
  url: string;
  method: string;
  body: unknown;
}

export function jsonResponse(status: number, body: unknown) {
  return {
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
    arrayBuffer: async () => new ArrayBuffer(0),
  };
}

/** Fake fetch that routes by "METHOD url" and records every request. */
export function fakeFetch(
  routes: Record<string, (body: unknown) => ReturnType<typeof jsonResponse>>,
  log: RecordedRequest[] = [],
): FetchLike {
  return async (url, init) => {
    const method = init?.method ?? "GET";
    const body = init?.body === undefined ? undefined : JSON.parse(init.body);
    log.push({ url, method, body });
    const handler = routes[`${method} ${url}`];
    if (handler === undefined) return jsonResponse(404, { detail: `no route ${url}` });
    return handler(body);
  };
}

export const PROJECT_FIXTURE = {
  object_name: "toy_box",
  keypoint_names: [
    "corner_000", "corner_001", "corner_010", "corner_011",
    "corner_100", "corner_101", "corner_110", "corner_111",
    "top_center",
  ],
  n_keypoints: 9,
  scenes: ["scene_00", "scene_01", "scene_02"],
};

export const RIGID_CONNECTIVITY_FIXTURE = {
  pairs: [
    { scenes: ["scene_00", "scene_01"], shared_keypoints: 7, rigid: true },
    { scenes: ["scene_00", "scene_02"], shared_keypoints: 6, rigid: true },
    { scenes: ["scene_01", "scene_02"], shared_keypoints: 7, rigid: true },
  ],
  components: [["scene_00", "scene_01", "scene_02"]],
  solvable: true,
  lift_failures: 0,
};

export const NONRIGID_CONNECTIVITY_FIXTURE = {
  pairs: [
    { scenes: ["scene_00", "scene_01"], shared_keypoints: 7, rigid: true },
    { scenes: ["scene_00", "scene_02"], shared_keypoints: 3, rigid: false },
    { scenes: ["scene_01", "scene_02"], shared_keypoints: 7, rigid: true },
  ],
  components: [["scene_00", "scene_01", "scene_02"]],
  solvable: true,
  lift_failures: 0,
};

export const DISCONNECTED_CONNECTIVITY_FIXTURE = {
  pairs: [
    { scenes: ["scene_00", "scene_01"], shared_keypoints: 7, rigid: true },
  ],
  components: [["scene_00", "scene_01"], ["scene_02"]],
  solvable: false,
  lift_failures: 2,
};
