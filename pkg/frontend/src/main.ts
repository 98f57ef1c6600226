/**
 * Browser entry point: wires the session and connectivity models to a small
 * amount of DOM. All behavior worth testing lives in session.ts,
 * connectivity.ts, and api.ts; this file only renders state and forwards
 * events.
 */

import { ApiClient, ProjectInfo, SceneInfo } from "./api.js";
import { fetchPanel, PanelModel } from "./connectivity.js";
import { AnnotationSession, ViewTransform } from "./session.js";

const api = new ApiClient("");

interface AppState {
  project: ProjectInfo;
  scenes: SceneInfo[];
  sceneIndex: number;
  frame: number;
  session: AnnotationSession;
  view: ViewTransform;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function newSession(state: AppState): AnnotationSession {
  const scene = state.scenes[state.sceneIndex];
  if (scene === undefined) throw new Error("scene index out of range");
  return new AnnotationSession(
    state.project.keypoint_names,
    scene.width,
    scene.height,
  );
}

function renderKeypoints(state: AppState): void {
  const list = el<HTMLUListElement>("keypoints");
  list.replaceChildren(
    ...state.project.keypoint_names.map((name, i) => {
      const item = document.createElement("li");
      const status = state.session.statuses[i] ?? "unset";
      item.textContent = `${name} [${status}]`;
      item.className = i === state.session.armed ? "armed" : status;
      item.onclick = () => {
        state.session.rearm(i);
        renderKeypoints(state);
      };
      return item;
    }),
  );
  el<HTMLSpanElement>("pending-count").textContent =
    `${state.session.pending.length} unsaved`;
  const error = el<HTMLDivElement>("save-error");
  error.textContent = state.session.lastError ?? "";
  error.hidden = state.session.lastError === null;
}

function renderImage(state: AppState): void {
  const scene = state.scenes[state.sceneIndex];
  if (scene === undefined) return;
  const img = el<HTMLImageElement>("frame");
  img.src = api.colorFrameUrl(scene.scene_id, state.frame);
  img.style.transform =
    `translate(${state.view.panX}px, ${state.view.panY}px) scale(${state.view.zoom})`;
  img.style.transformOrigin = "0 0";
  el<HTMLSpanElement>("frame-label").textContent =
    `${scene.scene_id} frame ${state.frame}/${scene.frame_count - 1}`;
}

function renderPanel(panel: PanelModel): void {
  const box = el<HTMLDivElement>("connectivity");
  if (panel.kind !== "report") {
    box.replaceChildren();
    const banner = document.createElement("div");
    banner.className = panel.kind === "error" ? "banner-error" : "banner-offline";
    banner.textContent = panel.message;
    box.append(banner);
    return;
  }
  const rows = panel.rows.map((row) => {
    const div = document.createElement("div");
    div.textContent =
      `${row.label}: ${row.sharedKeypoints} shared` + (row.rigid ? "" : " (not rigid)");
    div.className = row.highlight ? "pair-nonrigid" : "pair-rigid";
    return div;
  });
  const summary = document.createElement("div");
  summary.className = panel.readyToSolve ? "summary-ready" : "summary-waiting";
  summary.textContent = panel.summary;
  box.replaceChildren(summary, ...rows);
  el<HTMLButtonElement>("solve").disabled = !panel.readyToSolve;
}

async function refreshPanel(): Promise<void> {
  renderPanel(await fetchPanel(api));
}

async function pollSolve(): Promise<void> {
  const label = el<HTMLSpanElement>("solve-status");
  for (;;) {
    const status = await api.getSolveStatus();
    if (status.state === "done") {
      const rms = status.rms_residual_m ?? NaN;
      label.textContent = `solved, rms ${(rms * 1000).toFixed(2)} mm`;
      return;
    }
    if (status.state === "error") {
      label.textContent = `solve failed: ${status.error}`;
      return;
    }
    label.textContent = status.state;
    if (status.state === "idle") return;
    await new Promise((resolve) => setTimeout(resolve, 500));
  }
}

async function start(): Promise<void> {
  const [project, scenes] = await Promise.all([api.getProject(), api.getScenes()]);
  const state: AppState = {
    project,
    scenes,
    sceneIndex: 0,
    frame: 0,
    session: new AnnotationSession(project.keypoint_names, 0, 0),
    view: { zoom: 1, panX: 0, panY: 0 },
  };
  state.session = newSession(state);

  const picker = el<HTMLSelectElement>("scene-picker");
  picker.replaceChildren(
    ...scenes.map((scene, i) => {
      const opt = document.createElement("option");
      opt.value = String(i);
      opt.textContent = scene.scene_id;
      return opt;
    }),
  );
  picker.onchange = () => {
    state.sceneIndex = Number(picker.value);
    state.frame = 0;
    state.session = newSession(state);
    renderImage(state);
    renderKeypoints(state);
  };

  const viewport = el<HTMLDivElement>("viewport");
  viewport.onclick = (ev: MouseEvent) => {
    const scene = state.scenes[state.sceneIndex];
    if (scene === undefined) return;
    const rect = viewport.getBoundingClientRect();
    const result = state.session.click(
      scene.scene_id,
      state.frame,
      ev.clientX - rect.left,
      ev.clientY - rect.top,
      state.view,
    );
    el<HTMLSpanElement>("click-cue").textContent = result.accepted
      ? ""
      : result.reason === "outside-image"
        ? "click landed outside the image"
        : "no keypoint armed";
    renderKeypoints(state);
  };
  viewport.onwheel = (ev: WheelEvent) => {
    ev.preventDefault();
    const factor = ev.deltaY < 0 ? 1.25 : 0.8;
    state.view.zoom = Math.min(16, Math.max(0.25, state.view.zoom * factor));
    renderImage(state);
  };

  el<HTMLButtonElement>("skip").onclick = () => {
    state.session.skip();
    renderKeypoints(state);
  };
  el<HTMLButtonElement>("save").onclick = async () => {
    await state.session.save(api);
    renderKeypoints(state);
    await refreshPanel();
  };
  el<HTMLButtonElement>("solve").onclick = async () => {
    try {
      await api.startSolve();
    } catch (err) {
      el<HTMLSpanElement>("solve-status").textContent = String(err);
      return;
    }
    await pollSolve();
  };
  el<HTMLButtonElement>("prev-frame").onclick = () => {
    state.frame = Math.max(0, state.frame - 1);
    renderImage(state);
  };
  el<HTMLButtonElement>("next-frame").onclick = () => {
    const scene = state.scenes[state.sceneIndex];
    if (scene === undefined) return;
    state.frame = Math.min(scene.frame_count - 1, state.frame + 1);
    renderImage(state);
  };

  el<HTMLSpanElement>("object-name").textContent = project.object_name;
  renderImage(state);
  renderKeypoints(state);
  await refreshPanel();
  setInterval(() => void refreshPanel(), 5000);
}

if (typeof document !== "undefined") {
  void start();
}
