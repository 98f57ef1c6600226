/**
 * Annotation session state for one scene.
 *
 * The session walks the keypoint vocabulary in order: exactly one keypoint is
 * armed at a time, a click or a skip advances to the next keypoint that has
 * no click yet, and any keypoint can be re-armed to redo it. Clicks are
 * stored in full-resolution image coordinates regardless of the current zoom
 * and pan, so the saved annotation file never depends on how the annotator
 * had the viewer configured. Saving posts only the clicks the user actually
 * made; nothing is fabricated for skipped keypoints.
 */

import { ApiClient, ApiError } from "./api.js";

export type KeypointStatus = "unset" | "set" | "skipped";

export interface ViewTransform {
  /** Display pixels per image pixel. */
  zoom: number;
  /** Display-space offset of the image origin. */
  panX: number;
  panY: number;
}

export interface PendingClick {
  scene: string;
  frame: number;
  keypoint: number;
  /** Image-space pixel coordinates (full resolution, zoom independent). */
  u: number;
  v: number;
}

export type ClickResult =
  | { accepted: true; keypoint: number; u: number; v: number }
  | { accepted: false; reason: "outside-image" | "nothing-armed" };

/** Convert a display-space point to image-space under a view transform. */
export function displayToImage(
  displayX: number,
  displayY: number,
  view: ViewTransform,
): { u: number; v: number } {
  return {
    u: (displayX - view.panX) / view.zoom,
    v: (displayY - view.panY) / view.zoom,
  };
}

export class AnnotationSession {
  readonly statuses: KeypointStatus[];
  readonly pending: PendingClick[] = [];
  /** Index of the armed keypoint, or null when the pass is finished. */
  armed: number | null;
  /** Inline error from the last failed save, or null. */
  lastError: string | null = null;

  constructor(
    readonly keypointNames: string[],
    readonly imageWidth: number,
    readonly imageHeight: number,
  ) {
    this.statuses = keypointNames.map(() => "unset");
    this.armed = keypointNames.length > 0 ? 0 : null;
  }

  /** Next keypoint without a click, scanning forward from `after` and
   * wrapping, so a re-armed redo resumes the ordered pass afterwards. */
  private nextUnset(after: number): number | null {
    const n = this.statuses.length;
    for (let step = 1; step <= n; step += 1) {
      const i = (after + step) % n;
      if (this.statuses[i] === "unset") return i;
    }
    return null;
  }

  click(
    scene: string,
    frame: number,
    displayX: number,
    displayY: number,
    view: ViewTransform,
  ): ClickResult {
    if (this.armed === null) return { accepted: false, reason: "nothing-armed" };
    const { u, v } = displayToImage(displayX, displayY, view);
    if (u < 0 || v < 0 || u >= this.imageWidth || v >= this.imageHeight) {
      return { accepted: false, reason: "outside-image" };
    }
    const keypoint = this.armed;
    // Redoing a keypoint replaces its pending click instead of stacking.
    const existing = this.pending.findIndex((p) => p.keypoint === keypoint);
    if (existing >= 0) this.pending.splice(existing, 1);
    this.pending.push({ scene, frame, keypoint, u, v });
    this.statuses[keypoint] = "set";
    this.armed = this.nextUnset(keypoint);
    return { accepted: true, keypoint, u, v };
  }

  /** Mark the armed keypoint as skipped and advance. Produces no entry. */
  skip(): void {
    if (this.armed === null) return;
    this.statuses[this.armed] = "skipped";
    this.armed = this.nextUnset(this.armed);
  }

  /** Arm a specific keypoint (redo); its previous status is cleared. */
  rearm(keypoint: number): void {
    if (keypoint < 0 || keypoint >= this.statuses.length) {
      throw new RangeError(`keypoint ${keypoint} outside vocabulary`);
    }
    if (this.statuses[keypoint] === "skipped") this.statuses[keypoint] = "unset";
    this.armed = keypoint;
  }

  /**
   * POST pending clicks in order. Stops at the first server rejection,
   * keeping the failed click (and everything after it) pending and exposing
   * the server's detail through `lastError` for inline display.
   */
  async save(api: ApiClient): Promise<{ saved: number; failed: boolean }> {
    this.lastError = null;
    let saved = 0;
    while (this.pending.length > 0) {
      const next = this.pending[0]!;
      try {
        await api.postAnnotation(next);
      } catch (err) {
        this.lastError =
          err instanceof ApiError ? err.detail : String(err);
        return { saved, failed: true };
      }
      this.pending.shift();
      saved += 1;
    }
    return { saved, failed: false };
  }
}
