import type { ControlState } from "./types.js";

/** Documented service ranges; the UI must never send anything outside them. */
export const CLIP_MIN_EXCLUSIVE = 0;
export const CLIP_MAX = 8;
export const GRID_MIN = 2;
export const GRID_MAX = 16;
export const CLIP_FLOOR = 0.1; // smallest value the slider can reach

export const DEFAULT_CONTROLS: ControlState = {
  method: "score_cam",
  target: null,
  topK: null,
  overlayAlpha: 0.5,
  claheClip: 2.0,
  claheGrid: [8, 8],
};

function clampNumber(value: number, lo: number, hi: number): number {
  if (!Number.isFinite(value)) return lo;
  return Math.min(hi, Math.max(lo, value));
}

/** Force every field into the service's documented ranges. */
export function clampControls(raw: ControlState): ControlState {
  const grid: [number, number] = [
    Math.round(clampNumber(raw.claheGrid[0], GRID_MIN, GRID_MAX)),
    Math.round(clampNumber(raw.claheGrid[1], GRID_MIN, GRID_MAX)),
  ];
  let topK = raw.topK;
  if (topK !== null) {
    topK = Math.max(1, Math.round(Number.isFinite(topK) ? topK : 1));
  }
  return {
    method: raw.method === "gap_head" ? "gap_head" : "score_cam",
    target: raw.target,
    topK,
    overlayAlpha: clampNumber(raw.overlayAlpha, 0, 1),
    claheClip: clampNumber(raw.claheClip, CLIP_FLOOR, CLIP_MAX),
    claheGrid: grid,
  };
}

/** True when a change requires a new server round trip (alpha is the one
 *  purely client-side control). */
export function needsRequest(before: ControlState, after: ControlState): boolean {
  return (
    before.method !== after.method ||
    before.target !== after.target ||
    before.topK !== after.topK ||
    before.claheClip !== after.claheClip ||
    before.claheGrid[0] !== after.claheGrid[0] ||
    before.claheGrid[1] !== after.claheGrid[1]
  );
}
