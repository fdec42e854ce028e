// Stroke capture state: an undoable list of polylines in native image
// coordinates. Pure data + functions; the canvas layer feeds it points.

import { Stroke } from "./types.js";
import { inBounds, roundToPixel } from "./transform.js";

export interface StrokeState {
  imageWidth: number;
  imageHeight: number;
  radius: number;
  strokes: Stroke[];
  active: Stroke | null;
}

export function createStrokeState(imageWidth: number, imageHeight: number,
                                  radius = 1): StrokeState {
  return { imageWidth, imageHeight, radius, strokes: [], active: null };
}

/** Start a stroke at native image coordinates (clamped points are dropped). */
export function beginStroke(s: StrokeState, ix: number, iy: number): StrokeState {
  const [x, y] = roundToPixel(ix, iy);
  if (!inBounds(x, y, s.imageWidth, s.imageHeight)) return s;
  return { ...s, active: { points: [[x, y]], radius: s.radius } };
}

export function extendStroke(s: StrokeState, ix: number, iy: number): StrokeState {
  if (!s.active) return s;
  const [x, y] = roundToPixel(ix, iy);
  if (!inBounds(x, y, s.imageWidth, s.imageHeight)) return s;
  const last = s.active.points[s.active.points.length - 1];
  if (last[0] === x && last[1] === y) return s;
  return { ...s, active: { ...s.active, points: [...s.active.points, [x, y]] } };
}

export function endStroke(s: StrokeState): StrokeState {
  if (!s.active) return s;
  return { ...s, strokes: [...s.strokes, s.active], active: null };
}

export function undoStroke(s: StrokeState): StrokeState {
  if (s.active) return { ...s, active: null };
  return { ...s, strokes: s.strokes.slice(0, -1) };
}

export function clearStrokes(s: StrokeState): StrokeState {
  return { ...s, strokes: [], active: null };
}

export function canSubmit(s: StrokeState): boolean {
  return s.strokes.some((st) => st.points.length > 0);
}

export function strokesPayload(s: StrokeState): Stroke[] {
  return s.strokes;
}
