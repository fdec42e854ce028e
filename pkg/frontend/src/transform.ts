// Zoom/pan math between screen (canvas) space and native image pixels.
//
// The editor stores strokes in native coordinates no matter how the view is
// zoomed or panned, so the same gesture produces identical stored points at
// any zoom level. screenToImage/imageToScreen are exact inverses over the
// reals; only the final stroke points are rounded (once) to pixel centers.

export interface ViewTransform {
  scale: number;   // screen px per image px
  offsetX: number; // screen position of image pixel (0, 0)
  offsetY: number;
}

export function identity(): ViewTransform {
  return { scale: 1, offsetX: 0, offsetY: 0 };
}

export function screenToImage(t: ViewTransform, sx: number, sy: number): [number, number] {
  return [(sx - t.offsetX) / t.scale, (sy - t.offsetY) / t.scale];
}

export function imageToScreen(t: ViewTransform, ix: number, iy: number): [number, number] {
  return [ix * t.scale + t.offsetX, iy * t.scale + t.offsetY];
}

/** Zoom by `factor` keeping the screen point (sx, sy) fixed. */
export function zoomAt(t: ViewTransform, sx: number, sy: number, factor: number): ViewTransform {
  const scale = clampScale(t.scale * factor);
  const applied = scale / t.scale;
  return {
    scale,
    offsetX: sx - (sx - t.offsetX) * applied,
    offsetY: sy - (sy - t.offsetY) * applied,
  };
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { ...t, offsetX: t.offsetX + dx, offsetY: t.offsetY + dy };
}

/** Fit an image into a viewport, centered. */
export function fit(imageW: number, imageH: number, viewW: number, viewH: number): ViewTransform {
  const scale = clampScale(Math.min(viewW / imageW, viewH / imageH));
  return {
    scale,
    offsetX: (viewW - imageW * scale) / 2,
    offsetY: (viewH - imageH * scale) / 2,
  };
}

export function roundToPixel(ix: number, iy: number): [number, number] {
  return [Math.round(ix), Math.round(iy)];
}

export function inBounds(x: number, y: number, width: number, height: number): boolean {
  return x >= 0 && y >= 0 && x < width && y < height;
}

function clampScale(scale: number): number {
  return Math.min(64, Math.max(1 / 64, scale));
}
