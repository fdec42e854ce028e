// The prompt view: draw scribbles on an image, at native-pixel fidelity
// regardless of zoom, then submit them as a prompt.
//
// Capture is separated from painting: pointer events update a pure
// StrokeState through the view transform, and a render pass repaints from
// that state, so the component stays testable without a real 2D context.

import { ApiClient } from "./api.js";
import {
  StrokeState, beginStroke, canSubmit, clearStrokes, createStrokeState,
  endStroke, extendStroke, strokesPayload, undoStroke,
} from "./strokes.js";
import {
  ViewTransform, fit, imageToScreen, pan, screenToImage, zoomAt,
} from "./transform.js";

export interface ScribbleEditorOptions {
  api: ApiClient;
  sessionId: string;
  datasetId: string;
  imageId: string;
  classId: number;
  viewWidth?: number;
  viewHeight?: number;
  onSubmitted?: (promptId: string) => void;
  onError?: (message: string) => void;
}

export class ScribbleEditor {
  readonly root: HTMLElement;
  readonly canvas: HTMLCanvasElement;
  state: StrokeState;
  view: ViewTransform;
  private image: HTMLImageElement | null = null;
  private drawing = false;
  private panning = false;
  private lastScreen: [number, number] = [0, 0];
  private submitButton: HTMLButtonElement;
  private undoButton: HTMLButtonElement;
  private status: HTMLElement;
  imageWidth: number;
  imageHeight: number;

  constructor(private opts: ScribbleEditorOptions,
              imageWidth: number, imageHeight: number) {
    this.imageWidth = imageWidth;
    this.imageHeight = imageHeight;
    this.state = createStrokeState(imageWidth, imageHeight);
    const viewW = opts.viewWidth ?? 512;
    const viewH = opts.viewHeight ?? 512;
    this.view = fit(imageWidth, imageHeight, viewW, viewH);

    this.root = document.createElement("div");
    this.root.className = "editor";
    this.canvas = document.createElement("canvas");
    this.canvas.width = viewW;
    this.canvas.height = viewH;
    this.canvas.className = "editor-canvas";
    this.root.appendChild(this.canvas);

    const bar = document.createElement("div");
    bar.className = "toolbar";
    this.undoButton = document.createElement("button");
    this.undoButton.textContent = "undo";
    this.undoButton.addEventListener("click", () => this.undo());
    this.submitButton = document.createElement("button");
    this.submitButton.textContent = "submit prompt";
    this.submitButton.addEventListener("click", () => void this.submit());
    this.status = document.createElement("span");
    this.status.className = "status";
    bar.append(this.undoButton, this.submitButton, this.status);
    this.root.appendChild(bar);

    this.canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    this.canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    this.canvas.addEventListener("pointerup", (e) => this.onPointerUp(e));
    this.canvas.addEventListener("wheel", (e) => this.onWheel(e), { passive: false });
    this.refreshControls();
  }

  async loadImage(): Promise<void> {
    const url = this.opts.api.imageUrl(this.opts.datasetId, this.opts.imageId);
    await new Promise<void>((resolve, reject) => {
      const img = new Image();
      img.onload = () => {
        this.image = img;
        resolve();
      };
      img.onerror = () => reject(new Error(`cannot load ${url}`));
      img.src = url;
    });
    this.render();
  }

  private canvasPoint(e: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    return [e.clientX - rect.left, e.clientY - rect.top];
  }

  onPointerDown(e: PointerEvent): void {
    const [sx, sy] = this.canvasPoint(e);
    if (e.shiftKey || e.button === 1) {
      this.panning = true;
      this.lastScreen = [sx, sy];
      return;
    }
    const [ix, iy] = screenToImage(this.view, sx, sy);
    this.drawing = true;
    this.state = beginStroke(this.state, ix, iy);
    this.render();
  }

  onPointerMove(e: PointerEvent): void {
    const [sx, sy] = this.canvasPoint(e);
    if (this.panning) {
      this.view = pan(this.view, sx - this.lastScreen[0], sy - this.lastScreen[1]);
      this.lastScreen = [sx, sy];
      this.render();
      return;
    }
    if (!this.drawing) return;
    const [ix, iy] = screenToImage(this.view, sx, sy);
    this.state = extendStroke(this.state, ix, iy);
    this.render();
  }

  onPointerUp(_e: PointerEvent): void {
    if (this.panning) {
      this.panning = false;
      return;
    }
    if (this.drawing) {
      this.drawing = false;
      this.state = endStroke(this.state);
      this.refreshControls();
      this.render();
    }
  }

  onWheel(e: WheelEvent): void {
    e.preventDefault();
    const rect = this.canvas.getBoundingClientRect();
    const factor = e.deltaY < 0 ? 1.25 : 0.8;
    this.view = zoomAt(this.view, e.clientX - rect.left, e.clientY - rect.top, factor);
    this.render();
  }

  undo(): void {
    this.state = undoStroke(this.state);
    this.refreshControls();
    this.render();
  }

  clear(): void {
    this.state = clearStrokes(this.state);
    this.refreshControls();
    this.render();
  }

  async submit(): Promise<string | null> {
    if (!canSubmit(this.state)) return null;
    try {
      const resp = await this.opts.api.submitPrompt(
        this.opts.sessionId, this.opts.imageId, this.opts.classId,
        strokesPayload(this.state));
      this.status.textContent = `prompt ${resp.prompt_id} (${resp.pixel_count}px)`;
      this.opts.onSubmitted?.(resp.prompt_id);
      this.clear();
      return resp.prompt_id;
    } catch (err) {
      const message = err instanceof Error ? err.message : String(err);
      this.status.textContent = `error: ${message}`;
      this.opts.onError?.(message);
      return null;
    }
  }

  private refreshControls(): void {
    this.submitButton.disabled = !canSubmit(this.state);
    this.undoButton.disabled = !canSubmit(this.state) && this.state.active === null;
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return; // headless test environment
    ctx.fillStyle = "#181a1f";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    ctx.imageSmoothingEnabled = false;
    if (this.image) {
      const [x0, y0] = imageToScreen(this.view, 0, 0);
      ctx.drawImage(this.image, x0, y0,
        this.imageWidth * this.view.scale, this.imageHeight * this.view.scale);
    }
    ctx.strokeStyle = "#ff3b30";
    ctx.lineCap = "round";
    ctx.lineWidth = Math.max(2, this.state.radius * 2 * this.view.scale);
    const paths = [...this.state.strokes];
    if (this.state.active) paths.push(this.state.active);
    for (const stroke of paths) {
      ctx.beginPath();
      stroke.points.forEach(([ix, iy], i) => {
        const [sx, sy] = imageToScreen(this.view, ix + 0.5, iy + 0.5);
        if (i === 0) ctx.moveTo(sx, sy);
        else ctx.lineTo(sx, sy);
      });
      if (stroke.points.length === 1) {
        const [sx, sy] = imageToScreen(this.view, stroke.points[0][0] + 0.5,
          stroke.points[0][1] + 0.5);
        ctx.lineTo(sx + 0.01, sy);
      }
      ctx.stroke();
    }
  }
}
