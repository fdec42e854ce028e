// The review view: one PendingReview item at a time with a togglable mask
// overlay; keyboard-driven approve (a) / reject (r). Verdicts are optimistic
// with an idempotency key each, and the card is retained if the API fails.

import { ApiClient, ApiError } from "./api.js";
import { ItemDetail } from "./types.js";

function newIdempotencyKey(): string {
  const c = globalThis.crypto as Crypto | undefined;
  if (c?.randomUUID) return c.randomUUID();
  return `key-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

export class ReviewQueue {
  readonly root: HTMLElement;
  private queue: string[] = [];
  private current: ItemDetail | null = null;
  private overlayVisible = true;
  private overlayOpacity = 0.6;
  private busy = false;
  private img: HTMLImageElement;
  private overlay: HTMLImageElement;
  private label: HTMLElement;
  private counts: HTMLElement;
  private message: HTMLElement;

  constructor(private api: ApiClient, private sessionId: string,
              private datasetId: string,
              private onVerdict?: (itemId: string, state: string) => void) {
    this.root = document.createElement("div");
    this.root.className = "review";
    this.label = document.createElement("h3");
    this.counts = document.createElement("div");
    this.counts.className = "counts";
    const frame = document.createElement("div");
    frame.className = "review-frame";
    this.img = document.createElement("img");
    this.img.className = "review-image";
    this.overlay = document.createElement("img");
    this.overlay.className = "review-overlay";
    frame.append(this.img, this.overlay);

    const bar = document.createElement("div");
    bar.className = "toolbar";
    const approve = document.createElement("button");
    approve.textContent = "approve (a)";
    approve.addEventListener("click", () => void this.submit("approve"));
    const reject = document.createElement("button");
    reject.textContent = "reject (r)";
    reject.addEventListener("click", () => void this.submit("reject"));
    const toggle = document.createElement("button");
    toggle.textContent = "overlay (o)";
    toggle.addEventListener("click", () => this.toggleOverlay());
    const opacity = document.createElement("input");
    opacity.type = "range";
    opacity.min = "0";
    opacity.max = "100";
    opacity.value = String(this.overlayOpacity * 100);
    opacity.addEventListener("input", () => {
      this.overlayOpacity = Number(opacity.value) / 100;
      this.applyOverlayStyle();
    });
    this.message = document.createElement("span");
    this.message.className = "status";
    bar.append(approve, reject, toggle, opacity, this.message);

    this.root.append(this.label, this.counts, frame, bar);
    this.root.tabIndex = 0;
    this.root.addEventListener("keydown", (e) => {
      if (e.key === "a") void this.submit("approve");
      else if (e.key === "r") void this.submit("reject");
      else if (e.key === "o") this.toggleOverlay();
    });
  }

  async refresh(): Promise<void> {
    const listing = await this.api.listItems(this.sessionId, "PendingReview", 1, 200);
    this.queue = listing.items.map((i) => i.image_id);
    this.counts.textContent = `${listing.total} awaiting review`;
    await this.advance();
  }

  private async advance(): Promise<void> {
    const next = this.queue.shift();
    if (!next) {
      this.current = null;
      this.label.textContent = "queue empty";
      this.img.removeAttribute("src");
      this.overlay.removeAttribute("src");
      return;
    }
    this.current = await this.api.itemDetail(this.sessionId, next);
    this.label.textContent = next;
    this.img.src = this.api.imageUrl(this.datasetId, next);
    if (this.current.candidate_overlay_png) {
      this.overlay.src = `data:image/png;base64,${this.current.candidate_overlay_png}`;
    } else {
      this.overlay.removeAttribute("src");
    }
    this.applyOverlayStyle();
  }

  toggleOverlay(): void {
    this.overlayVisible = !this.overlayVisible;
    this.applyOverlayStyle();
  }

  private applyOverlayStyle(): void {
    this.overlay.style.opacity = this.overlayVisible ? String(this.overlayOpacity) : "0";
  }

  async submit(verdict: "approve" | "reject"): Promise<void> {
    if (!this.current || this.busy) return;
    const item = this.current;
    this.busy = true;
    try {
      const result = await this.api.submitReview(
        this.sessionId, item.image_id, verdict, newIdempotencyKey());
      this.message.textContent = `${item.image_id}: ${result.state}`;
      this.onVerdict?.(item.image_id, result.state);
      await this.advance();
    } catch (err) {
      // keep the card; surface the failure
      const detail = err instanceof ApiError ? `${err.code}: ${err.message}`
        : String(err);
      this.message.textContent = `error, kept card (${detail})`;
    } finally {
      this.busy = false;
    }
  }
}
