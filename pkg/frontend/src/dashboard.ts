// The dashboard view: live state counts, acceptance rate, and (when the
// dataset carries ground truth) an IoU histogram plus the coverage rate.

import { ApiClient } from "./api.js";
import { SessionStats } from "./types.js";

const STATE_ORDER = ["Unlabeled", "PendingReview", "Accepted", "Rejected", "ManualRequired"];

export class Dashboard {
  readonly root: HTMLElement;
  private bars: HTMLElement;
  private summary: HTMLElement;
  private histogram: HTMLElement;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(private api: ApiClient, private sessionId: string) {
    this.root = document.createElement("div");
    this.root.className = "dashboard";
    this.summary = document.createElement("div");
    this.summary.className = "summary";
    this.bars = document.createElement("div");
    this.bars.className = "bars";
    this.histogram = document.createElement("div");
    this.histogram.className = "histogram";
    this.root.append(this.summary, this.bars, this.histogram);
  }

  async refresh(): Promise<SessionStats> {
    const stats = await this.api.sessionStats(this.sessionId);
    this.renderStats(stats);
    return stats;
  }

  startPolling(ms = 2000): void {
    this.stopPolling();
    this.timer = setInterval(() => void this.refresh().catch(() => undefined), ms);
  }

  stopPolling(): void {
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
  }

  renderStats(stats: SessionStats): void {
    this.summary.textContent =
      `${stats.total} items | acceptance ${(stats.acceptance_rate * 100).toFixed(0)}% | ` +
      `${stats.prompts} prompts`;
    this.bars.replaceChildren();
    for (const state of STATE_ORDER) {
      const count = stats.counts[state] ?? 0;
      const row = document.createElement("div");
      row.className = "bar-row";
      const label = document.createElement("span");
      label.className = "bar-label";
      label.textContent = `${state} (${count})`;
      const track = document.createElement("div");
      track.className = "bar-track";
      const fill = document.createElement("div");
      fill.className = `bar-fill state-${state.toLowerCase()}`;
      fill.style.width = stats.total ? `${(count / stats.total) * 100}%` : "0";
      track.appendChild(fill);
      row.append(label, track);
      this.bars.appendChild(row);
    }
    this.histogram.replaceChildren();
    if (stats.quality?.ious?.length) {
      const title = document.createElement("div");
      title.textContent =
        `accepted-mask quality: mean IoU ${stats.quality.mean_iou.toFixed(3)}, ` +
        `coverage ${(stats.quality.coverage_rate * 100).toFixed(0)}%`;
      this.histogram.appendChild(title);
      const buckets = new Array<number>(10).fill(0);
      for (const v of stats.quality.ious) {
        buckets[Math.min(9, Math.floor(v * 10))] += 1;
      }
      const peak = Math.max(...buckets, 1);
      const chart = document.createElement("div");
      chart.className = "hist-chart";
      buckets.forEach((n, i) => {
        const col = document.createElement("div");
        col.className = "hist-col";
        col.style.height = `${(n / peak) * 60 + 2}px`;
        col.title = `IoU ${(i / 10).toFixed(1)}-${((i + 1) / 10).toFixed(1)}: ${n}`;
        chart.appendChild(col);
      });
      this.histogram.appendChild(chart);
    }
  }
}
