// Single-page wiring: three views (prompt / review / dashboard) over one
// session, routed by location hash. The page holds no authoritative state;
// a reload reconstructs everything from the server.

import { ApiClient } from "./api.js";
import { Dashboard } from "./dashboard.js";
import { ReviewQueue } from "./reviewQueue.js";
import { ScribbleEditor } from "./scribbleEditor.js";

interface AppContext {
  api: ApiClient;
  sessionId: string;
  datasetId: string;
}

async function resolveContext(api: ApiClient): Promise<AppContext | null> {
  const params = new URLSearchParams(location.search);
  let sessionId = params.get("session") ?? localStorage.getItem("seglabel.session");
  const datasetParam = params.get("dataset");
  if (!sessionId && datasetParam) {
    const created = await api.createSession(datasetParam);
    sessionId = created.session_id;
  }
  if (!sessionId) return null;
  const stats = await api.sessionStats(sessionId);
  localStorage.setItem("seglabel.session", sessionId);
  return { api, sessionId, datasetId: stats.dataset_id };
}

function nav(current: string): HTMLElement {
  const bar = document.createElement("nav");
  for (const [hash, label] of [["#/prompt", "prompt"], ["#/review", "review"],
                               ["#/dashboard", "dashboard"]] as const) {
    const a = document.createElement("a");
    a.href = hash;
    a.textContent = label;
    if (hash === current) a.className = "active";
    bar.appendChild(a);
  }
  return bar;
}

async function renderPrompt(ctx: AppContext, outlet: HTMLElement): Promise<void> {
  const listing = await ctx.api.listDatasetImages(ctx.datasetId);
  const picker = document.createElement("select");
  for (const image of listing.images) {
    const opt = document.createElement("option");
    opt.value = image.image_id;
    opt.textContent = `${image.image_id}${image.labeled ? " (labeled)" : ""}`;
    picker.appendChild(opt);
  }
  const classPicker = document.createElement("select");
  listing.class_names.slice(1).forEach((name, i) => {
    const opt = document.createElement("option");
    opt.value = String(i + 1);
    opt.textContent = `${i + 1}: ${name}`;
    classPicker.appendChild(opt);
  });
  const launch = document.createElement("button");
  launch.textContent = "auto-label all eligible";
  launch.disabled = true;
  let promptId: string | null = null;
  const status = document.createElement("span");
  status.className = "status";

  const host = document.createElement("div");
  const mount = async () => {
    host.replaceChildren();
    const imageId = picker.value;
    const probe = new Image();
    await new Promise<void>((resolve, reject) => {
      probe.onload = () => resolve();
      probe.onerror = () => reject(new Error("image load failed"));
      probe.src = ctx.api.imageUrl(ctx.datasetId, imageId);
    });
    const editor = new ScribbleEditor({
      api: ctx.api,
      sessionId: ctx.sessionId,
      datasetId: ctx.datasetId,
      imageId,
      classId: Number(classPicker.value),
      onSubmitted: (id) => {
        promptId = id;
        launch.disabled = false;
        status.textContent = `prompt ${id} ready`;
      },
    }, probe.naturalWidth, probe.naturalHeight);
    await editor.loadImage();
    host.appendChild(editor.root);
  };
  picker.addEventListener("change", () => void mount());
  launch.addEventListener("click", async () => {
    if (!promptId) return;
    const items = await ctx.api.listItems(ctx.sessionId, "Unlabeled", 1, 500);
    const rejected = await ctx.api.listItems(ctx.sessionId, "Rejected", 1, 500);
    const ids = [...items.items, ...rejected.items].map((i) => i.image_id);
    if (!ids.length) {
      status.textContent = "nothing eligible";
      return;
    }
    const job = await ctx.api.launchAutolabel(ctx.sessionId, promptId, ids);
    status.textContent = `job ${job.job_id} queued over ${ids.length} items`;
    const finished = await ctx.api.waitForJob(job.job_id);
    status.textContent = `job ${finished.state}; review queue updated`;
  });

  const controls = document.createElement("div");
  controls.className = "toolbar";
  controls.append(picker, classPicker, launch, status);
  outlet.append(controls, host);
  await mount();
}

async function renderReview(ctx: AppContext, outlet: HTMLElement): Promise<void> {
  const queue = new ReviewQueue(ctx.api, ctx.sessionId, ctx.datasetId);
  outlet.appendChild(queue.root);
  await queue.refresh();
  queue.root.focus();
}

async function renderDashboard(ctx: AppContext, outlet: HTMLElement): Promise<void> {
  const dash = new Dashboard(ctx.api, ctx.sessionId);
  outlet.appendChild(dash.root);
  await dash.refresh();
  dash.startPolling();
}

async function route(): Promise<void> {
  const app = document.getElementById("app");
  if (!app) return;
  app.replaceChildren();
  const api = new ApiClient("");
  let ctx: AppContext | null = null;
  try {
    ctx = await resolveContext(api);
  } catch (err) {
    app.textContent = `cannot resolve session: ${err}`;
    return;
  }
  if (!ctx) {
    app.innerHTML =
      "<p>No session. Open with <code>?dataset=&lt;dataset_id&gt;</code> " +
      "to start one, or <code>?session=&lt;session_id&gt;</code> to resume.</p>";
    return;
  }
  const hash = location.hash || "#/prompt";
  app.appendChild(nav(hash));
  const outlet = document.createElement("main");
  app.appendChild(outlet);
  if (hash === "#/review") await renderReview(ctx, outlet);
  else if (hash === "#/dashboard") await renderDashboard(ctx, outlet);
  else await renderPrompt(ctx, outlet);
}

window.addEventListener("hashchange", () => void route());
void route();
