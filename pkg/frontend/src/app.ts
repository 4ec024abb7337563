/** Single-page app: pick a task, inspect the context strip, draw cues on the
 * query canvas, submit, and compare successive predictions. The canvas works
 * at model resolution scaled up integerly with nearest-neighbor display;
 * stroke coordinates are stored at model resolution. */

import { ApiClient, ApiClientError } from "./api.js";
import { blendIntoRgba } from "./blend.js";
import { rasterizeStrokes } from "./raster.js";
import { ToolState } from "./toolstate.js";
import type { PredictResponse, ServiceInfo, Tool } from "./types.js";

const SCALE = 8;

interface HistoryEntry {
  response: PredictResponse;
  latencyMs: number;
  strokeCount: number;
}

class App {
  private api: ApiClient;
  private info!: ServiceInfo;
  private sessionId: string | null = null;
  private tools = new ToolState();
  private queryRgba: Uint8ClampedArray | null = null;
  private queryIndex = 0;
  private lastPrediction: string | null = null;
  private showOverlay = true;
  private inFlight = false;
  private history: HistoryEntry[] = [];
  private gesturePath: [number, number][] = [];
  private pressPoint: [number, number] | null = null;

  constructor(baseUrl: string) {
    this.api = new ApiClient(baseUrl);
  }

  private el<T extends HTMLElement>(id: string): T {
    const e = document.getElementById(id);
    if (!e) throw new Error(`missing element #${id}`);
    return e as T;
  }

  async start(): Promise<void> {
    this.info = await this.api.info();
    const canvas = this.el<HTMLCanvasElement>("canvas");
    canvas.width = this.info.resolution * SCALE;
    canvas.height = this.info.resolution * SCALE;
    this.bindControls();
    await this.newSession();
  }

  private bindControls(): void {
    for (const tool of ["box", "ellipse", "scribble", "click", "negative_click", "freeform"] as Tool[]) {
      this.el<HTMLButtonElement>(`tool-${tool}`).onclick = () => {
        this.tools.setTool(tool);
        this.refreshToolButtons();
      };
    }
    this.el<HTMLInputElement>("brush-width").oninput = (e) => {
      this.tools.setBrushWidth(Number((e.target as HTMLInputElement).value));
    };
    this.el<HTMLButtonElement>("undo").onclick = () => {
      if (this.tools.undo()) this.redraw();
    };
    this.el<HTMLButtonElement>("clear").onclick = () => {
      this.tools.clear();
      this.redraw();
    };
    this.el<HTMLButtonElement>("submit").onclick = () => void this.submit(false);
    this.el<HTMLButtonElement>("probe").onclick = () => void this.submit(true);
    this.el<HTMLButtonElement>("new-session").onclick = () => void this.newSession();
    this.el<HTMLButtonElement>("next-query").onclick = () => {
      this.queryIndex += 1;
      void this.loadQuery();
    };
    this.el<HTMLInputElement>("overlay-toggle").onchange = (e) => {
      this.showOverlay = (e.target as HTMLInputElement).checked;
      this.redraw();
    };
    const canvas = this.el<HTMLCanvasElement>("canvas");
    canvas.onpointerdown = (e) => this.pointerDown(e);
    canvas.onpointermove = (e) => this.pointerMove(e);
    canvas.onpointerup = (e) => this.pointerUp(e);
    this.refreshToolButtons();
  }

  private refreshToolButtons(): void {
    for (const tool of ["box", "ellipse", "scribble", "click", "negative_click", "freeform"]) {
      this.el(`tool-${tool}`).classList.toggle("active", this.tools.tool === tool);
    }
  }

  private canvasPoint(e: PointerEvent): [number, number] {
    const canvas = this.el<HTMLCanvasElement>("canvas");
    const rect = canvas.getBoundingClientRect();
    const x = Math.floor(((e.clientX - rect.left) / rect.width) * this.info.resolution);
    const y = Math.floor(((e.clientY - rect.top) / rect.height) * this.info.resolution);
    const clamp = (v: number) => Math.min(Math.max(v, 0), this.info.resolution - 1);
    return [clamp(y), clamp(x)];
  }

  private pointerDown(e: PointerEvent): void {
    if (!this.queryRgba) return;
    (e.target as HTMLCanvasElement).setPointerCapture(e.pointerId);
    this.pressPoint = this.canvasPoint(e);
    this.gesturePath = [this.pressPoint];
  }

  private pointerMove(e: PointerEvent): void {
    if (!this.pressPoint) return;
    const p = this.canvasPoint(e);
    const last = this.gesturePath[this.gesturePath.length - 1];
    if (p[0] !== last[0] || p[1] !== last[1]) this.gesturePath.push(p);
  }

  private pointerUp(e: PointerEvent): void {
    if (!this.pressPoint) return;
    const release = this.canvasPoint(e);
    const prim = this.tools.gesturePrimitive(this.pressPoint, release, this.gesturePath);
    this.pressPoint = null;
    this.gesturePath = [];
    if (prim) {
      this.tools.addPrimitive(prim);
      this.redraw();
    }
  }

  async newSession(): Promise<void> {
    const task = this.el<HTMLSelectElement>("task-select").value;
    if (this.sessionId) {
      try {
        await this.api.deleteSession(this.sessionId);
      } catch {
        /* already expired */
      }
    }
    const seedText = this.el<HTMLInputElement>("seed-input").value;
    const seed = seedText === "" ? undefined : Number(seedText);
    const session = await this.api.createSession(task, seed);
    this.sessionId = session.id;
    this.history = [];
    this.queryIndex = 0;
    this.renderHistory();
    await this.loadContext();
    await this.loadQuery();
  }

  private async loadContext(): Promise<void> {
    if (!this.sessionId) return;
    const { context } = await this.api.context(this.sessionId);
    const strip = this.el("context-strip");
    strip.innerHTML = "";
    for (const item of context) {
      for (const key of ["blended", "target"] as const) {
        const img = document.createElement("img");
        img.src = `data:image/png;base64,${item[key]}`;
        img.width = this.info.resolution * 2;
        img.className = "ctx-thumb";
        img.style.imageRendering = "pixelated";
        strip.appendChild(img);
      }
    }
  }

  private async loadQuery(): Promise<void> {
    if (!this.sessionId) return;
    // Fetch the corpus query image by doing a probe predict and reading the echo.
    const r = await this.api.predict(this.sessionId, { corpus_index: this.queryIndex }, null, "single");
    this.queryRgba = await pngToRgba(r.blended, this.info.resolution);
    this.tools.clear();
    this.lastPrediction = null;
    this.redraw();
  }

  private redraw(): void {
    const canvas = this.el<HTMLCanvasElement>("canvas");
    const ctx = canvas.getContext("2d");
    if (!ctx || !this.queryRgba) return;
    const res = this.info.resolution;
    const cue = rasterizeStrokes(
      this.tools.strokeSet(),
      res,
      res,
      this.info.style.primary_color,
      this.info.style.negative_color,
    );
    const blended = this.tools.isEmpty()
      ? this.queryRgba
      : blendIntoRgba(this.queryRgba, cue, 0);
    const small = new OffscreenCanvas(res, res);
    const sctx = small.getContext("2d")!;
    sctx.putImageData(new ImageData(blended.slice(), res, res), 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(small, 0, 0, canvas.width, canvas.height);
    if (this.showOverlay && this.lastPrediction) {
      const img = new Image();
      img.onload = () => {
        ctx.globalAlpha = 0.55;
        ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
        ctx.globalAlpha = 1;
      };
      img.src = `data:image/png;base64,${this.lastPrediction}`;
    }
  }

  private async submit(probe: boolean): Promise<void> {
    if (!this.sessionId || this.inFlight) return;
    if (!probe && this.tools.isEmpty()) {
      this.setStatus("draw a cue first, or use the no-cue probe");
      return;
    }
    this.inFlight = true;
    this.el<HTMLButtonElement>("submit").disabled = true;
    this.setStatus("predicting…");
    const mode = this.el<HTMLSelectElement>("mode-select").value as "single" | "tbt";
    const t0 = performance.now();
    try {
      const strokes = probe ? null : this.tools.strokeSet();
      const r = await this.api.predict(this.sessionId, { corpus_index: this.queryIndex }, strokes, mode);
      const latency = performance.now() - t0;
      this.lastPrediction = r.prediction;
      await this.checkEcho(r.blended, strokes !== null);
      this.history.unshift({ response: r, latencyMs: latency, strokeCount: strokes?.primitives.length ?? 0 });
      this.renderHistory();
      this.renderMetrics(r, latency);
      this.redraw();
    } catch (err) {
      if (err instanceof ApiClientError && err.code === "busy") {
        this.setStatus(`server busy — retry in ${err.retryAfter ?? 1}s`);
      } else {
        this.setStatus(`error: ${err instanceof Error ? err.message : String(err)}`);
      }
    } finally {
      this.inFlight = false;
      this.el<HTMLButtonElement>("submit").disabled = false;
    }
  }

  /** Compare the server's blended echo against the local preview; anything
   * beyond 8-bit quantization indicates a rasterization mismatch. */
  private async checkEcho(echoB64: string, hadStrokes: boolean): Promise<void> {
    if (!this.queryRgba || !hadStrokes) return;
    const res = this.info.resolution;
    const echo = await pngToRgba(echoB64, res);
    const cue = rasterizeStrokes(
      this.tools.strokeSet(), res, res,
      this.info.style.primary_color, this.info.style.negative_color,
    );
    const local = blendIntoRgba(this.queryRgba, cue, 0);
    let maxDiff = 0;
    for (let i = 0; i < local.length; i++) {
      maxDiff = Math.max(maxDiff, Math.abs(local[i] - echo[i]));
    }
    const warn = this.el("echo-warning");
    warn.hidden = maxDiff <= 1;
    if (maxDiff > 1) warn.textContent = `preview/echo mismatch: max channel diff ${maxDiff}`;
  }

  private renderMetrics(r: PredictResponse, latencyMs: number): void {
    const m = r.metrics;
    const parts = [`mode ${r.mode}`, `cue ${r.cue_kind ?? "none (probe)"}`, `${latencyMs.toFixed(0)} ms`];
    if (m) {
      if (m.iou !== undefined) parts.push(`IoU ${m.iou.toFixed(3)}`);
      parts.push(`SSIM ${m.ssim.toFixed(3)}`, `PSNR ${m.psnr.toFixed(1)} dB`);
    }
    this.setStatus(parts.join(" · "));
  }

  private renderHistory(): void {
    const list = this.el("history");
    list.innerHTML = "";
    for (const h of this.history.slice(0, 8)) {
      const li = document.createElement("li");
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${h.response.prediction}`;
      img.width = this.info.resolution;
      img.style.imageRendering = "pixelated";
      li.appendChild(img);
      const label = document.createElement("span");
      const iou = h.response.metrics?.iou;
      label.textContent =
        `${h.response.cue_kind ?? "probe"} ×${h.strokeCount}` +
        (iou !== undefined ? ` IoU ${iou.toFixed(3)}` : "");
      li.appendChild(label);
      list.appendChild(li);
    }
  }

  private setStatus(text: string): void {
    this.el("status").textContent = text;
  }
}

async function pngToRgba(b64: string, resolution: number): Promise<Uint8ClampedArray> {
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("bad PNG"));
    img.src = `data:image/png;base64,${b64}`;
  });
  const c = new OffscreenCanvas(resolution, resolution);
  const ctx = c.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, resolution, resolution).data;
}

const baseUrl =
  new URLSearchParams(window.location.search).get("api") ?? "http://127.0.0.1:8000";
const app = new App(baseUrl);
void app.start();
