/**
 * DOM wiring for the interactive client.
 *
 * Layout (see index.html): a canvas showing the image at the current zoom,
 * a class picker fed from GET /classes, mode toggle, point editing buttons,
 * a similarity-map thumbnail, and an inline error banner. All segmentation
 * logic lives in the pure modules; this file only connects events.
 */

import { SegmentClient, ApiError } from "./api.js";
import { canvasToImage, imageToCanvas, ViewTransform } from "./coords.js";
import { maskToRgba } from "./overlay.js";
import { decodeRle } from "./rle.js";
import {
  SessionState,
  addPoint,
  buildRequest,
  canSubmit,
  clearPoints,
  initialState,
  undoPoint,
  withClass,
  withImage,
  withMode,
} from "./state.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

export class App {
  state: SessionState = initialState();
  view: ViewTransform = { zoom: 4, panX: 0, panY: 0 };
  private image: HTMLImageElement | null = null;
  private busy = false;

  constructor(private client: SegmentClient) {}

  async start(): Promise<void> {
    await this.populateClasses();
    $("file").addEventListener("change", (e) => this.onFile(e));
    $("canvas").addEventListener("click", (e) => this.onCanvasClick(e as MouseEvent));
    $("undo").addEventListener("click", () => this.setState(undoPoint(this.state)));
    $("clear").addEventListener("click", () => this.setState(clearPoints(this.state)));
    $("submit").addEventListener("click", () => void this.submit());
    $("retry").addEventListener("click", () => void this.populateClasses());
    ($("mode") as HTMLSelectElement).addEventListener("change", (e) => {
      const mode = (e.target as HTMLSelectElement).value as "manual" | "semi_automatic";
      this.setState(withMode(this.state, mode));
    });
    ($("class") as HTMLSelectElement).addEventListener("change", (e) => {
      this.setState(withClass(this.state, (e.target as HTMLSelectElement).value));
    });
    ($("zoom") as HTMLInputElement).addEventListener("input", (e) => {
      this.view.zoom = Number((e.target as HTMLInputElement).value);
      this.render();
    });
    ($("opacity") as HTMLInputElement).addEventListener("input", (e) => {
      this.state.overlayOpacity = Number((e.target as HTMLInputElement).value) / 100;
      this.render();
    });
    ($("seed") as HTMLInputElement).addEventListener("change", (e) => {
      this.state.seed = Number((e.target as HTMLInputElement).value) || 0;
    });
  }

  private async populateClasses(): Promise<void> {
    const picker = $("class") as HTMLSelectElement;
    try {
      const info = await this.client.loadClasses();
      picker.innerHTML = "";
      for (const name of info.classes) {
        const opt = document.createElement("option");
        opt.value = name;
        opt.textContent = name;
        picker.appendChild(opt);
      }
      picker.disabled = info.classes.length === 0;
      this.banner(info.classes.length === 0 ? "server reports an empty vocabulary" : null);
      if (info.classes.length > 0) {
        this.setState(withClass(this.state, info.classes[0]));
      }
    } catch {
      picker.disabled = true;
      this.banner("cannot reach the segmentation server", true);
    }
  }

  private onFile(event: Event): void {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const reader = new FileReader();
    reader.onload = () => {
      const dataUrl = reader.result as string;
      const img = new Image();
      img.onload = () => {
        this.image = img;
        const b64 = dataUrl.split(",", 2)[1];
        this.setState(withImage(this.state, b64, img.naturalHeight, img.naturalWidth));
      };
      img.src = dataUrl;
    };
    reader.readAsDataURL(file);
  }

  private onCanvasClick(event: MouseEvent): void {
    if (!this.image) return;
    const rect = ($("canvas") as HTMLCanvasElement).getBoundingClientRect();
    const hit = canvasToImage(
      event.clientX - rect.left,
      event.clientY - rect.top,
      this.view,
      { height: this.state.imageHeight, width: this.state.imageWidth }
    );
    if (!hit) return; // clicks outside the image are ignored
    this.setState(addPoint(this.state, hit));
  }

  async submit(): Promise<void> {
    if (!canSubmit(this.state) || this.busy) return;
    this.busy = true;
    try {
      const result = await this.client.segment(buildRequest(this.state));
      this.state = { ...this.state, lastResult: result };
      this.banner(null);
      const thumb = $("similarity") as HTMLImageElement;
      thumb.src = `data:image/png;base64,${result.similarityB64}`;
      $("version").textContent = result.modelVersion;
    } catch (err) {
      // point state survives a rejected request
      this.banner(err instanceof ApiError ? err.message : "request failed");
    } finally {
      this.busy = false;
      this.render();
    }
  }

  private banner(message: string | null, showRetry = false): void {
    const el = $("banner");
    el.textContent = message ?? "";
    el.style.display = message ? "block" : "none";
    $("retry").style.display = showRetry ? "inline-block" : "none";
  }

  private setState(next: SessionState): void {
    this.state = next;
    this.render();
  }

  render(): void {
    const canvas = $("canvas") as HTMLCanvasElement;
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    canvas.width = Math.max(1, this.state.imageWidth * this.view.zoom);
    canvas.height = Math.max(1, this.state.imageHeight * this.view.zoom);
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (this.image) {
      ctx.drawImage(this.image, this.view.panX, this.view.panY, canvas.width, canvas.height);
    }
    const result = this.state.lastResult;
    if (result) {
      const mask = decodeRle(result.maskRle, result.maskHeight, result.maskWidth);
      const tint = { r: 66, g: 133, b: 244, a: Math.round(this.state.overlayOpacity * 255) };
      const rgba = maskToRgba(mask, result.maskHeight, result.maskWidth, tint);
      const off = document.createElement("canvas");
      off.width = result.maskWidth;
      off.height = result.maskHeight;
      off.getContext("2d")?.putImageData(
        new ImageData(rgba, result.maskWidth, result.maskHeight),
        0,
        0
      );
      ctx.drawImage(off, this.view.panX, this.view.panY, canvas.width, canvas.height);
      for (const p of result.pointsUsed) {
        this.drawPoint(ctx, p.row, p.col, "#ff9800");
      }
    }
    for (const p of this.state.points) {
      this.drawPoint(ctx, p.row, p.col, "#e91e63");
    }
    ($("submit") as HTMLButtonElement).disabled = !canSubmit(this.state);
    $("points").textContent = `${this.state.points.length} point(s)`;
  }

  private drawPoint(
    ctx: CanvasRenderingContext2D,
    row: number,
    col: number,
    color: string
  ): void {
    const { x, y } = imageToCanvas(row, col, this.view);
    ctx.beginPath();
    ctx.arc(x, y, Math.max(3, this.view.zoom / 2), 0, Math.PI * 2);
    ctx.fillStyle = color;
    ctx.fill();
    ctx.strokeStyle = "#fff";
    ctx.stroke();
  }
}

export function bootstrap(baseUrl = ""): App {
  const app = new App(new SegmentClient(baseUrl));
  void app.start();
  return app;
}

declare global {
  interface Window {
    promptsegApp?: App;
  }
}

if (typeof document !== "undefined" && document.getElementById("canvas")) {
  window.promptsegApp = bootstrap();
}
