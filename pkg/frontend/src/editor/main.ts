// Browser entry point: wires the DOM shell in index.html to the editor
// controller. Rendering is a plain 2D canvas; the generated image and class
// mask arrive as base64 PNG strings and are drawn as underlays beneath the
// cell glyphs.

import { SynclayClient } from "../client.js";
import { Editor } from "../controller.js";
import { EditorState } from "../state.js";
import { typeColor } from "../schema.js";

const DISPLAY_SIZE = 512;
const HIT_SLOP_PX = 4; // model pixels of forgiveness around each bbox

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing #${id}`);
  }
  return el as T;
}

function decodePng(b64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("undecodable png payload"));
    img.src = `data:image/png;base64,${b64}`;
  });
}

class App {
  private readonly canvas = byId<HTMLCanvasElement>("board");
  private readonly ctx: CanvasRenderingContext2D;
  private image: HTMLImageElement | null = null;
  private mask: HTMLImageElement | null = null;
  private imagePng = "";
  private maskPng = "";
  private dragIndex = -1;
  private dragPreview: { x: number; y: number } | null = null;

  constructor(private readonly editor: Editor) {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) {
      throw new Error("2d canvas unavailable");
    }
    this.ctx = ctx;
    this.canvas.width = DISPLAY_SIZE;
    this.canvas.height = DISPLAY_SIZE;
    editor.onChange = (state) => this.render(state);
    this.buildToolbar();
    this.buildPanel();
    this.bindActions();
    this.bindPointer();
    this.render(editor.state);
  }

  // ---------------------------------------------------------------- controls

  private buildToolbar(): void {
    const bar = byId<HTMLDivElement>("toolbar");
    for (const info of this.editor.state.vocabulary) {
      const button = document.createElement("button");
      button.dataset.tool = `place:${info.name}`;
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = typeColor(info.id);
      button.append(swatch, document.createTextNode(info.name));
      button.addEventListener("click", () =>
        this.editor.selectTool({ kind: "place", typeName: info.name }),
      );
      bar.append(button);
    }
    for (const kind of ["move", "delete"] as const) {
      const button = document.createElement("button");
      button.dataset.tool = kind;
      button.textContent = kind;
      button.addEventListener("click", () => this.editor.selectTool({ kind }));
      bar.append(button);
    }
  }

  private buildPanel(): void {
    const grade = byId<HTMLSelectElement>("grade");
    for (const name of this.editor.state.grades) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      grade.append(option);
    }
    grade.addEventListener("change", () => this.editor.updatePanel({ grade: grade.value }));

    const sliders = byId<HTMLDivElement>("sliders");
    for (const info of this.editor.state.vocabulary) {
      const label = document.createElement("label");
      label.textContent = info.name;
      const input = document.createElement("input");
      input.type = "range";
      input.min = "0";
      input.max = "1";
      input.step = "0.05";
      input.value = "0";
      input.addEventListener("input", () =>
        this.editor.updatePanel({ cellularities: { [info.name]: Number(input.value) } }),
      );
      label.append(input);
      sliders.append(label);
    }

    const seed = byId<HTMLInputElement>("seed");
    seed.addEventListener("change", () =>
      this.editor.updatePanel({ seed: Math.trunc(Number(seed.value)) || 0 }),
    );
  }

  private bindActions(): void {
    byId("undo").addEventListener("click", () => this.editor.undo());
    byId("redo").addEventListener("click", () => this.editor.redo());
    byId("regenerate").addEventListener("click", () => void this.editor.regenerate());
    byId("synthesize").addEventListener("click", () => void this.editor.synthesizeFromPanel());

    const showMask = byId<HTMLInputElement>("show-mask");
    showMask.addEventListener("change", () =>
      this.editor.updateOverlays({ mask: showMask.checked }),
    );
    const opacity = byId<HTMLInputElement>("mask-opacity");
    opacity.addEventListener("input", () =>
      this.editor.updateOverlays({ maskOpacity: Number(opacity.value) }),
    );
    const showBoxes = byId<HTMLInputElement>("show-bboxes");
    showBoxes.addEventListener("change", () =>
      this.editor.updateOverlays({ bboxes: showBoxes.checked }),
    );
  }

  // ----------------------------------------------------------------- pointer

  private toNorm(event: MouseEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: (event.clientX - rect.left) / rect.width,
      y: (event.clientY - rect.top) / rect.height,
    };
  }

  /** Topmost cell whose bbox (plus slop) covers the point, or -1. */
  private hit(xNorm: number, yNorm: number): number {
    const { layout } = this.editor.state;
    const px = xNorm * layout.canvas.width;
    const py = yNorm * layout.canvas.height;
    for (let i = layout.cells.length - 1; i >= 0; i--) {
      const cell = layout.cells[i];
      if (!cell) {
        continue;
      }
      const cx = cell.x * layout.canvas.width;
      const cy = cell.y * layout.canvas.height;
      if (
        Math.abs(px - cx) <= cell.w / 2 + HIT_SLOP_PX &&
        Math.abs(py - cy) <= cell.h / 2 + HIT_SLOP_PX
      ) {
        return i;
      }
    }
    return -1;
  }

  private bindPointer(): void {
    this.canvas.addEventListener("mousedown", (event) => {
      const { x, y } = this.toNorm(event);
      const tool = this.editor.state.tool;
      if (tool.kind === "place") {
        this.editor.place(x, y);
      } else if (tool.kind === "delete") {
        const index = this.hit(x, y);
        if (index >= 0) {
          this.editor.remove(index);
        }
      } else {
        this.dragIndex = this.hit(x, y);
        this.dragPreview = this.dragIndex >= 0 ? { x, y } : null;
      }
    });
    this.canvas.addEventListener("mousemove", (event) => {
      if (this.dragIndex < 0) {
        return;
      }
      this.dragPreview = this.toNorm(event);
      this.paint(this.editor.state);
    });
    const finish = (event: MouseEvent, commit: boolean) => {
      if (this.dragIndex < 0) {
        return;
      }
      const index = this.dragIndex;
      this.dragIndex = -1;
      this.dragPreview = null;
      if (commit) {
        // single undo entry per gesture: state only changes at mouseup
        const { x, y } = this.toNorm(event);
        this.editor.drag(index, x, y);
      } else {
        this.paint(this.editor.state);
      }
    };
    this.canvas.addEventListener("mouseup", (event) => finish(event, true));
    this.canvas.addEventListener("mouseleave", (event) => finish(event, false));
  }

  // --------------------------------------------------------------- rendering

  private render(state: EditorState): void {
    this.syncControls(state);
    this.paint(state);
    void this.refreshBitmaps(state);
  }

  private async refreshBitmaps(state: EditorState): Promise<void> {
    const imagePng = state.result?.imagePng ?? "";
    const maskPng = state.result?.maskPng ?? "";
    if (imagePng === this.imagePng && maskPng === this.maskPng) {
      return;
    }
    this.imagePng = imagePng;
    this.maskPng = maskPng;
    this.image = imagePng ? await decodePng(imagePng) : null;
    this.mask = maskPng ? await decodePng(maskPng) : null;
    if (state === this.editor.state) {
      this.paint(state);
    }
  }

  private paint(state: EditorState): void {
    const ctx = this.ctx;
    ctx.clearRect(0, 0, DISPLAY_SIZE, DISPLAY_SIZE);
    ctx.fillStyle = "#14141a";
    ctx.fillRect(0, 0, DISPLAY_SIZE, DISPLAY_SIZE);
    if (this.image) {
      ctx.drawImage(this.image, 0, 0, DISPLAY_SIZE, DISPLAY_SIZE);
    }
    if (this.mask && state.overlays.mask) {
      ctx.globalAlpha = state.overlays.maskOpacity;
      ctx.drawImage(this.mask, 0, 0, DISPLAY_SIZE, DISPLAY_SIZE);
      ctx.globalAlpha = 1;
    }

    const { width, height } = state.layout.canvas;
    state.layout.cells.forEach((cell, index) => {
      const pos =
        index === this.dragIndex && this.dragPreview ? this.dragPreview : cell;
      const cx = pos.x * DISPLAY_SIZE;
      const cy = pos.y * DISPLAY_SIZE;
      const color = typeColor(state.layout.types.indexOf(cell.type));
      if (state.overlays.bboxes) {
        const w = (cell.w / width) * DISPLAY_SIZE;
        const h = (cell.h / height) * DISPLAY_SIZE;
        ctx.strokeStyle = color;
        ctx.lineWidth = 1;
        ctx.strokeRect(cx - w / 2, cy - h / 2, w, h);
      }
      ctx.fillStyle = color;
      ctx.beginPath();
      ctx.arc(cx, cy, 3, 0, Math.PI * 2);
      ctx.fill();
    });
  }

  private syncControls(state: EditorState): void {
    byId("stale").hidden = !state.stale;
    byId("notice").textContent = state.notice ?? "";
    byId<HTMLButtonElement>("undo").disabled = state.undoStack.length === 0;
    byId<HTMLButtonElement>("redo").disabled = state.redoStack.length === 0;
    const regen = byId<HTMLButtonElement>("regenerate");
    regen.disabled = state.inflight;
    regen.textContent = state.inflight ? "Generating..." : "Regenerate";

    const active =
      state.tool.kind === "place" ? `place:${state.tool.typeName}` : state.tool.kind;
    for (const button of byId("toolbar").querySelectorAll("button")) {
      button.classList.toggle("active", button.dataset.tool === active);
    }

    const p = state.result?.provenance;
    byId("provenance").textContent = p
      ? `checkpoint ${p.checkpoint_id ?? "?"} | seed ${p.seed} | layout ${p.layout_hash.slice(0, 12)}`
      : "";
    byId("cell-count").textContent = `${state.layout.cells.length} cells`;
  }
}

async function boot(): Promise<void> {
  const status = byId("status");
  const client = new SynclayClient();
  try {
    const editor = await Editor.connect(client);
    new App(editor);
    const health = await client.health();
    status.textContent = health.model_loaded
      ? `checkpoint ${health.checkpoint_id}`
      : "no checkpoint loaded; /generate will fail";
  } catch (error) {
    status.textContent = `cannot reach service: ${error instanceof Error ? error.message : error}`;
  }
}

window.addEventListener("DOMContentLoaded", () => void boot());
