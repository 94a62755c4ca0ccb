// Glue between the pure state transitions and the HTTP client. DOM-free so
// the whole editing workflow is testable against a mocked service.

import { LayoutService, ServiceError } from "./client.js";
import { TypesResponse, canonicalLayout } from "./schema.js";
import {
  EditorState,
  Overlays,
  PanelState,
  Tool,
  applyGenerateFailure,
  applyGenerateSuccess,
  applySynthesized,
  beginGenerate,
  dragCell,
  deleteCell,
  initialState,
  placeCell,
  redo,
  setOverlays,
  setPanel,
  setTool,
  undo,
} from "./state.js";

function describe(error: unknown): string {
  if (error instanceof ServiceError) {
    return `service error ${error.status}: ${error.message}`;
  }
  return error instanceof Error ? error.message : String(error);
}

export class Editor {
  state: EditorState;
  onChange: (state: EditorState) => void = () => {};

  constructor(
    private readonly client: LayoutService,
    meta: TypesResponse,
  ) {
    this.state = initialState(meta);
  }

  static async connect(client: LayoutService): Promise<Editor> {
    return new Editor(client, await client.types());
  }

  private commit(state: EditorState): void {
    if (state !== this.state) {
      this.state = state;
      this.onChange(state);
    }
  }

  place(xNorm: number, yNorm: number): void {
    this.commit(placeCell(this.state, xNorm, yNorm));
  }

  drag(index: number, xNorm: number, yNorm: number): void {
    this.commit(dragCell(this.state, index, xNorm, yNorm));
  }

  remove(index: number): void {
    this.commit(deleteCell(this.state, index));
  }

  selectTool(tool: Tool): void {
    this.commit(setTool(this.state, tool));
  }

  updatePanel(panel: Partial<PanelState>): void {
    this.commit(setPanel(this.state, panel));
  }

  updateOverlays(overlays: Partial<Overlays>): void {
    this.commit(setOverlays(this.state, overlays));
  }

  undo(): void {
    this.commit(undo(this.state));
  }

  redo(): void {
    this.commit(redo(this.state));
  }

  async regenerate(): Promise<void> {
    const { state, token } = beginGenerate(this.state);
    this.commit(state);
    const requested = canonicalLayout(this.state.layout);
    try {
      const response = await this.client.generate(this.state.layout, {
        seed: this.state.panel.seed,
      });
      let next = applyGenerateSuccess(this.state, token, response);
      if (next !== this.state && canonicalLayout(next.layout) !== requested) {
        next = { ...next, stale: true }; // layout moved on while the request ran
      }
      this.commit(next);
    } catch (error) {
      this.commit(applyGenerateFailure(this.state, token, describe(error)));
    }
  }

  async synthesizeFromPanel(): Promise<void> {
    try {
      const response = await this.client.synthesize({
        grade: this.state.panel.grade,
        cellularities: this.state.panel.cellularities,
        image_size: this.state.layout.canvas.width,
        seed: this.state.panel.seed,
      });
      this.commit(applySynthesized(this.state, response.layout));
    } catch (error) {
      this.commit({ ...this.state, notice: describe(error) });
    }
  }
}
