// Editor state and its pure transitions. Every mutating edit pushes an undo
// snapshot (bounded), keeps the layout schema-valid by construction, and
// marks the current generation result stale; only a successful regenerate
// clears the flag. Functions return the input state unchanged when an edit
// is a no-op so callers can tell whether anything happened.

import {
  CellJson,
  GenerateResponse,
  LayoutJson,
  MAX_CELLS,
  Provenance,
  TypeInfo,
  TypesResponse,
  emptyLayout,
} from "./schema.js";

export const UNDO_LIMIT = 64;

export type Tool =
  | { kind: "place"; typeName: string }
  | { kind: "move" }
  | { kind: "delete" };

export interface PanelState {
  grade: string;
  cellularities: Record<string, number>;
  seed: number;
}

export interface GenerationResult {
  imagePng: string;
  maskPng: string | null;
  provenance: Provenance;
}

export interface Overlays {
  mask: boolean;
  bboxes: boolean;
  maskOpacity: number;
}

export interface EditorState {
  layout: LayoutJson;
  vocabulary: TypeInfo[];
  grades: string[];
  tool: Tool;
  panel: PanelState;
  result: GenerationResult | null;
  stale: boolean;
  undoStack: LayoutJson[];
  redoStack: LayoutJson[];
  overlays: Overlays;
  notice: string | null;
  /** token of the newest generate request; older responses are dropped */
  generation: number;
  inflight: boolean;
}

export function initialState(meta: TypesResponse): EditorState {
  const names = meta.types.map((t) => t.name);
  return {
    layout: emptyLayout(names, meta.canvas),
    vocabulary: meta.types,
    grades: meta.grades,
    tool: { kind: "place", typeName: names[0] ?? "" },
    panel: {
      grade: meta.grades[0] ?? "normal",
      cellularities: Object.fromEntries(names.map((n) => [n, 0])),
      seed: 0,
    },
    result: null,
    stale: false,
    undoStack: [],
    redoStack: [],
    overlays: { mask: true, bboxes: true, maskOpacity: 0.45 },
    notice: null,
    generation: 0,
    inflight: false,
  };
}

const clamp01 = (v: number): number => Math.min(1, Math.max(0, v));

function cloneLayout(layout: LayoutJson): LayoutJson {
  return structuredClone(layout);
}

/** Push the pre-edit layout, dropping the oldest snapshot past the cap. */
function withEdit(state: EditorState, layout: LayoutJson): EditorState {
  const undoStack = [...state.undoStack, cloneLayout(state.layout)];
  if (undoStack.length > UNDO_LIMIT) {
    undoStack.shift();
  }
  return {
    ...state,
    layout,
    undoStack,
    redoStack: [],
    stale: true,
    notice: null,
  };
}

export function placeCell(state: EditorState, xNorm: number, yNorm: number): EditorState {
  if (state.tool.kind !== "place") {
    return state;
  }
  if (state.layout.cells.length >= MAX_CELLS) {
    return { ...state, notice: `cell cap reached (${MAX_CELLS})` };
  }
  const info = state.vocabulary.find((t) => t.name === (state.tool as { typeName: string }).typeName);
  if (!info) {
    return state;
  }
  const cell: CellJson = {
    type: info.name,
    x: clamp01(xNorm),
    y: clamp01(yNorm),
    w: Math.max(1, Math.min(state.layout.canvas.width, info.default_size[0])),
    h: Math.max(1, Math.min(state.layout.canvas.height, info.default_size[1])),
  };
  const layout = cloneLayout(state.layout);
  layout.cells.push(cell);
  return withEdit(state, layout);
}

export function dragCell(
  state: EditorState,
  index: number,
  xNorm: number,
  yNorm: number,
): EditorState {
  const cell = state.layout.cells[index];
  if (!cell) {
    return state;
  }
  const x = clamp01(xNorm);
  const y = clamp01(yNorm);
  if (cell.x === x && cell.y === y) {
    return state;
  }
  const layout = cloneLayout(state.layout);
  const moved = layout.cells[index];
  if (moved) {
    moved.x = x;
    moved.y = y;
  }
  return withEdit(state, layout);
}

export function deleteCell(state: EditorState, index: number): EditorState {
  if (index < 0 || index >= state.layout.cells.length) {
    return state;
  }
  const layout = cloneLayout(state.layout);
  layout.cells.splice(index, 1);
  return withEdit(state, layout);
}

/** Replace the whole layout with a synthesized one (parametric panel). */
export function applySynthesized(state: EditorState, layout: LayoutJson): EditorState {
  return withEdit(state, cloneLayout(layout));
}

export function undo(state: EditorState): EditorState {
  const previous = state.undoStack[state.undoStack.length - 1];
  if (!previous) {
    return state;
  }
  return {
    ...state,
    layout: cloneLayout(previous),
    undoStack: state.undoStack.slice(0, -1),
    redoStack: [...state.redoStack, cloneLayout(state.layout)],
    stale: true,
  };
}

export function redo(state: EditorState): EditorState {
  const next = state.redoStack[state.redoStack.length - 1];
  if (!next) {
    return state;
  }
  return {
    ...state,
    layout: cloneLayout(next),
    redoStack: state.redoStack.slice(0, -1),
    undoStack: [...state.undoStack, cloneLayout(state.layout)],
    stale: true,
  };
}

export function setTool(state: EditorState, tool: Tool): EditorState {
  return { ...state, tool };
}

export function setPanel(state: EditorState, panel: Partial<PanelState>): EditorState {
  return {
    ...state,
    panel: {
      ...state.panel,
      ...panel,
      cellularities: { ...state.panel.cellularities, ...(panel.cellularities ?? {}) },
    },
  };
}

export function setOverlays(state: EditorState, overlays: Partial<Overlays>): EditorState {
  return { ...state, overlays: { ...state.overlays, ...overlays } };
}

/** Mark a new in-flight request; its token supersedes all earlier ones. */
export function beginGenerate(state: EditorState): { state: EditorState; token: number } {
  const token = state.generation + 1;
  return { state: { ...state, generation: token, inflight: true }, token };
}

export function applyGenerateSuccess(
  state: EditorState,
  token: number,
  response: GenerateResponse,
): EditorState {
  if (token !== state.generation) {
    return state; // superseded by a newer click
  }
  return {
    ...state,
    inflight: false,
    stale: false,
    notice: null,
    result: {
      imagePng: response.image_png,
      maskPng: response.mask_png ?? null,
      provenance: response.provenance,
    },
  };
}

export function applyGenerateFailure(
  state: EditorState,
  token: number,
  message: string,
): EditorState {
  if (token !== state.generation) {
    return state;
  }
  return { ...state, inflight: false, notice: message };
}
