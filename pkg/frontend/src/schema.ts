// Wire types and client-side validation for the layout service API
// (/api/v1). The validator mirrors the server's checks, including field
// paths, so the editor can refuse a bad request body before it is sent.

export const LAYOUT_SCHEMA_VERSION = 1;
export const NOISE_DIM = 4;
export const MAX_CELLS = 1024;

export interface CanvasSize {
  width: number;
  height: number;
}

export interface CellJson {
  type: string;
  x: number;
  y: number;
  w: number;
  h: number;
  seed?: number;
  noise?: number[];
}

export interface LayoutJson {
  version: number;
  canvas: CanvasSize;
  types: string[];
  cells: CellJson[];
}

export interface TypeInfo {
  id: number;
  name: string;
  default_size: [number, number];
}

export interface TypesResponse {
  types: TypeInfo[];
  grades: string[];
  canvas: number;
}

export interface HealthResponse {
  status: string;
  checkpoint_id: string | null;
  model_loaded: boolean;
}

export interface Provenance {
  checkpoint_id: string | null;
  seed: number;
  layout_hash: string;
  timestamp: string;
}

export interface GenerateOptions {
  seed?: number;
  return_mask?: boolean;
}

export interface GenerateResponse {
  image_png: string;
  mask_png?: string;
  provenance: Provenance;
}

export interface SynthesizeRequest {
  grade: string;
  cellularities: Record<string, number>;
  image_size?: number;
  seed?: number;
  gland_count?: number;
}

export interface SynthesizeResponse {
  layout: LayoutJson;
  layout_hash: string;
}

export interface StoredLayout {
  id: string;
  version: number;
  layout: LayoutJson;
}

export interface LayoutListItem {
  id: string;
  version: number;
  layout_hash: string;
}

export interface LayoutList {
  items: LayoutListItem[];
  total: number;
  offset: number;
  limit: number;
}

// Indexed-PNG palette the service uses for class masks; class id 0 is
// background, cell type `i` renders as entry `i + 1`.
export const MASK_PALETTE: ReadonlyArray<readonly [number, number, number]> = [
  [0x00, 0x00, 0x00],
  [0xff, 0x00, 0x00],
  [0x00, 0xff, 0x00],
  [0xff, 0xff, 0x00],
  [0x00, 0x00, 0xff],
  [0xff, 0x00, 0xff],
  [0x00, 0xff, 0xff],
];

export function typeColor(typeId: number): string {
  const rgb = MASK_PALETTE[(typeId + 1) % MASK_PALETTE.length] ?? [255, 255, 255];
  return `rgb(${rgb[0]}, ${rgb[1]}, ${rgb[2]})`;
}

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function isInt(value: unknown): value is number {
  return typeof value === "number" && Number.isInteger(value);
}

/** Every problem in the layout as "path: message" strings; [] means valid. */
export function validateLayout(obj: unknown): string[] {
  const errors: string[] = [];
  if (!isRecord(obj)) {
    return ["$: layout must be a JSON object"];
  }
  if (obj.version !== LAYOUT_SCHEMA_VERSION) {
    errors.push(`version: unsupported version ${JSON.stringify(obj.version)}`);
  }

  let canvasW = 0;
  let canvasH = 0;
  if (!("canvas" in obj)) {
    errors.push("canvas: field is required");
  } else if (!isRecord(obj.canvas)) {
    errors.push("canvas: must be an object");
  } else if (!isInt(obj.canvas.width) || !isInt(obj.canvas.height)) {
    errors.push("canvas: invalid width/height");
  } else if (obj.canvas.width < 1 || obj.canvas.height < 1) {
    errors.push("canvas: must be at least 1x1");
  } else {
    canvasW = obj.canvas.width;
    canvasH = obj.canvas.height;
  }

  const typeNames = new Set<string>();
  if (
    !Array.isArray(obj.types) ||
    obj.types.length < 1 ||
    obj.types.some((t) => typeof t !== "string")
  ) {
    errors.push("types: must be a non-empty list of names");
  } else {
    for (const name of obj.types as string[]) {
      typeNames.add(name);
    }
  }

  if (!Array.isArray(obj.cells)) {
    errors.push("cells: must be a list");
    return errors;
  }
  if (obj.cells.length > MAX_CELLS) {
    errors.push(`cells: at most ${MAX_CELLS} cells per layout`);
  }
  obj.cells.forEach((raw, k) => {
    const path = `cells[${k}]`;
    if (!isRecord(raw)) {
      errors.push(`${path}: must be an object`);
      return;
    }
    if (typeof raw.type !== "string" || !typeNames.has(raw.type)) {
      errors.push(`${path}.type: unknown type ${JSON.stringify(raw.type)}`);
    }
    for (const key of ["x", "y"] as const) {
      const value = raw[key];
      if (typeof value !== "number" || !Number.isFinite(value)) {
        errors.push(`${path}.${key}: invalid value`);
      } else if (value < 0 || value > 1) {
        errors.push(`${path}.${key}: ${value} outside [0, 1]`);
      }
    }
    const bounds: Array<["w" | "h", number]> = [
      ["w", canvasW],
      ["h", canvasH],
    ];
    for (const [key, limit] of bounds) {
      const value = raw[key];
      if (!isInt(value)) {
        errors.push(`${path}.${key}: invalid value`);
      } else if (limit > 0 && (value < 1 || value > limit)) {
        errors.push(`${path}.${key}: ${value} outside [1, ${limit}]`);
      }
    }
    if (raw.seed !== undefined && !isInt(raw.seed)) {
      errors.push(`${path}.seed: must be an integer`);
    }
    if (raw.noise !== undefined) {
      const noise = raw.noise;
      if (
        !Array.isArray(noise) ||
        noise.length !== NOISE_DIM ||
        noise.some((v) => typeof v !== "number" || !Number.isFinite(v))
      ) {
        errors.push(`${path}.noise: must be a list of ${NOISE_DIM} numbers`);
      }
    }
  });
  return errors;
}

/** Key-sorted, whitespace-free serialization; equal strings = same layout. */
export function canonicalLayout(layout: LayoutJson): string {
  const sortKeys = (value: unknown): unknown => {
    if (Array.isArray(value)) {
      return value.map(sortKeys);
    }
    if (isRecord(value)) {
      const out: Record<string, unknown> = {};
      for (const key of Object.keys(value).sort()) {
        out[key] = sortKeys(value[key]);
      }
      return out;
    }
    return value;
  };
  return JSON.stringify(sortKeys(layout));
}

export function emptyLayout(types: string[], canvas: number): LayoutJson {
  return {
    version: LAYOUT_SCHEMA_VERSION,
    canvas: { width: canvas, height: canvas },
    types: [...types],
    cells: [],
  };
}
