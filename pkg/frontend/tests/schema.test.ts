import { describe, expect, it } from "vitest";

import {
  LayoutJson,
  MASK_PALETTE,
  canonicalLayout,
  emptyLayout,
  typeColor,
  validateLayout,
} from "../src/schema.js";

function base(): LayoutJson {
  return {
    version: 1,
    canvas: { width: 128, height: 128 },
    types: ["tumor", "lymphocyte"],
    cells: [
      { type: "tumor", x: 0.25, y: 0.75, w: 13, h: 13, seed: 5, noise: [0.1, -0.2, 0.3, 0.4] },
      { type: "lymphocyte", x: 0, y: 1, w: 1, h: 128 },
    ],
  };
}

describe("validateLayout", () => {
  it("accepts a well-formed layout", () => {
    expect(validateLayout(base())).toEqual([]);
    expect(validateLayout(emptyLayout(["tumor"], 64))).toEqual([]);
  });

  it("reports problems with field paths", () => {
    const cases: Array<[(l: LayoutJson) => void, string]> = [
      [(l) => (l.version = 2), "version:"],
      [(l) => delete (l as Partial<LayoutJson>).canvas, "canvas:"],
      [(l) => (l.canvas.width = 0), "canvas:"],
      [(l) => (l.types = []), "types:"],
      [(l) => (l.cells[0]!.type = "ghost"), "cells[0].type:"],
      [(l) => (l.cells[0]!.x = -0.1), "cells[0].x:"],
      [(l) => (l.cells[1]!.y = Number.NaN), "cells[1].y:"],
      [(l) => (l.cells[0]!.w = 129), "cells[0].w:"],
      [(l) => (l.cells[0]!.h = 2.5), "cells[0].h:"],
      [(l) => (l.cells[0]!.seed = 1.5), "cells[0].seed:"],
      [(l) => (l.cells[0]!.noise = [1, 2, 3]), "cells[0].noise:"],
    ];
    for (const [mutate, prefix] of cases) {
      const layout = base();
      mutate(layout);
      const problems = validateLayout(layout);
      expect(problems.length, prefix).toBeGreaterThan(0);
      expect(problems.some((p) => p.startsWith(prefix)), problems.join("; ")).toBe(true);
    }
  });

  it("rejects non-objects and oversized cell lists", () => {
    expect(validateLayout(null)).toHaveLength(1);
    expect(validateLayout([])).toHaveLength(1);
    const layout = base();
    layout.cells = Array.from({ length: 1025 }, () => ({
      type: "tumor",
      x: 0.5,
      y: 0.5,
      w: 2,
      h: 2,
    }));
    expect(validateLayout(layout).some((p) => p.startsWith("cells:"))).toBe(true);
  });
});

describe("canonicalLayout", () => {
  it("is insensitive to key order", () => {
    const a = base();
    const b = JSON.parse(
      JSON.stringify(a, ["cells", "type", "y", "x", "h", "w", "seed", "noise", "version", "canvas", "height", "width", "types"]),
    ) as LayoutJson;
    expect(canonicalLayout(b)).toBe(canonicalLayout(a));
    const moved = base();
    moved.cells[0]!.x = 0.26;
    expect(canonicalLayout(moved)).not.toBe(canonicalLayout(a));
  });
});

describe("type colors", () => {
  it("maps type ids onto the non-background palette entries", () => {
    expect(typeColor(0)).toBe("rgb(255, 0, 0)");
    expect(typeColor(1)).toBe("rgb(0, 255, 0)");
    expect(MASK_PALETTE[0]).toEqual([0, 0, 0]); // background stays black
  });
});
