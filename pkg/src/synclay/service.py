"""Inference HTTP service: generation, parametric synthesis, layout store.

All endpoints live under /api/v1. Responses carry provenance sufficient to
regenerate them bit-exactly: checkpoint id, seed, and the hash of the
canonicalized layout JSON. The layout store is a single JSON file with
optimistic versioning and atomic writes.
"""

from __future__ import annotations

import base64
import io
import json
import os
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query
from PIL import Image

from .checkpoint import load_checkpoint
from .data import array_to_image
from .inference import generate_pair
from .layout import (
    LayoutError,
    canonical_layout_json,
    layout_from_json,
    layout_hash,
    layout_to_json,
)
from .segnet import PALETTE
from .synth import (
    GRADES,
    LayoutParams,
    PlacementError,
    default_size_statistics,
    synthesize_layout,
)

MAX_CELLS = 1024


class LayoutStore:
    """Single-file keyed store of canonical layout JSON with versions."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        if not self.path.exists():
            self._write({"layouts": {}})

    def _read(self) -> dict:
        with open(self.path) as fh:
            return json.load(fh)

    def _write(self, data: dict) -> None:
        tmp = self.path.with_suffix(".tmp")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w") as fh:
            json.dump(data, fh)
        os.replace(tmp, self.path)

    def get(self, layout_id: str) -> Optional[dict]:
        with self._lock:
            return self._read()["layouts"].get(layout_id)

    def put(self, layout_id: str, layout_json: dict, version: Optional[int]) -> dict:
        """Create (version absent/0) or update (version must match)."""

        with self._lock:
            data = self._read()
            entry = data["layouts"].get(layout_id)
            current = entry["version"] if entry else 0
            if version is None:
                version = current
            if version != current:
                raise VersionConflict(layout_id, current)
            record = {"version": current + 1, "layout": layout_json}
            data["layouts"][layout_id] = record
            self._write(data)
            return record

    def delete(self, layout_id: str) -> bool:
        with self._lock:
            data = self._read()
            if layout_id not in data["layouts"]:
                return False
            del data["layouts"][layout_id]
            self._write(data)
            return True

    def list(self, offset: int = 0, limit: int = 50) -> tuple[list[dict], int]:
        with self._lock:
            layouts = self._read()["layouts"]
        ids = sorted(layouts)
        page = [
            {
                "id": i,
                "version": layouts[i]["version"],
                "layout_hash": layout_hash(layout_from_json(layouts[i]["layout"])),
            }
            for i in ids[offset : offset + limit]
        ]
        return page, len(ids)


class VersionConflict(Exception):
    def __init__(self, layout_id: str, current: int):
        super().__init__(f"stale version for {layout_id}; current is {current}")
        self.current = current


def _png_b64(img: Image.Image) -> str:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _mask_png_b64(mask: np.ndarray) -> str:
    buf = io.BytesIO()
    img = Image.fromarray(np.asarray(mask).astype(np.uint8), mode="P")
    flat = [c for rgb in PALETTE for c in rgb]
    img.putpalette(flat + [0] * (768 - len(flat)))
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(
    checkpoint_dir=None,
    store_path="layouts.json",
    device: str = "cpu",
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="synclay", version="1")
    store = LayoutStore(store_path)
    state = {"model": None, "segnet": None, "checkpoint_id": None}

    if checkpoint_dir is not None:
        model, _, _, segnet, manifest = load_checkpoint(checkpoint_dir, device=device)
        model.eval()
        state.update(
            model=model, segnet=segnet, checkpoint_id=manifest.get("checkpoint_id")
        )

    def _parse_layout(obj, max_cells: int = MAX_CELLS):
        try:
            layout = layout_from_json(obj)
            layout.validate()
        except LayoutError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if len(layout.cells) > max_cells:
            raise HTTPException(
                status_code=400, detail=f"cells: at most {max_cells} cells per request"
            )
        return layout

    @app.get("/api/v1/health")
    def health():
        return {
            "status": "ok",
            "checkpoint_id": state["checkpoint_id"],
            "model_loaded": state["model"] is not None,
        }

    @app.get("/api/v1/types")
    def types():
        stats = default_size_statistics()
        model = state["model"]
        vocabulary = stats.per_type.keys()
        return {
            "types": [
                {
                    "id": i,
                    "name": name,
                    "default_size": [
                        round(stats.per_type[name].mean_width),
                        round(stats.per_type[name].mean_height),
                    ],
                }
                for i, name in enumerate(vocabulary)
            ],
            "grades": list(GRADES),
            "canvas": model.config.image_size if model else 256,
        }

    @app.post("/api/v1/generate")
    def generate(body: dict = Body(...)):
        if "layout" not in body:
            raise HTTPException(status_code=400, detail="layout: field is required")
        layout = _parse_layout(body["layout"])
        options = body.get("options") or {}
        if state["model"] is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded")
        side = state["model"].config.image_size
        if layout.canvas != (side, side):
            raise HTTPException(
                status_code=400,
                detail=f"canvas: must be {side}x{side} for the loaded checkpoint",
            )
        seed = options.get("seed")
        if seed is None:
            seed = int(np.random.default_rng().integers(0, 2**31 - 1))
        return_mask = bool(options.get("return_mask", True))
        pair = generate_pair(
            state["model"],
            layout,
            seed=seed,
            segnet=state["segnet"] if return_mask else None,
        )
        response = {
            "image_png": _png_b64(array_to_image(pair["image"])),
            "provenance": {
                "checkpoint_id": state["checkpoint_id"],
                "seed": seed,
                "layout_hash": layout_hash(layout),
                "timestamp": datetime.now(timezone.utc).isoformat(),
            },
        }
        if return_mask and "class_mask" in pair:
            response["mask_png"] = _mask_png_b64(pair["class_mask"])
        return response

    @app.post("/api/v1/layouts/synthesize")
    def synthesize(body: dict = Body(...)):
        try:
            params = LayoutParams(
                grade=body.get("grade", "normal"),
                cellularities=body.get("cellularities", {}),
                image_size=int(body.get("image_size", 256)),
                gland_count=body.get("gland_count"),
                rng_seed=int(body.get("seed", 0)),
            )
            layout = synthesize_layout(params)
        except PlacementError as exc:
            raise HTTPException(
                status_code=422,
                detail={
                    "message": str(exc),
                    "achieved": exc.achieved,
                    "requested": exc.requested,
                },
            )
        except LayoutError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"layout": layout_to_json(layout), "layout_hash": layout_hash(layout)}

    @app.get("/api/v1/layouts")
    def list_layouts(offset: int = Query(0, ge=0), limit: int = Query(50, ge=1, le=500)):
        items, total = store.list(offset=offset, limit=limit)
        return {"items": items, "total": total, "offset": offset, "limit": limit}

    @app.get("/api/v1/layouts/{layout_id}")
    def get_layout(layout_id: str):
        entry = store.get(layout_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"no layout {layout_id}")
        return {"id": layout_id, **entry}

    @app.put("/api/v1/layouts/{layout_id}")
    def put_layout(layout_id: str, body: dict = Body(...)):
        if "layout" not in body:
            raise HTTPException(status_code=400, detail="layout: field is required")
        layout = _parse_layout(body["layout"])
        canonical = json.loads(canonical_layout_json(layout))
        try:
            record = store.put(layout_id, canonical, body.get("version"))
        except VersionConflict as exc:
            raise HTTPException(
                status_code=409,
                detail={"message": str(exc), "current_version": exc.current},
            )
        return {"id": layout_id, **record}

    @app.delete("/api/v1/layouts/{layout_id}", status_code=204)
    def delete_layout(layout_id: str):
        if not store.delete(layout_id):
            raise HTTPException(status_code=404, detail=f"no layout {layout_id}")

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        # mounted last so /api/v1 routes keep precedence
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
