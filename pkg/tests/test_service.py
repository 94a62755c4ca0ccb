"""HTTP service: generation endpoints, layout store CRUD, error shapes."""

import base64
import io
import json

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from synclay.checkpoint import save_checkpoint
from synclay.generator import ModelConfig, SynthesisModel
from synclay.layout import CONIC_TYPE_NAMES, layout_from_json, layout_hash
from synclay.losses import LossWeights
from synclay.segnet import train_segnet
from synclay.service import LayoutStore, VersionConflict, create_app

import torch


@pytest.fixture(scope="module")
def checkpoint_dir(tmp_path_factory, tiny_records):
    torch.manual_seed(0)
    model = SynthesisModel(ModelConfig(embed_dim=8, image_size=64, base_channels=16))
    segnet = train_segnet(tiny_records[:2], epochs=1)
    path = tmp_path_factory.mktemp("ckpt")
    save_checkpoint(path, model, segnet=segnet, weights=LossWeights(), phase=2)
    return path


@pytest.fixture()
def client(checkpoint_dir, tmp_path):
    app = create_app(checkpoint_dir=checkpoint_dir, store_path=tmp_path / "layouts.json")
    return TestClient(app)


@pytest.fixture()
def bare_client(tmp_path):
    app = create_app(checkpoint_dir=None, store_path=tmp_path / "layouts.json")
    return TestClient(app)


def wire_layout(n=3, canvas=64):
    cells = [
        {
            "type": CONIC_TYPE_NAMES[k % 6],
            "x": 0.2 + 0.18 * k,
            "y": 0.3 + 0.12 * k,
            "w": 8,
            "h": 8,
            "seed": k,
        }
        for k in range(n)
    ]
    return {
        "version": 1,
        "canvas": {"width": canvas, "height": canvas},
        "types": list(CONIC_TYPE_NAMES),
        "cells": cells,
    }


def decode_png(b64: str) -> Image.Image:
    return Image.open(io.BytesIO(base64.b64decode(b64)))


class TestHealthAndTypes:
    def test_health_with_checkpoint(self, client):
        body = client.get("/api/v1/health").json()
        assert body["status"] == "ok"
        assert body["model_loaded"] is True
        assert isinstance(body["checkpoint_id"], str) and len(body["checkpoint_id"]) == 12

    def test_health_without_checkpoint(self, bare_client):
        body = bare_client.get("/api/v1/health").json()
        assert body["model_loaded"] is False
        assert body["checkpoint_id"] is None

    def test_types_palette(self, client):
        body = client.get("/api/v1/types").json()
        names = [t["name"] for t in body["types"]]
        assert names == list(CONIC_TYPE_NAMES)
        assert [t["id"] for t in body["types"]] == list(range(6))
        for t in body["types"]:
            w, h = t["default_size"]
            assert w >= 1 and h >= 1
        assert set(body["grades"]) == {"normal", "low", "high"}
        assert body["canvas"] == 64  # the loaded model's side

    def test_types_default_canvas_without_model(self, bare_client):
        assert bare_client.get("/api/v1/types").json()["canvas"] == 256


class TestGenerate:
    def test_roundtrip_and_provenance(self, client):
        layout = wire_layout()
        resp = client.post(
            "/api/v1/generate",
            json={"layout": layout, "options": {"seed": 11, "return_mask": True}},
        )
        assert resp.status_code == 200
        body = resp.json()
        img = decode_png(body["image_png"])
        assert img.size == (64, 64) and img.mode == "RGB"
        mask = decode_png(body["mask_png"])
        assert mask.size == (64, 64) and mask.mode == "P"
        prov = body["provenance"]
        assert prov["seed"] == 11
        assert prov["checkpoint_id"] == client.get("/api/v1/health").json()["checkpoint_id"]
        assert prov["layout_hash"] == layout_hash(layout_from_json(layout))
        assert "timestamp" in prov

    def test_same_seed_same_bytes(self, client):
        layout = wire_layout()
        req = {"layout": layout, "options": {"seed": 5}}
        a = client.post("/api/v1/generate", json=req).json()
        b = client.post("/api/v1/generate", json=req).json()
        assert a["image_png"] == b["image_png"]
        assert a["mask_png"] == b["mask_png"]

    def test_unseeded_cells_respond_to_seed(self, client):
        layout = wire_layout()
        for cell in layout["cells"]:
            del cell["seed"]
        a = client.post(
            "/api/v1/generate", json={"layout": layout, "options": {"seed": 1}}
        ).json()
        b = client.post(
            "/api/v1/generate", json={"layout": layout, "options": {"seed": 2}}
        ).json()
        assert a["image_png"] != b["image_png"]

    def test_seed_defaults_to_random(self, client):
        resp = client.post("/api/v1/generate", json={"layout": wire_layout()})
        assert resp.status_code == 200
        assert isinstance(resp.json()["provenance"]["seed"], int)

    def test_mask_can_be_skipped(self, client):
        resp = client.post(
            "/api/v1/generate",
            json={"layout": wire_layout(), "options": {"seed": 0, "return_mask": False}},
        ).json()
        assert "mask_png" not in resp
        assert "image_png" in resp

    def test_missing_layout_field(self, client):
        resp = client.post("/api/v1/generate", json={"options": {}})
        assert resp.status_code == 400
        assert resp.json()["detail"] == "layout: field is required"

    def test_error_names_the_bad_field(self, client):
        layout = wire_layout()
        layout["cells"][0]["x"] = 3.5
        resp = client.post("/api/v1/generate", json={"layout": layout})
        assert resp.status_code == 400
        assert resp.json()["detail"].startswith("cells[0].x")

    def test_no_checkpoint_means_unavailable(self, bare_client):
        resp = bare_client.post("/api/v1/generate", json={"layout": wire_layout()})
        assert resp.status_code == 503

    def test_cell_budget(self, client):
        layout = wire_layout(n=0)
        layout["cells"] = [
            {"type": "epithelial", "x": 0.5, "y": 0.5, "w": 2, "h": 2}
            for _ in range(1025)
        ]
        resp = client.post("/api/v1/generate", json={"layout": layout})
        assert resp.status_code == 400
        assert "1024" in resp.json()["detail"]

    def test_canvas_must_match_checkpoint(self, client):
        resp = client.post("/api/v1/generate", json={"layout": wire_layout(canvas=128)})
        assert resp.status_code == 400
        assert resp.json()["detail"].startswith("canvas:")


class TestSynthesize:
    def test_returns_valid_layout(self, client):
        resp = client.post(
            "/api/v1/layouts/synthesize",
            json={
                "grade": "normal",
                "image_size": 256,
                "seed": 3,
                "cellularities": {"epithelial": 0.4, "lymphocyte": 0.3},
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        layout = layout_from_json(body["layout"])
        assert len(layout.cells) > 0
        assert body["layout_hash"] == layout_hash(layout)

    def test_same_seed_same_hash(self, client):
        req = {
            "grade": "high",
            "image_size": 256,
            "seed": 9,
            "cellularities": {"epithelial": 0.4, "plasma": 0.2},
        }
        a = client.post("/api/v1/layouts/synthesize", json=req).json()
        b = client.post("/api/v1/layouts/synthesize", json=req).json()
        assert a["layout_hash"] == b["layout_hash"]

    def test_bad_grade_is_client_error(self, client):
        resp = client.post("/api/v1/layouts/synthesize", json={"grade": "bogus"})
        assert resp.status_code == 400

    def test_placement_failure_is_unprocessable(self, client, monkeypatch):
        from synclay.synth import PlacementError

        def always_fails(params):
            raise PlacementError(
                "could not place all cells",
                achieved={"epithelial": 3},
                requested={"epithelial": 50},
            )

        monkeypatch.setattr("synclay.service.synthesize_layout", always_fails)
        resp = client.post("/api/v1/layouts/synthesize", json={"grade": "normal"})
        assert resp.status_code == 422
        detail = resp.json()["detail"]
        assert detail["achieved"] == {"epithelial": 3}
        assert detail["requested"] == {"epithelial": 50}


class TestLayoutCrud:
    def test_create_get_update_delete(self, client):
        layout = wire_layout()
        created = client.put("/api/v1/layouts/demo", json={"layout": layout})
        assert created.status_code == 200
        assert created.json()["version"] == 1

        got = client.get("/api/v1/layouts/demo")
        assert got.status_code == 200
        assert got.json()["version"] == 1
        assert layout_from_json(got.json()["layout"]).canvas == (64, 64)

        # absent version means "current", so a blind update succeeds
        updated = client.put("/api/v1/layouts/demo", json={"layout": layout})
        assert updated.json()["version"] == 2

        stale = client.put(
            "/api/v1/layouts/demo", json={"layout": layout, "version": 1}
        )
        assert stale.status_code == 409
        assert stale.json()["detail"]["current_version"] == 2

        matched = client.put(
            "/api/v1/layouts/demo", json={"layout": layout, "version": 2}
        )
        assert matched.json()["version"] == 3

        assert client.delete("/api/v1/layouts/demo").status_code == 204
        assert client.delete("/api/v1/layouts/demo").status_code == 404
        assert client.get("/api/v1/layouts/demo").status_code == 404

    def test_put_validates_layout(self, client):
        layout = wire_layout()
        del layout["cells"][0]["w"]
        resp = client.put("/api/v1/layouts/bad", json={"layout": layout})
        assert resp.status_code == 400
        assert resp.json()["detail"].startswith("cells[0].w")

    def test_pagination(self, client):
        layout = wire_layout()
        for k in range(5):
            client.put(f"/api/v1/layouts/l{k}", json={"layout": layout})
        page = client.get("/api/v1/layouts", params={"offset": 1, "limit": 2}).json()
        assert page["total"] == 5
        assert page["offset"] == 1 and page["limit"] == 2
        assert [item["id"] for item in page["items"]] == ["l1", "l2"]
        expected = layout_hash(layout_from_json(layout))
        assert all(item["layout_hash"] == expected for item in page["items"])


class TestStoreUnit:
    def test_persists_across_instances(self, tmp_path):
        path = tmp_path / "store.json"
        first = LayoutStore(path)
        first.put("a", wire_layout(), None)
        second = LayoutStore(path)
        assert second.get("a")["version"] == 1

    def test_version_conflict_carries_current(self, tmp_path):
        store = LayoutStore(tmp_path / "store.json")
        store.put("a", wire_layout(), None)
        store.put("a", wire_layout(), 1)
        with pytest.raises(VersionConflict) as err:
            store.put("a", wire_layout(), 1)
        assert err.value.current == 2

    def test_no_tmp_file_left_behind(self, tmp_path):
        path = tmp_path / "store.json"
        store = LayoutStore(path)
        store.put("a", wire_layout(), None)
        assert not path.with_suffix(".tmp").exists()
        assert json.loads(path.read_text())["layouts"]["a"]["version"] == 1


class TestStaticUi:
    def test_bundle_served_below_api_routes(self, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>editor</body></html>")
        (ui / "app.js").write_text("export {};")
        app = create_app(
            checkpoint_dir=None, store_path=tmp_path / "layouts.json", ui_dir=ui
        )
        client = TestClient(app)
        assert "editor" in client.get("/").text
        assert client.get("/app.js").status_code == 200
        # the api prefix must keep precedence over the catch-all mount
        assert client.get("/api/v1/health").json()["model_loaded"] is False

    def test_no_mount_by_default(self, tmp_path):
        app = create_app(checkpoint_dir=None, store_path=tmp_path / "layouts.json")
        assert TestClient(app).get("/").status_code == 404
