"""Command line interface: subcommands, config layering, file outputs."""

import json

import numpy as np
import pytest
import torch
from click.testing import CliRunner
from PIL import Image

from synclay.checkpoint import save_checkpoint
from synclay.cli import main
from synclay.fixtures import make_fixture_dataset, random_box_layout
from synclay.generator import ModelConfig, SynthesisModel
from synclay.layout import load_layout, save_layout
from synclay.losses import LossWeights
from synclay.segnet import train_segnet


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def cli_checkpoint(tmp_path_factory, tiny_records):
    torch.manual_seed(0)
    model = SynthesisModel(ModelConfig(embed_dim=8, image_size=64, base_channels=16))
    segnet = train_segnet(tiny_records[:2], epochs=1)
    path = tmp_path_factory.mktemp("cli_ckpt")
    save_checkpoint(path, model, segnet=segnet, weights=LossWeights(), phase=2)
    return path


class TestLayoutSynth:
    def test_writes_layout_json(self, runner, tmp_path):
        out = tmp_path / "layout.json"
        result = runner.invoke(
            main,
            [
                "layout", "synth",
                "--grade", "normal",
                "--cellularity", "epithelial=0.4",
                "--cellularity", "lymphocyte=0.2",
                "--seed", "1",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        saved = load_layout(out)
        assert len(saved.cells) > 0
        assert "cells)" in result.output

    def test_same_seed_same_file(self, runner, tmp_path):
        args = [
            "layout", "synth",
            "--cellularity", "epithelial=0.4",
            "--seed", "3",
        ]
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
        assert a.read_text() == b.read_text()

    def test_malformed_cellularity_spec(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["layout", "synth", "--cellularity", "epithelial",
             "--out", str(tmp_path / "x.json")],
        )
        assert result.exit_code != 0
        assert "name=value" in result.output

    def test_bad_grade_rejected_at_parse(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["layout", "synth", "--grade", "worst", "--out", str(tmp_path / "x.json")],
        )
        assert result.exit_code == 2


class TestConfigLayering:
    def _synth(self, runner, tmp_path, extra_args=(), env=None, config_text=None):
        out = tmp_path / f"out_{len(list(tmp_path.iterdir()))}.json"
        args = ["layout", "synth", "--cellularity", "epithelial=0.4", "--out", str(out)]
        if config_text is not None:
            cfg = tmp_path / "config.toml"
            cfg.write_text(config_text)
            args = ["--config", str(cfg)] + args
        result = runner.invoke(main, args + list(extra_args), env=env)
        assert result.exit_code == 0, result.output
        return out.read_text()

    def test_config_file_sets_defaults(self, runner, tmp_path):
        from_file = self._synth(
            runner, tmp_path,
            config_text='[layout.synth]\nseed = 5\n',
        )
        explicit = self._synth(runner, tmp_path, extra_args=["--seed", "5"])
        assert from_file == explicit

    def test_env_overrides_file(self, runner, tmp_path):
        layered = self._synth(
            runner, tmp_path,
            config_text='[layout.synth]\nseed = 5\n',
            env={"SYNCLAY_LAYOUT_SYNTH_SEED": "6"},
        )
        explicit = self._synth(runner, tmp_path, extra_args=["--seed", "6"])
        assert layered == explicit

    def test_flag_overrides_env_and_file(self, runner, tmp_path):
        layered = self._synth(
            runner, tmp_path,
            config_text='[layout.synth]\nseed = 5\n',
            env={"SYNCLAY_LAYOUT_SYNTH_SEED": "6"},
            extra_args=["--seed", "7"],
        )
        explicit = self._synth(runner, tmp_path, extra_args=["--seed", "7"])
        assert layered == explicit


class TestIngest:
    def test_conic_directory(self, runner, tmp_path, rng):
        src = tmp_path / "src"
        src.mkdir()
        images = rng.integers(0, 256, size=(3, 64, 64, 3), dtype=np.uint8)
        labels = np.zeros((3, 64, 64, 2), dtype=np.int32)
        for k in range(3):
            labels[k, 5:15, 5:15, 0] = 1
            labels[k, 5:15, 5:15, 1] = 2
            labels[k, 30:38, 30:38, 0] = 2
            labels[k, 30:38, 30:38, 1] = 4
        np.save(src / "images.npy", images)
        np.save(src / "labels.npy", labels)
        out = tmp_path / "dataset"
        result = runner.invoke(
            main,
            ["ingest", "--format", "conic", "--in", str(src), "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        assert "converted 3 records" in result.output
        assert (out / "train").exists()

    def test_requires_existing_source(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["ingest", "--format", "conic", "--in", str(tmp_path / "nope"),
             "--out", str(tmp_path / "o")],
        )
        assert result.exit_code == 2


class TestInfer:
    def test_writes_pair_and_provenance(self, runner, tmp_path, cli_checkpoint):
        layout = random_box_layout(np.random.default_rng(0), 4, canvas=(64, 64))
        layout_path = tmp_path / "layout.json"
        save_layout(layout, layout_path)
        out = tmp_path / "render"
        result = runner.invoke(
            main,
            [
                "infer",
                "--checkpoint", str(cli_checkpoint),
                "--layout", str(layout_path),
                "--seed", "12",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        img = Image.open(out / "image.png")
        assert img.size == (64, 64)
        mask = Image.open(out / "mask.png")
        assert mask.mode == "P"
        provenance = json.loads((out / "provenance.json").read_text())
        assert provenance["seed"] == 12
        assert len(provenance["checkpoint_id"]) == 12
        assert len(provenance["layout_hash"]) == 64

    def test_canvas_mismatch_fails(self, runner, tmp_path, cli_checkpoint):
        layout = random_box_layout(np.random.default_rng(0), 4, canvas=(128, 128))
        layout_path = tmp_path / "layout.json"
        save_layout(layout, layout_path)
        result = runner.invoke(
            main,
            ["infer", "--checkpoint", str(cli_checkpoint),
             "--layout", str(layout_path), "--out", str(tmp_path / "o")],
        )
        assert result.exit_code != 0


class TestEvalFid:
    def test_identical_sets_read_zero(self, runner, tmp_path):
        data = tmp_path / "fixture"
        make_fixture_dataset(data, "train", n_records=4, image_size=64, seed=0)
        result = runner.invoke(
            main,
            ["eval", "fid", "--real", str(data), "--fake", str(data),
             "--split", "train"],
        )
        assert result.exit_code == 0, result.output
        line = next(l for l in result.output.splitlines() if l.startswith("fid "))
        assert float(line.split()[1]) < 1e-3
