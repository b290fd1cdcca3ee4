import json

import numpy as np
import pytest

import edgereg.cli as cli
from edgereg.cli import EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, EXIT_USAGE, run
from edgereg.errors import DivergenceError
from edgereg.evaluation import EvalReport
from edgereg.fileio import load_pgm, read_field, save_pgm
from edgereg.grid import Image2D

FAST = ["--levels", "1", "--iters-per-level", "3"]


@pytest.fixture
def pair_dir(tmp_path):
    out = tmp_path / "pair"
    assert run(["synth", "--seed", "1", "--size", "64", "--max-disp", "4", "--out", str(out)]) == EXIT_OK
    return out


def _register_args(pair_dir, out, *extra):
    return [
        "register",
        "--fixed", str(pair_dir / "fixed.pgm"),
        "--moving", str(pair_dir / "moving.pgm"),
        "--out", str(out),
        *extra,
    ]


class TestUsage:

    def test_no_command(self):
        assert run([]) == EXIT_USAGE

    def test_version(self, capsys):
        assert run(["--version"]) == EXIT_OK
        assert "edgereg 0.1.0" in capsys.readouterr().out

    def test_help_lists_defaults(self, capsys):
        assert run(["register", "--help"]) == EXIT_OK
        out = " ".join(capsys.readouterr().out.split())
        assert "(default: 1.0)" in out
        assert "--iters-per-level" in out and "(default: 300)" in out

    def test_bad_choice(self, tmp_path):
        args = ["register", "--fixed", "a.pgm", "--moving", "b.pgm", "--out", str(tmp_path), "--im-sim", "ssd"]
        assert run(args) == EXIT_USAGE

    def test_bad_list(self, tmp_path):
        assert run(["bench", "--out", str(tmp_path), "--sweep-lambda2", "a,b"]) == EXIT_USAGE

    def test_error_message_on_stderr(self, capsys):
        run([])
        assert capsys.readouterr().err.startswith("[ERROR]")


class TestEdgemap:

    def test_writes_normalized_edges(self, tmp_path, random_image):
        src = tmp_path / "in.pgm"
        save_pgm(random_image(20, 20, smooth=1.0), src)
        out = tmp_path / "edges.pgm"
        assert run(["edgemap", "--input", str(src), "--out", str(out), "--sigma", "0.5"]) == EXIT_OK
        edges = load_pgm(out)
        assert edges.shape == (20, 20)
        assert edges.data.max() == 1.0

    def test_missing_input(self, tmp_path):
        args = ["edgemap", "--input", str(tmp_path / "absent.pgm"), "--out", str(tmp_path / "e.pgm")]
        assert run(args) == EXIT_DATA

    def test_malformed_input(self, tmp_path):
        src = tmp_path / "bad.pgm"
        src.write_bytes(b"P9\n")
        assert run(["edgemap", "--input", str(src), "--out", str(tmp_path / "e.pgm")]) == EXIT_DATA


class TestSynth:

    def test_writes_pair(self, pair_dir):
        manifest = json.loads((pair_dir / "manifest.json").read_text())
        assert manifest["seed"] == 1 and manifest["size"] == 64
        for name in manifest["files"].values():
            assert (pair_dir / name).is_file()

    def test_too_small(self, tmp_path):
        assert run(["synth", "--size", "16", "--out", str(tmp_path)]) == EXIT_USAGE


class TestRegister:

    def test_outputs(self, pair_dir, tmp_path):
        out = tmp_path / "reg"
        args = _register_args(
            pair_dir, out,
            "--fixed-seg", str(pair_dir / "fixed_seg.pgm"),
            "--moving-seg", str(pair_dir / "moving_seg.pgm"),
            *FAST,
        )
        assert run(args) == EXIT_OK
        assert read_field(out / "disp.edr1").shape == (64, 64)
        assert read_field(out / "velocity.edr1").shape == (64, 64)
        assert load_pgm(out / "warped.pgm").shape == (64, 64)
        report = EvalReport.from_json((out / "report.json").read_text())
        assert 0.0 < report.dice_mean <= 1.0
        assert len(report.loss_history) == 4

    def test_report_without_segmentations(self, pair_dir, tmp_path):
        out = tmp_path / "reg"
        assert run(_register_args(pair_dir, out, *FAST)) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert "dice_mean" not in report
        assert report["config"]["iters_per_level"] == 3

    def test_config_file_with_flag_override(self, pair_dir, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"lambda2": 0.0, "levels": 1, "iters_per_level": 2}))
        out = tmp_path / "reg"
        assert run(_register_args(pair_dir, out, "--config", str(config), "--iters-per-level", "3")) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["lambda2"] == 0.0
        assert report["config"]["iters_per_level"] == 3

    @pytest.mark.parametrize("content", ["[1, 2]", '{"colour": "red"}', "{not json"])
    def test_bad_config_file(self, pair_dir, tmp_path, content):
        config = tmp_path / "cfg.json"
        config.write_text(content)
        assert run(_register_args(pair_dir, tmp_path / "reg", "--config", str(config))) == EXIT_USAGE

    def test_boolean_flag(self, pair_dir, tmp_path):
        out = tmp_path / "reg"
        assert run(_register_args(pair_dir, out, "--no-edge-normalize", *FAST)) == EXIT_OK
        assert json.loads((out / "report.json").read_text())["config"]["edge_normalize"] is False

    def test_unpaired_segmentation(self, pair_dir, tmp_path):
        args = _register_args(pair_dir, tmp_path / "reg", "--fixed-seg", str(pair_dir / "fixed_seg.pgm"))
        assert run(args) == EXIT_USAGE

    def test_shape_mismatch(self, pair_dir, tmp_path):
        other = tmp_path / "small.pgm"
        save_pgm(Image2D(np.full((32, 32), 0.5)), other)
        args = ["register", "--fixed", str(pair_dir / "fixed.pgm"), "--moving", str(other), "--out", str(tmp_path)]
        assert run(args) == EXIT_DATA

    def test_divergence_exit_code(self, pair_dir, tmp_path, monkeypatch):
        def diverge(fixed, moving, cfg):
            raise DivergenceError("non-finite total loss nan", 7)

        monkeypatch.setattr(cli, "register_pair", diverge)
        assert run(_register_args(pair_dir, tmp_path / "reg")) == EXIT_DIVERGENCE


class TestEval:

    def test_with_pair_manifest(self, pair_dir, tmp_path):
        reg = tmp_path / "reg"
        assert run(_register_args(pair_dir, reg, *FAST)) == EXIT_OK
        out = tmp_path / "eval.json"
        args = ["eval", "--disp", str(reg / "disp.edr1"), "--pair", str(pair_dir / "manifest.json"), "--out", str(out)]
        assert run(args) == EXIT_OK
        report = EvalReport.from_json(out.read_text())
        assert set(report.dice_per_label) <= {1, 2, 3, 4}

    def test_needs_segmentations(self, pair_dir, tmp_path):
        args = ["eval", "--disp", str(pair_dir / "gt_disp.edr1"), "--out", str(tmp_path / "eval.json")]
        assert run(args) == EXIT_USAGE


class TestBench:

    def test_tiny_run(self, tmp_path):
        args = [
            "bench", "--pairs", "1", "--size", "64", "--max-disp", "4",
            "--im-sims", "mse", "--sweep-lambda2", "0,1", "--out", str(tmp_path), *FAST,
        ]
        assert run(args) == EXIT_OK
        assert (tmp_path / "cells.csv").read_text().count("\n") == 3
        assert (tmp_path / "table.csv").is_file()
