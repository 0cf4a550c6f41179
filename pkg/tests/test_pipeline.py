from __future__ import annotations

import filecmp
import os
import shutil

import numpy as np
import pytest

from traveltomo import cli
from traveltomo.config import PipelineConfig, dump_config
from traveltomo.io import read_f3d
from traveltomo.pipeline import (STAGES, StageError, check_stage, format_sweep_table,
                                 parse_sweep_values, run_all, run_noise, run_reconstruct, score,
                                 stage_dir, sweep, true_n)

SMALL = PipelineConfig(sources=11, forward_step=1 / 10, max_iter=15)


@pytest.fixture(scope="module")
def done(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    run_all(SMALL, wd)
    return wd


def tree(wd):
    out = {}
    for root, _, files in os.walk(wd):
        for f in files:
            p = os.path.join(root, f)
            out[os.path.relpath(p, wd)] = open(p, "rb").read()
    return out


def test_all_stages_written(done):
    for stage in STAGES:
        check_stage(done, stage, SMALL)
    assert len(list(stage_dir(done, "forward").glob("*.f3d"))) == 11 * 6
    n, spacing, origin = read_f3d(stage_dir(done, "reconstruct") / "n.f3d")
    assert n.shape == (11, 11, 11) and np.all(n >= 1)
    assert spacing == pytest.approx((0.1, 0.1, 0.1)) and origin == (0.0, 0.0, 0.0)
    metrics = (stage_dir(done, "evaluate") / "metrics.txt").read_text()
    assert "rel_L2_error" in metrics and "computed_contrast" in metrics
    assert (stage_dir(done, "export") / "slice_computed_z.csv").is_file()
    assert (stage_dir(done, "export") / "n.vtk").read_text().startswith("# vtk")


def test_deterministic(done, tmp_path):
    run_all(SMALL, tmp_path)
    a, b = tree(done), tree(tmp_path)
    assert a.keys() == b.keys()
    for key in a:
        assert a[key] == b[key], key


def test_zero_noise_is_byte_identical(done, tmp_path):
    wd = tmp_path / "wd"
    shutil.copytree(done, wd)
    cfg = SMALL.replace(delta=0.0)
    run_noise(cfg, wd)
    names = sorted(p.name for p in stage_dir(wd, "forward").glob("*.f3d"))
    match, mismatch, errors = filecmp.cmpfiles(stage_dir(wd, "forward"), stage_dir(wd, "noise"),
                                               names, shallow=False)
    assert len(match) == len(names) and not mismatch and not errors


def test_missing_stage_named(tmp_path):
    with pytest.raises(StageError, match="'project'"):
        run_reconstruct(SMALL, tmp_path)


def test_config_mismatch_refused(done):
    with pytest.raises(StageError, match="different configuration"):
        run_reconstruct(SMALL.replace(N=4), done)


def test_corrupt_output_detected(done, tmp_path):
    wd = tmp_path / "wd"
    shutil.copytree(done, wd)
    with open(stage_dir(wd, "project") / "Gx_top.f3d", "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(StageError, match="manifest hash"):
        run_reconstruct(SMALL, wd)
    (stage_dir(wd, "project") / "manifest.txt").write_text("garbage\n")
    with pytest.raises(StageError, match="corrupt"):
        run_reconstruct(SMALL, wd)


def test_perfect_score():
    n = true_n(SMALL)
    m = score(SMALL, n, n)
    assert m.rel_L2_error == 0.0 and m.computed_contrast == pytest.approx(1.5)


def test_sweep_table(done):
    assert sweep(SMALL, done, "lambda", []) == []
    rows = sweep(SMALL.replace(max_iter=3), done, "N", [4, 2.5, 0])
    assert rows[0].metrics is not None
    assert rows[1].metrics is None and rows[2].metrics is None
    table = format_sweep_table("N", rows)
    assert table.count("\n") == 4 and table.count("failed") == 2
    assert (done / "sweep_N.txt").read_text() == table


def test_parse_sweep_values():
    assert parse_sweep_values("0, 1 2.5") == [0, 1, 2.5]
    assert parse_sweep_values("") == []
    with pytest.raises(ValueError):
        parse_sweep_values("x")


class TestCli:
    def test_exit_codes(self, done, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        dump_config(SMALL, cfg)
        assert cli.main(["evaluate", "-w", str(done), "-c", str(cfg)]) == 0
        assert "rel_L2_error" in capsys.readouterr().out
        assert cli.main(["reconstruct", "-w", str(tmp_path / "none"), "-c", str(cfg)]) == 2
        assert "project" in capsys.readouterr().err
        with pytest.raises(SystemExit) as exc:
            cli.main(["reconstruct", "--no-such-flag"])
        assert exc.value.code == 1
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 1
        assert cli.main(["config", "--lambda", "-1"]) == 1
        assert cli.main(["config", "-c", str(tmp_path / "missing.txt")]) == 1

    def test_flags_override_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.txt"
        cfg.write_text("lambda = 2\nN = 8\n")
        assert cli.main(["config", "-c", str(cfg), "--lambda", "3"]) == 0
        out = capsys.readouterr().out
        assert "lambda = 3.0" in out and "N = 8" in out

    def test_fraction_flag(self, capsys):
        assert cli.main(["config", "--inversion-h", "1/15", "--forward-step", "1/60"]) == 0
        out = capsys.readouterr().out
        assert f"inversion_h = {1 / 15!r}" in out and f"forward_step = {1 / 60!r}" in out

    def test_empty_sweep(self, tmp_path, capsys):
        assert cli.main(["sweep", "lambda", "-w", str(tmp_path)]) == 0
        assert capsys.readouterr().out.startswith("lambda\t")

    def test_thread_env(self, done, tmp_path, monkeypatch):
        cfg = tmp_path / "c.txt"
        dump_config(SMALL, cfg)
        monkeypatch.setenv(cli.THREADS_ENV, "zero")
        assert cli.main(["evaluate", "-w", str(done), "-c", str(cfg)]) == 1
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        wd = tmp_path / "wd"
        shutil.copytree(done, wd)
        assert cli.main(["run", "-w", str(wd), "-c", str(cfg), "--stages", "forward,noise"]) == 0
        assert tree(wd) == tree(done)

    def test_unknown_stage(self, tmp_path):
        assert cli.main(["run", "-w", str(tmp_path), "--stages", "phantom,bogus"]) == 1
