"""Command-line workflows: dataset files, training, evaluation, bench."""

import json
from pathlib import Path

import numpy as np
import pytest

from evcorridor.cli import main
from evcorridor.data import Dataset


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def small_dataset(workdir):
    path = workdir / "small.evds"
    rc = run_cli("generate-dataset", "--grid-size", 2, "--num-episodes", 10,
                 "--expert-ratio", "1.0", "--random-ratio", "0.0",
                 "--noisy-ratio", "0.0", "--output", path, "--seed", 1,
                 "--quiet")
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def tiny_checkpoint(workdir):
    ds_path = workdir / "train.evds"
    rc = run_cli("generate-dataset", "--grid-size", 2, "--num-episodes", 16,
                 "--output", ds_path, "--seed", 3, "--quiet")
    assert rc == 0
    ckpt = workdir / "model.ckpt"
    rc = run_cli("train", "--dataset", ds_path, "--output", ckpt,
                 "--epochs", 2, "--batch-size", 8, "--hidden-dim", 16,
                 "--num-layers", 1, "--num-heads", 2,
                 "--context-length", 4, "--seed", 0, "--quiet")
    assert rc == 0
    return ckpt


class TestGenerateDataset:
    def test_writes_loadable_dataset(self, small_dataset):
        ds = Dataset.load(small_dataset)
        assert len(ds) == 10
        assert ds.header_extra["stats"]["per_policy"]["greedy"]["count"] == 10

    def test_same_seed_is_byte_identical(self, workdir):
        a = workdir / "a.evds"
        b = workdir / "b.evds"
        for path in (a, b):
            rc = run_cli("generate-dataset", "--grid-size", 2,
                         "--num-episodes", 6, "--output", path,
                         "--seed", 7, "--quiet")
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_mix_fails_nonzero(self, workdir):
        rc = run_cli("generate-dataset", "--grid-size", 2,
                     "--num-episodes", 4, "--expert-ratio", "0.9",
                     "--random-ratio", "0.9", "--noisy-ratio", "0.0",
                     "--output", workdir / "bad.evds", "--quiet")
        assert rc != 0


class TestTrain:
    def test_writes_checkpoint_history_and_figure(self, tiny_checkpoint):
        assert tiny_checkpoint.exists()
        hist = tiny_checkpoint.with_suffix(".history.jsonl")
        rows = [json.loads(l) for l in hist.read_text().splitlines()]
        assert len(rows) == 2
        assert tiny_checkpoint.with_suffix(".loss.png").exists()

    def test_missing_dataset_fails(self, workdir):
        rc = run_cli("train", "--dataset", workdir / "nope.evds",
                     "--output", workdir / "x.ckpt", "--quiet")
        assert rc != 0


class TestEvaluate:
    def test_model_and_baseline_summary(self, workdir, tiny_checkpoint):
        out = workdir / "eval"
        rc = run_cli("evaluate", "--grid-size", 2, "--model", tiny_checkpoint,
                     "--baselines", "ft_evp", "--num-episodes", 2,
                     "--seeds", 0, "--target-return", 0, "--output", out)
        assert rc == 0
        assert (out / "summary.txt").exists()
        assert (out / "metrics.png").exists()
        records = [json.loads(l)
                   for l in (out / "episodes.jsonl").read_text().splitlines()]
        assert {r["policy"] for r in records} == {"dt@0", "ft_evp"}
        assert len(records) == 4

    def test_missing_checkpoint_exits_2(self, workdir):
        rc = run_cli("evaluate", "--grid-size", 2,
                     "--model", workdir / "missing.ckpt",
                     "--output", workdir / "e2")
        assert rc == 2


class TestSweep:
    def test_demand_sweep_rows_and_figure(self, workdir):
        out = workdir / "sweeps"
        rc = run_cli("sweep", "--grid-size", 2, "--axis", "demand",
                     "--values", "0.05", "0.1", "--baseline", "ft_evp",
                     "--num-episodes", 1, "--seeds", 0, "--output", out)
        assert rc == 0
        files = list(out.glob("sweep_demand_*.jsonl"))
        assert files
        rows = [json.loads(l) for l in files[0].read_text().splitlines()]
        assert {r["axis_value"] for r in rows} == {0.05, 0.1}
        assert list(out.glob("sweep_demand_*.png"))

    def test_target_return_sweep_one_row_per_value(self, workdir,
                                                   tiny_checkpoint):
        out = workdir / "sweeps_g"
        rc = run_cli("sweep", "--grid-size", 2, "--axis", "target_return",
                     "--values", "0", "-100", "--model", tiny_checkpoint,
                     "--num-episodes", 1, "--seeds", 0, "--output", out)
        assert rc == 0
        table = list(out.glob("sweep_target_return_*.txt"))[0].read_text()
        assert "-100" in table


class TestBench:
    def test_reports_env_and_model_speed(self, workdir, tiny_checkpoint, capsys):
        out = workdir / "bench.jsonl"
        rc = run_cli("bench", "--sizes", 2, "--seconds", "0.3",
                     "--model", tiny_checkpoint, "--output", out)
        assert rc == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert rows[0]["grid"] == "2x2"
        assert rows[0]["env_steps_per_s"] > 0
        assert rows[0]["model_ms_per_step"] is not None
