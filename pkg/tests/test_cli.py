import json

import numpy as np
import pytest

from conftest import random_snapshots, small_schema
from tabfusion.cli import EXIT_CONFIG, EXIT_MISSING_FILE, EXIT_OK, main
from tabfusion.config import RunConfig
from tabfusion.data import save_dataset


@pytest.fixture
def workspace(tmp_path):
    """Small dataset + config on disk, ready for CLI runs."""
    schema = small_schema(with_assets=True)
    snaps = random_snapshots(schema, 24, seed=0, label_rule=lambda v, rng: int(v["age"] > 0))
    out_schema = save_dataset(snaps, schema, tmp_path / "data.csv", tmp_path / "emb.bin")
    out_schema.save(tmp_path / "schema.json")
    cfg = RunConfig(
        d=8,
        heads=2,
        n_layers=1,
        ffn_dim=16,
        d_prime=8,
        batch_size=8,
        pretrain_steps=2,
        finetune_steps=4,
        d_rf=32,
        warmup_steps=2,
        decay_steps=10,
        seed=1,
    )
    cfg.save(tmp_path / "config.json")
    return tmp_path


def base_args(ws):
    return [
        "--config", str(ws / "config.json"),
        "--schema", str(ws / "schema.json"),
        "--data", str(ws / "data.csv"),
        "--embeddings", str(ws / "emb.bin"),
    ]


def run_finetune(ws):
    rc = main(
        ["--config", str(ws / "config.json"), "finetune"]
        + base_args(ws)[2:]
        + ["--task", "risk", "--out-checkpoint", str(ws / "model.ckpt")]
    )
    assert rc == EXIT_OK
    return ws / "model.ckpt"


class TestBasics:
    def test_no_subcommand_is_config_error(self, capsys):
        assert main([]) == EXIT_CONFIG

    def test_dry_run_touches_nothing(self, workspace, capsys):
        rc = main(
            ["--config", str(workspace / "config.json"), "--dry-run", "pretrain"]
            + base_args(workspace)[2:]
            + ["--out-checkpoint", str(workspace / "x.ckpt")]
        )
        assert rc == EXIT_OK
        assert "dry-run ok" in capsys.readouterr().out
        assert not (workspace / "x.ckpt").exists()

    def test_missing_schema_file(self, workspace, capsys):
        rc = main(
            ["pretrain", "--schema", str(workspace / "nope.json"),
             "--data", str(workspace / "data.csv"),
             "--out-checkpoint", str(workspace / "x.ckpt")]
        )
        assert rc == EXIT_MISSING_FILE
        assert "error:missing-file" in capsys.readouterr().err

    def test_bad_config_file(self, workspace, capsys):
        (workspace / "bad.json").write_text("{broken")
        rc = main(
            ["--config", str(workspace / "bad.json"), "pretrain"]
            + base_args(workspace)[2:]
            + ["--out-checkpoint", str(workspace / "x.ckpt")]
        )
        assert rc == EXIT_CONFIG
        assert "error:config" in capsys.readouterr().err

    def test_unknown_config_key(self, workspace, capsys):
        (workspace / "bad.json").write_text('{"mystery_knob": 3}')
        rc = main(
            ["--config", str(workspace / "bad.json"), "pretrain"]
            + base_args(workspace)[2:]
            + ["--out-checkpoint", str(workspace / "x.ckpt")]
        )
        assert rc == EXIT_CONFIG


class TestTrainingCommands:
    def test_pretrain_writes_checkpoint_and_manifest(self, workspace):
        rc = main(
            ["--config", str(workspace / "config.json"), "pretrain"]
            + base_args(workspace)[2:]
            + ["--out-checkpoint", str(workspace / "pre.ckpt"),
               "--loss-log", str(workspace / "loss.log")]
        )
        assert rc == EXIT_OK
        assert (workspace / "pre.ckpt").exists()
        assert "total=" in (workspace / "loss.log").read_text()
        manifest = json.loads((workspace / "pre.ckpt.manifest.json").read_text())
        assert set(manifest["inputs"]) == {"schema", "data"}
        assert manifest["config"]["d"] == 8

    def test_finetune_then_predict_deterministic(self, workspace):
        ckpt = run_finetune(workspace)
        common = (
            ["--config", str(workspace / "config.json"), "predict"]
            + base_args(workspace)[2:]
            + ["--checkpoint", str(ckpt), "--task", "risk"]
        )
        assert main(common + ["--out", str(workspace / "p1.jsonl")]) == EXIT_OK
        assert main(common + ["--out", str(workspace / "p2.jsonl")]) == EXIT_OK
        a = (workspace / "p1.jsonl").read_bytes()
        assert a == (workspace / "p2.jsonl").read_bytes()
        lines = [json.loads(l) for l in a.decode().splitlines()]
        assert len(lines) == 24
        for rec in lines:
            assert rec["calibrated"] is True
            assert abs(sum(rec["probs"]) - 1.0) < 1e-6
            assert rec["variance"] >= 0

    def test_predict_unknown_task(self, workspace, capsys):
        ckpt = run_finetune(workspace)
        rc = main(
            ["--config", str(workspace / "config.json"), "predict"]
            + base_args(workspace)[2:]
            + ["--checkpoint", str(ckpt), "--task", "ghost", "--out", str(workspace / "p.jsonl")]
        )
        assert rc == EXIT_CONFIG
        assert "no head" in capsys.readouterr().err

    def test_eval_reports_metrics(self, workspace, capsys):
        ckpt = run_finetune(workspace)
        rc = main(
            ["--config", str(workspace / "config.json"), "eval"]
            + base_args(workspace)[2:]
            + ["--checkpoint", str(ckpt), "--task", "risk", "--out", str(workspace / "m.json")]
        )
        assert rc == EXIT_OK
        result = json.loads((workspace / "m.json").read_text())
        assert set(result) >= {"auroc", "auprc", "ece", "n"}
        assert 0.0 <= result["auroc"] <= 1.0

    def test_export_embeddings(self, workspace):
        ckpt = run_finetune(workspace)
        rc = main(
            ["--config", str(workspace / "config.json"), "export-embeddings"]
            + base_args(workspace)[2:]
            + ["--checkpoint", str(ckpt), "--out-prefix", str(workspace / "emb_out"),
               "--pca2d", "--task", "risk"]
        )
        assert rc == EXIT_OK
        raw = np.fromfile(workspace / "emb_out.f32", dtype="<f4")
        assert raw.size == 24 * 8
        index = (workspace / "emb_out.index.txt").read_text().splitlines()
        assert index[0].startswith("# n=24")
        pca = np.loadtxt(workspace / "emb_out.pca2d.txt")
        assert pca.shape == (24, 2)

    def test_select_features(self, workspace):
        rc = main(
            ["--config", str(workspace / "config.json"), "select-features"]
            + base_args(workspace)[2:]
            + ["--task", "risk", "--tolerance", "0.05",
               "--out-schema", str(workspace / "reduced.json"),
               "--trace", str(workspace / "trace.txt")]
        )
        assert rc == EXIT_OK
        from tabfusion.data import FeatureSchema

        reduced = FeatureSchema.load(workspace / "reduced.json")
        assert 1 <= len(reduced) <= 6
        assert "baseline" in (workspace / "trace.txt").read_text()


class TestBenchmarkCommand:
    def make_csv(self, path, n=60, seed=0):
        rng = np.random.default_rng(seed)
        rows = ["age,job,target"]
        for _ in range(n):
            age = rng.normal()
            label = int(age > 0)
            job = rng.choice(["a", "b", "c"])
            rows.append(f"{age:.4f},{job},{label}")
        path.write_text("\n".join(rows) + "\n")

    def test_benchmark_on_synthetic_csv(self, workspace, capsys):
        self.make_csv(workspace / "adult.csv")
        rc = main(
            ["--config", str(workspace / "config.json"), "benchmark",
             "--dataset", "adult", "--data", str(workspace / "adult.csv"),
             "--folds", "3", "--out", str(workspace / "metrics.json")]
        )
        assert rc == EXIT_OK
        report = json.loads((workspace / "metrics.json").read_text())
        assert len(report["folds"]) == 3
        assert "auroc" in report["summary"]
        assert "mean:" in capsys.readouterr().out

    def test_benchmark_missing_file_names_source(self, workspace, capsys):
        rc = main(
            ["benchmark", "--dataset", "blastchar",
             "--data-dir", str(workspace / "empty")]
        )
        assert rc == EXIT_MISSING_FILE
        assert "download it from" in capsys.readouterr().err
