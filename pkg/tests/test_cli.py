from __future__ import annotations

import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from retyper.cli import main
from retyper.model import load_checkpoint
from retyper.pipeline import dataset_fingerprint
from retyper.synth import toy_corpus
from retyper.corpus import save_corpus
from retyper.training import build_ablation


@pytest.fixture(scope="module")
def corpus_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    save_corpus(toy_corpus(20, seed=4), path)
    return path


@pytest.fixture(scope="module")
def data_dir(corpus_path, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data") / "processed"
    result = CliRunner().invoke(
        main,
        ["preprocess", "--in", str(corpus_path), "--out", str(out),
         "--seed", "3", "--max-seq-length", "96"],
    )
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def train_config_path(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cfg") / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "model": {
            "d_model": 16, "n_enc_layers": 1, "n_dec_layers": 1, "n_layout_layers": 1,
            "n_heads": 2, "layout_d_model": 8, "layout_n_heads": 2, "dropout": 0.0,
            "max_variables": 8,
        },
        "train": {"batch_size": 8, "learning_rate": 0.001, "epochs": 1, "seed": 2},
    }))
    return path


@pytest.fixture(scope="module")
def run_dir(data_dir, train_config_path, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("run") / "run"
    result = CliRunner().invoke(
        main,
        ["train", "--in", str(data_dir), "--out", str(out), "--config", str(train_config_path)],
    )
    assert result.exit_code == 0, result.output
    return out


class TestPreprocess:
    def test_deterministic_artifacts(self, corpus_path, tmp_path):
        runner = CliRunner()
        fingerprints = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            result = runner.invoke(
                main,
                ["preprocess", "--in", str(corpus_path), "--out", str(out), "--seed", "7"],
            )
            assert result.exit_code == 0, result.output
            fingerprints.append(dataset_fingerprint(out))
        assert fingerprints[0] == fingerprints[1]

    def test_split_manifest_disjoint(self, data_dir):
        manifest = json.loads((data_dir / "manifest.json").read_text())
        seen = {}
        for split, binaries in manifest["binaries"].items():
            for b in binaries:
                assert b not in seen, f"{b} in both {seen.get(b)} and {split}"
                seen[b] = split

    def test_unknown_flag_rejected(self, corpus_path, tmp_path):
        result = CliRunner().invoke(
            main,
            ["preprocess", "--in", str(corpus_path), "--out", str(tmp_path / "x"), "--frobnicate"],
        )
        assert result.exit_code != 0
        assert "no such option" in result.output.lower()


class TestTrain:
    def test_variant_config_applied(self, data_dir, tmp_path, train_config_path):
        out = tmp_path / "run_small"
        result = CliRunner().invoke(
            main,
            ["train", "--in", str(data_dir), "--out", str(out),
             "--config", str(train_config_path), "--variant", "no_data_layout"],
        )
        assert result.exit_code == 0, result.output
        model, _, _ = load_checkpoint(out / "best.pt")
        assert not model.config.use_layout_mask
        # the stored config must equal build_ablation applied to the base
        base = model.config
        import dataclasses
        assert base == build_ablation(dataclasses.replace(base, use_layout_mask=True), "no_data_layout")

    def test_checkpoints_exist(self, run_dir):
        assert (run_dir / "best.pt").exists()
        assert (run_dir / "epoch_001.pt").exists()

    def test_small_variant_matches_published_dimensions(self, data_dir, tmp_path):
        out = tmp_path / "run_small"
        config_path = tmp_path / "small.yaml"
        config_path.write_text(yaml.safe_dump({
            "train": {"batch_size": 8, "learning_rate": 0.001, "epochs": 1, "seed": 0},
        }))
        result = CliRunner().invoke(
            main,
            ["train", "--in", str(data_dir), "--out", str(out),
             "--config", str(config_path), "--variant", "small"],
        )
        assert result.exit_code == 0, result.output
        model, _, _ = load_checkpoint(out / "best.pt")
        config = model.config
        assert (config.n_enc_layers, config.n_dec_layers, config.d_model, config.n_heads) == (3, 3, 256, 4)
        assert config.layout_d_model == 128
        assert config.d_ff == 1024


class TestPredictEvaluate:
    def test_predict_then_evaluate(self, data_dir, run_dir, tmp_path):
        runner = CliRunner()
        preds = tmp_path / "preds.jsonl"
        result = runner.invoke(
            main,
            ["predict", "--in", str(data_dir), "--model", str(run_dir / "best.pt"),
             "--out", str(preds), "--beam", "3"],
        )
        assert result.exit_code == 0, result.output
        assert preds.exists()
        report_dir = tmp_path / "report"
        result = runner.invoke(
            main,
            ["evaluate", "--in", str(data_dir), "--predictions", str(preds),
             "--out", str(report_dir)],
        )
        assert result.exit_code == 0, result.output
        assert (report_dir / "report.json").exists()
        assert (report_dir / "report.txt").exists()
        assert (report_dir / "per_binary.csv").exists()
        assert (report_dir / "figures" / "accuracy_by_partition.png").stat().st_size > 0
        assert (report_dir / "figures" / "per_binary_accuracy.png").stat().st_size > 0
        report = json.loads((report_dir / "report.json").read_text())
        assert "overall" in report["partitions"]
        assert "frequency_by_size" in report["baselines"]

    def test_greedy_flag(self, data_dir, run_dir, tmp_path):
        preds = tmp_path / "greedy.jsonl"
        result = CliRunner().invoke(
            main,
            ["predict", "--in", str(data_dir), "--model", str(run_dir / "best.pt"),
             "--out", str(preds), "--greedy"],
        )
        assert result.exit_code == 0, result.output
        record = json.loads(preds.read_text().splitlines()[0])
        assert all(len(cands) <= 1 for cands in record["variables"])

    def test_evaluate_without_predictions_names_artifact(self, data_dir, tmp_path):
        result = CliRunner().invoke(
            main,
            ["evaluate", "--in", str(data_dir), "--predictions", str(tmp_path / "absent.jsonl"),
             "--out", str(tmp_path / "r")],
        )
        assert result.exit_code != 0
        assert "absent.jsonl" in result.output

    def test_constraints_file(self, data_dir, run_dir, tmp_path):
        from retyper.corpus import load_processed

        fn = load_processed(data_dir / "test.jsonl")[0]
        constraints = {f"{fn.binary_id}/{fn.function_id}": {"0": {"type_id": 2}}}
        constraints_path = tmp_path / "constraints.json"
        constraints_path.write_text(json.dumps(constraints))
        preds = tmp_path / "constrained.jsonl"
        result = CliRunner().invoke(
            main,
            ["predict", "--in", str(data_dir), "--model", str(run_dir / "best.pt"),
             "--out", str(preds), "--beam", "3", "--constraints", str(constraints_path)],
        )
        assert result.exit_code == 0, result.output
        record = next(
            json.loads(line)
            for line in preds.read_text().splitlines()
            if json.loads(line)["function_id"] == fn.function_id
        )
        assert all(c["type_id"] == 2 for c in record["variables"][0])

    def test_predict_deterministic(self, data_dir, run_dir, tmp_path):
        runner = CliRunner()
        outputs = []
        for sub in ("p1", "p2"):
            path = tmp_path / f"{sub}.jsonl"
            result = runner.invoke(
                main,
                ["predict", "--in", str(data_dir), "--model", str(run_dir / "best.pt"),
                 "--out", str(path), "--beam", "2"],
            )
            assert result.exit_code == 0, result.output
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1]


class TestBuildTypelib:
    def test_collects_gold_types(self, corpus_path, tmp_path):
        out = tmp_path / "typelib.jsonl"
        result = CliRunner().invoke(
            main, ["build-typelib", "--in", str(corpus_path), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        canonicals = {rec["canonical"] for rec in lines}
        assert "int" in canonicals
        assert lines[0]["canonical"] == "<Component>"
