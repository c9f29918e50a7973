"""Command-line entry point wiring the whole pipeline.

Subcommands: build-typelib, preprocess, train, predict, evaluate, serve.
Every run logs its resolved configuration; outputs are deterministic for a
fixed seed.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click
import yaml

from . import corpus as C
from . import evaluation as E
from .decoding import Constraint, predict_function
from .figures import render_report_figures
from .model import ModelConfig
from .pipeline import ArtifactBundle, PreprocessConfig, load_dataset, preprocess_corpus, save_dataset
from .training import ABLATION_VARIANTS, TrainConfig, build_ablation, train
from .typelib import COMPONENT_NAME, TypeLibrary

logger = logging.getLogger("retyper")


def _log_config(command: str, resolved: dict) -> None:
    logger.info("%s configuration: %s", command, json.dumps(resolved, sort_keys=True, default=str))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        return yaml.safe_load(text) or {}
    return json.loads(text)


def _fail(message: str) -> None:
    raise click.ClickException(message)


@click.group()
@click.option("--verbose", is_flag=True, help="debug logging")
def main(verbose: bool) -> None:
    """Predict developer-style types and names for decompiled variables."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


@main.command("build-typelib")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def build_typelib(in_path: str, out_path: str) -> None:
    """Collect gold types from a corpus into a type library file."""
    _log_config("build-typelib", {"in": in_path, "out": out_path})
    functions = C.load_corpus(in_path)
    lib = TypeLibrary()
    for fn in sorted(functions, key=lambda f: (f.binary_id, f.function_id)):
        for var in fn.variables:
            canonical = var.gold_type_canonical
            if canonical is not None and canonical != COMPONENT_NAME:
                try:
                    lib.register_canonical(canonical)
                except Exception:
                    logger.warning("skipping unparseable gold type: %s", canonical)
    lib.save(out_path)
    click.echo(f"wrote {len(lib)} entries to {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-seq-length", type=int, default=None)
def preprocess(in_path: str, out_dir: str, seed: int, config_path: str | None, max_seq_length: int | None) -> None:
    """Encode a raw corpus into a processed dataset directory."""
    overrides = _load_config_file(config_path).get("preprocess", _load_config_file(config_path))
    kwargs = {k: v for k, v in overrides.items() if k in PreprocessConfig.__dataclass_fields__}
    if "ratios" in kwargs:
        kwargs["ratios"] = tuple(kwargs["ratios"])
    kwargs["seed"] = seed
    if max_seq_length is not None:
        kwargs["max_seq_length"] = max_seq_length
    config = PreprocessConfig(**kwargs)
    _log_config("preprocess", {"in": in_path, "out": out_dir, **asdict(config)})
    functions = C.load_corpus(in_path)
    dataset = preprocess_corpus(functions, config)
    save_dataset(dataset, out_dir)
    click.echo(
        "processed "
        + ", ".join(f"{name}: {len(fns)}" for name, fns in dataset.splits.items())
        + f"; {len(dataset.lib)} types, {len(dataset.subword_vocab)} subwords"
    )


def _model_config_from(overrides: dict, dataset) -> ModelConfig:
    kwargs = {k: v for k, v in overrides.items() if k in ModelConfig.__dataclass_fields__}
    kwargs.setdefault("type_vocab_size", len(dataset.lib))
    kwargs.setdefault("name_vocab_size", len(dataset.name_vocab))
    kwargs.setdefault("subword_vocab_size", len(dataset.subword_vocab))
    kwargs.setdefault("layout_vocab_size", len(dataset.layout_vocab))
    kwargs.setdefault("max_seq_length", dataset.manifest["config"]["max_seq_length"])
    return ModelConfig(**kwargs)


@main.command("train")
@click.option("--in", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--variant", type=click.Choice(ABLATION_VARIANTS), default="full", show_default=True)
@click.option("--seed", type=int, default=None, help="override the training seed")
def train_cmd(data_dir: str, out_dir: str, config_path: str | None, variant: str, seed: int | None) -> None:
    """Train a model on a processed dataset."""
    config_file = _load_config_file(config_path)
    dataset = load_dataset(data_dir)
    model_config = build_ablation(_model_config_from(config_file.get("model", {}), dataset), variant)
    train_kwargs = {
        k: v for k, v in config_file.get("train", {}).items() if k in TrainConfig.__dataclass_fields__
    }
    if seed is not None:
        train_kwargs["seed"] = seed
    train_config = TrainConfig(**train_kwargs)
    _log_config(
        "train",
        {"in": data_dir, "out": out_dir, "variant": variant,
         "model": asdict(model_config), "train": asdict(train_config)},
    )
    _, history = train(
        dataset.splits["train"],
        dataset.splits["valid"],
        model_config,
        train_config,
        dataset.layout_vocab,
        dataset.subword_vocab.pad_id,
        dataset.hashes(),
        out_dir=out_dir,
    )
    final = history[-1] if history else None
    click.echo(
        f"trained {len(history)} epochs; final loss "
        + (f"{final.mean_loss:.4f}" if final else "n/a")
        + (f", valid accuracy {final.valid_accuracy:.3f}" if final and final.valid_accuracy is not None else "")
    )


def _load_constraints(path: str | None) -> dict[tuple[str, str], Constraint]:
    """Constraints file: {"binary_id/function_id": {"0": {"type_id": 3, "name_id": 7}}}."""
    if path is None:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    out: dict[tuple[str, str], Constraint] = {}
    for key, per_var in obj.items():
        binary_id, _, function_id = key.partition("/")
        types = {}
        names = {}
        for index, spec in per_var.items():
            if "type_id" in spec:
                types[int(index)] = int(spec["type_id"])
            if "name_id" in spec:
                names[int(index)] = int(spec["name_id"])
        out[(binary_id, function_id)] = Constraint(types, names)
    return out


@main.command()
@click.option("--in", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--split", type=click.Choice(C.SPLIT_NAMES), default="test", show_default=True)
@click.option("--beam", type=int, default=5, show_default=True)
@click.option("--greedy", is_flag=True, help="greedy decoding instead of beam search")
@click.option("--constraints", "constraints_path", type=click.Path(exists=True, dir_okay=False))
def predict(data_dir: str, model_path: str, out_path: str, split: str, beam: int,
            greedy: bool, constraints_path: str | None) -> None:
    """Decode a split into ranked per-variable candidates."""
    _log_config(
        "predict",
        {"in": data_dir, "model": model_path, "out": out_path, "split": split,
         "beam": beam, "greedy": greedy, "constraints": constraints_path},
    )
    bundle = ArtifactBundle.load(data_dir, model_path)
    dataset = load_dataset(data_dir)
    constraints = _load_constraints(constraints_path)
    records = []
    for fn in dataset.splits[split]:
        constraint = constraints.get((fn.binary_id, fn.function_id))
        prediction = predict_function(
            fn, bundle.model, bundle.layout_vocab, beam_width=beam, greedy=greedy,
            constraint=constraint,
        )
        records.append(_to_record(fn, prediction, bundle))
    E.save_predictions(records, out_path)
    click.echo(f"wrote predictions for {len(records)} functions to {out_path}")


def _to_record(fn: C.ProcessedFunction, prediction, bundle: ArtifactBundle) -> E.FunctionPredictions:
    variables = []
    for var in prediction.variables:
        cands = tuple(
            E.PredictedCandidate(
                type_canonical=bundle.lib[c.type_id].canonical if c.type_id is not None else None,
                name=bundle.name_vocab.name_of(c.name_id) if c.name_id is not None else None,
                log_prob=c.log_prob,
                type_id=c.type_id,
                name_id=c.name_id,
            )
            for c in var.candidates
        )
        variables.append(cands)
    return E.FunctionPredictions(fn.binary_id, fn.function_id, tuple(variables))


@main.command()
@click.option("--in", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--predictions", "predictions_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--split", type=click.Choice(C.SPLIT_NAMES), default="test", show_default=True)
def evaluate(data_dir: str, predictions_path: str, out_dir: str, split: str) -> None:
    """Score predictions; writes report.json/.txt, per-binary CSV and figures."""
    _log_config(
        "evaluate",
        {"in": data_dir, "predictions": predictions_path, "out": out_dir, "split": split},
    )
    if not Path(predictions_path).exists():
        _fail(f"predictions file not found: {predictions_path}; run `retyper predict` first")
    dataset = load_dataset(data_dir)
    predictions = E.load_predictions(predictions_path)
    test_split = dataset.splits[split]
    flags = C.mark_function_in_training(test_split, dataset.splits["train"])
    baselines = {}
    baselines["frequency_by_size"] = E.baseline_scores(
        E.baseline_frequency_by_size(dataset.splits["train"], dataset.lib),
        test_split, flags, dataset.lib,
    )
    try:
        baselines["decompiler_remap"] = E.baseline_scores(
            E.baseline_decompiler_remap(dataset.splits["train"], dataset.lib),
            test_split, flags, dataset.lib,
        )
    except E.EvaluationError as exc:
        logger.warning("skipping decompiler remap baseline: %s", exc)
    report = E.partition_report(predictions, test_split, flags, dataset.lib, baselines)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    with open(out / "per_binary.csv", "w", encoding="utf-8") as fh:
        fh.write("binary_id,n_variables,type_accuracy,name_accuracy\n")
        for row in report.per_binary:
            fh.write(
                f"{row.binary_id},{row.n_variables},"
                f"{'' if row.type_accuracy is None else f'{row.type_accuracy:.6f}'},"
                f"{'' if row.name_accuracy is None else f'{row.name_accuracy:.6f}'}\n"
            )
    render_report_figures(report, out / "figures")
    click.echo(report.to_text())


@main.command()
@click.option("--in", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8571, show_default=True)
def serve(data_dir: str, model_path: str, host: str, port: int) -> None:
    """Serve prediction and constrained re-decoding over HTTP."""
    import uvicorn

    from .service import create_app

    _log_config("serve", {"in": data_dir, "model": model_path, "host": host, "port": port})
    bundle = ArtifactBundle.load(data_dir, model_path)
    uvicorn.run(create_app(bundle), host=host, port=port)


if __name__ == "__main__":
    main()
