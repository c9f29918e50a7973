"""End-to-end preprocessing pipeline and on-disk dataset layout.

A processed dataset directory contains:

    train.jsonl / valid.jsonl / test.jsonl   encoded function shards
    typelib.jsonl                            type library (train-split types)
    subword_vocab.json / name_vocab.json / layout_vocab.json
    manifest.json                            seed, ratios, binaries per split

Everything is deterministic given the corpus and the seed; artifact files
hash identically across runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import corpus as C
from .model import RetyperModel, artifact_hashes, load_checkpoint
from .typelib import COMPONENT_NAME, TypeLibrary


class PipelineError(Exception):
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    seed: int = 0
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    bpe_vocab_size: int = 1024
    max_names: int = 10_000
    max_seq_length: int = 512


@dataclass
class ProcessedDataset:
    splits: dict[str, list[C.ProcessedFunction]]
    subword_vocab: C.SubwordVocab
    name_vocab: C.NameVocab
    layout_vocab: C.LayoutVocab
    lib: TypeLibrary
    manifest: dict

    def hashes(self) -> dict[str, str]:
        return artifact_hashes(self.subword_vocab, self.name_vocab, self.layout_vocab, self.lib)


def preprocess_corpus(
    functions: list[C.RawFunction], config: PreprocessConfig
) -> ProcessedDataset:
    """Label components, split per binary, learn vocabularies on the training
    split, and encode every split."""
    labeled = [C.label_components(fn) for fn in functions]
    kept = [fn for fn in labeled if fn.variables and C.has_labeled_variable(fn)]
    splits_raw = C.split_per_binary(kept, config.ratios, config.seed)
    train_raw = splits_raw["train"]
    if not train_raw:
        raise PipelineError("training split is empty; corpus too small for the ratios")

    lib = TypeLibrary()
    for fn in train_raw:
        for var in fn.variables:
            canonical = var.gold_type_canonical
            if canonical is not None and canonical != COMPONENT_NAME:
                try:
                    lib.register_canonical(canonical)
                except Exception:
                    continue  # unparseable golds fall back to the unknown sentinel
    lib.freeze()

    subword_vocab = C.train_bpe(
        (C.normalize_literals(fn.tokens) for fn in train_raw), config.bpe_vocab_size
    )
    name_vocab = C.build_name_vocab(train_raw, config.max_names)
    layout_vocab = C.build_layout_vocab(train_raw)

    splits = {
        name: [
            C.encode_function(fn, subword_vocab, name_vocab, lib, config.max_seq_length)
            for fn in fns
        ]
        for name, fns in splits_raw.items()
    }
    manifest = {
        "config": {
            "seed": config.seed,
            "ratios": list(config.ratios),
            "bpe_vocab_size": config.bpe_vocab_size,
            "max_names": config.max_names,
            "max_seq_length": config.max_seq_length,
        },
        "binaries": {
            name: sorted({fn.binary_id for fn in fns}) for name, fns in splits_raw.items()
        },
        "counts": {name: len(fns) for name, fns in splits.items()},
    }
    return ProcessedDataset(
        splits=splits,
        subword_vocab=subword_vocab,
        name_vocab=name_vocab,
        layout_vocab=layout_vocab,
        lib=lib,
        manifest=manifest,
    )


DATASET_FILES = (
    "train.jsonl",
    "valid.jsonl",
    "test.jsonl",
    "typelib.jsonl",
    "subword_vocab.json",
    "name_vocab.json",
    "layout_vocab.json",
    "manifest.json",
)


def save_dataset(dataset: ProcessedDataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, fns in dataset.splits.items():
        C.save_processed(fns, out / f"{name}.jsonl")
    dataset.lib.save(out / "typelib.jsonl")
    dataset.subword_vocab.save(out / "subword_vocab.json")
    dataset.name_vocab.save(out / "name_vocab.json")
    dataset.layout_vocab.save(out / "layout_vocab.json")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(dataset.manifest, fh, sort_keys=True, indent=2)


def load_dataset(data_dir: str | Path) -> ProcessedDataset:
    path = Path(data_dir)
    missing = [f for f in DATASET_FILES if not (path / f).exists()]
    if missing:
        raise PipelineError(f"{path} is not a processed dataset; missing {missing}")
    with open(path / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return ProcessedDataset(
        splits={name: C.load_processed(path / f"{name}.jsonl") for name in C.SPLIT_NAMES},
        subword_vocab=C.SubwordVocab.load(path / "subword_vocab.json"),
        name_vocab=C.NameVocab.load(path / "name_vocab.json"),
        layout_vocab=C.LayoutVocab.load(path / "layout_vocab.json"),
        lib=TypeLibrary.load(path / "typelib.jsonl"),
        manifest=manifest,
    )


def dataset_fingerprint(data_dir: str | Path) -> str:
    """Hash of every artifact file, for determinism checks."""
    digest = hashlib.sha256()
    for name in DATASET_FILES:
        digest.update(name.encode("utf-8"))
        digest.update((Path(data_dir) / name).read_bytes())
    return digest.hexdigest()


@dataclass
class ArtifactBundle:
    """Loaded model plus the vocabularies and type library it was trained with."""

    model: RetyperModel
    subword_vocab: C.SubwordVocab
    name_vocab: C.NameVocab
    layout_vocab: C.LayoutVocab
    lib: TypeLibrary
    max_seq_length: int

    @classmethod
    def load(cls, data_dir: str | Path, checkpoint_path: str | Path) -> "ArtifactBundle":
        dataset = load_dataset(data_dir)
        model, _, _ = load_checkpoint(checkpoint_path, expected_hashes=dataset.hashes())
        return cls(
            model=model,
            subword_vocab=dataset.subword_vocab,
            name_vocab=dataset.name_vocab,
            layout_vocab=dataset.layout_vocab,
            lib=dataset.lib,
            max_seq_length=model.config.max_seq_length,
        )

    def encode(self, fn: C.RawFunction) -> C.ProcessedFunction:
        """Encode an inference-time function (no component labeling)."""
        return C.encode_function(
            fn, self.subword_vocab, self.name_vocab, self.lib, self.max_seq_length
        )
