from __future__ import annotations

import pytest
import torch

from retyper.model import ModelConfig, RetyperModel
from retyper.pipeline import ArtifactBundle, PreprocessConfig, ProcessedDataset, preprocess_corpus
from retyper.synth import toy_corpus


@pytest.fixture(scope="session")
def tiny_dataset() -> ProcessedDataset:
    functions = toy_corpus(16, seed=5)
    return preprocess_corpus(
        functions,
        PreprocessConfig(seed=2, ratios=(0.7, 0.15, 0.15), bpe_vocab_size=90, max_seq_length=96),
    )


@pytest.fixture(scope="session")
def tiny_config(tiny_dataset) -> ModelConfig:
    return ModelConfig(
        type_vocab_size=len(tiny_dataset.lib),
        name_vocab_size=len(tiny_dataset.name_vocab),
        subword_vocab_size=len(tiny_dataset.subword_vocab),
        layout_vocab_size=len(tiny_dataset.layout_vocab),
        d_model=16,
        n_enc_layers=1,
        n_dec_layers=1,
        n_layout_layers=1,
        n_heads=2,
        layout_d_model=8,
        layout_n_heads=2,
        dropout=0.0,
        max_seq_length=96,
        max_variables=8,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_config) -> RetyperModel:
    torch.manual_seed(7)
    model = RetyperModel(tiny_config)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_bundle(tiny_dataset, tiny_model) -> ArtifactBundle:
    return ArtifactBundle(
        model=tiny_model,
        subword_vocab=tiny_dataset.subword_vocab,
        name_vocab=tiny_dataset.name_vocab,
        layout_vocab=tiny_dataset.layout_vocab,
        lib=tiny_dataset.lib,
        max_seq_length=tiny_model.config.max_seq_length,
    )
