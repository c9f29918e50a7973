"""Neural core: code encoder, layout encoder with soft mask, and the
interleaved type/name decoder.

The code encoder contextualizes subword tokens; per-variable encodings are
average-pooled over every occurrence. The decoder runs autoregressively over
an interleaved step plan (type then name for each variable), attending the
encoded code. A separate small encoder turns a variable's storage layout
into an additive adjustment of the type logits; it never zeroes
probabilities and is not applied on name steps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor, nn


class ModelError(Exception):
    pass


class CheckpointError(ModelError):
    pass


TASK_CHOICES = ("both", "type", "name")


@dataclass(frozen=True)
class ModelConfig:
    type_vocab_size: int
    name_vocab_size: int
    subword_vocab_size: int
    layout_vocab_size: int
    d_model: int = 512
    n_enc_layers: int = 6
    n_dec_layers: int = 6
    n_layout_layers: int = 3
    n_heads: int = 8
    d_ff: int | None = None  # pinned to 4 * d_model
    dropout: float = 0.1
    max_seq_length: int = 512
    layout_d_model: int = 256
    layout_n_heads: int = 8
    max_variables: int = 128
    max_layout_tokens: int = 34  # location + size + up to 32 member offsets
    use_layout_mask: bool = True
    tasks: str = "both"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError("d_model must be divisible by n_heads")
        if self.layout_d_model % self.layout_n_heads != 0:
            raise ModelError("layout_d_model must be divisible by layout_n_heads")
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        elif self.d_ff != 4 * self.d_model:
            raise ModelError("d_ff is pinned to 4 * d_model")
        if self.tasks not in TASK_CHOICES:
            raise ModelError(f"tasks must be one of {TASK_CHOICES}")

    @property
    def layout_d_ff(self) -> int:
        return 4 * self.layout_d_model

    @property
    def max_steps(self) -> int:
        return 2 * self.max_variables


class StepKind(IntEnum):
    TYPE = 0
    NAME = 1


@dataclass(frozen=True)
class Step:
    var: int
    kind: StepKind


def multitask_schedule(n_variables: int, tasks: str = "both") -> list[Step]:
    """Interleaved decoding plan: the type step precedes the name step for
    each variable; specialized modes emit a single task per variable."""
    if n_variables < 0:
        raise ModelError("variable count must be >= 0")
    steps: list[Step] = []
    for t in range(n_variables):
        if tasks in ("both", "type"):
            steps.append(Step(t, StepKind.TYPE))
        if tasks in ("both", "name"):
            steps.append(Step(t, StepKind.NAME))
    return steps


def pool_variable(H: Tensor, positions: Sequence[int]) -> Tensor:
    """Average-pool the encoder rows of every occurrence of one variable.

    Occurrences form a set; indices are sorted first so the result does not
    depend on iteration order.
    """
    if len(positions) == 0:
        raise ModelError("cannot pool a variable with no surviving occurrences")
    idx = torch.as_tensor(sorted(positions), dtype=torch.long, device=H.device)
    if int(idx.max()) >= H.shape[-2]:
        raise ModelError("occurrence position out of range")
    return H.index_select(-2, idx).mean(dim=-2)


def apply_layout_mask(logits: Tensor, mask: Tensor, kind: StepKind = StepKind.TYPE) -> Tensor:
    """Add the learned soft mask to type logits. Probabilities stay nonzero;
    name steps never receive the mask."""
    if kind != StepKind.TYPE:
        raise ModelError("the layout mask applies to type steps only")
    return logits + mask

def step_distribution(logits: Tensor) -> Tensor:
    """Softmax over one step's logits."""
    if not torch.isfinite(logits).all():
        raise ModelError("logits must be finite")
    return torch.softmax(logits, dim=-1)


class RetyperModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_embedding = nn.Embedding(config.subword_vocab_size, d)
        self.position_embedding = nn.Embedding(config.max_seq_length, d)
        self.encoder = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(
                d_model=d,
                nhead=config.n_heads,
                dim_feedforward=config.d_ff,
                dropout=config.dropout,
                activation="gelu",
                batch_first=True,
            ),
            num_layers=config.n_enc_layers,
            enable_nested_tensor=False,
        )
        self.type_embedding = nn.Embedding(config.type_vocab_size, d)
        self.name_embedding = nn.Embedding(config.name_vocab_size, d)
        self.step_kind_embedding = nn.Embedding(2, d)
        self.decode_position_embedding = nn.Embedding(self.config.max_steps, d)
        self.begin_embedding = nn.Parameter(torch.zeros(d))
        nn.init.normal_(self.begin_embedding, std=0.02)
        self.decoder = nn.TransformerDecoder(
            nn.TransformerDecoderLayer(
                d_model=d,
                nhead=config.n_heads,
                dim_feedforward=config.d_ff,
                dropout=config.dropout,
                activation="gelu",
                batch_first=True,
            ),
            num_layers=config.n_dec_layers,
        )
        self.type_head = nn.Linear(d, config.type_vocab_size)
        self.name_head = nn.Linear(d, config.name_vocab_size)
        if config.use_layout_mask:
            dl = config.layout_d_model
            self.layout_embedding = nn.Embedding(config.layout_vocab_size, dl)
            self.layout_position_embedding = nn.Embedding(config.max_layout_tokens, dl)
            self.layout_encoder = nn.TransformerEncoder(
                nn.TransformerEncoderLayer(
                    d_model=dl,
                    nhead=config.layout_n_heads,
                    dim_feedforward=config.layout_d_ff,
                    dropout=config.dropout,
                    activation="gelu",
                    batch_first=True,
                ),
                num_layers=config.n_layout_layers,
                enable_nested_tensor=False,
            )
            self.mask_head = nn.Linear(dl, config.type_vocab_size, bias=False)

    # -- encoder ---------------------------------------------------------------

    def encode_code(self, tokens: Tensor, pad_mask: Tensor | None = None) -> Tensor:
        """Contextualized representations, one row per subword token.

        ``tokens`` is [N] or [B, N]; ``pad_mask`` is True at padding.
        """
        squeeze = tokens.dim() == 1
        if squeeze:
            tokens = tokens.unsqueeze(0)
        n = tokens.shape[1]
        if n > self.config.max_seq_length:
            raise ModelError(
                f"input length {n} exceeds max_seq_length {self.config.max_seq_length}"
            )
        positions = torch.arange(n, device=tokens.device)
        x = self.token_embedding(tokens) + self.position_embedding(positions)
        H = self.encoder(x, src_key_padding_mask=pad_mask)
        return H.squeeze(0) if squeeze else H

    # -- layout encoder --------------------------------------------------------

    def encode_layouts(self, layout_ids: Tensor, pad_mask: Tensor | None = None) -> Tensor:
        """Encode layout token sequences [K, L] into one vector each [K, dl]."""
        if not self.config.use_layout_mask:
            raise ModelError("model was built without the layout encoder")
        k, n = layout_ids.shape
        n = min(n, self.config.max_layout_tokens)
        layout_ids = layout_ids[:, :n]
        positions = torch.arange(n, device=layout_ids.device)
        x = self.layout_embedding(layout_ids) + self.layout_position_embedding(positions)
        enc = self.layout_encoder(x, src_key_padding_mask=pad_mask if pad_mask is None else pad_mask[:, :n])
        if pad_mask is None:
            return enc.mean(dim=1)
        keep = (~pad_mask[:, :n]).unsqueeze(-1).to(enc.dtype)
        return (enc * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1)

    def encode_layout(self, layout_ids: Sequence[int]) -> Tensor:
        ids = torch.as_tensor([list(layout_ids)], dtype=torch.long)
        return self.encode_layouts(ids)[0]

    def layout_mask(self, m: Tensor) -> Tensor:
        """The additive soft mask over type logits for layout encodings ``m``."""
        return self.mask_head(m)

    # -- decoder ---------------------------------------------------------------

    def build_decoder_inputs(
        self,
        steps: Sequence[Step],
        labels: Sequence[int],
        v: Tensor,
    ) -> Tensor:
        """Stack decoder inputs for steps[0 .. len(labels)] of one function.

        Each position sees the embedding of the previous prediction (or the
        begin-of-sequence embedding), a step-kind embedding, its variable's
        pooled encoding and a learned position embedding.
        """
        n_in = len(labels) + 1
        if n_in > len(steps):
            raise ModelError("more labels than remaining steps")
        device = v.device
        rows = []
        for s in range(n_in):
            if s == 0:
                prev = self.begin_embedding
            else:
                prev_step = steps[s - 1]
                table = self.type_embedding if prev_step.kind == StepKind.TYPE else self.name_embedding
                prev = table(torch.as_tensor(labels[s - 1], device=device))
            kind = self.step_kind_embedding(torch.as_tensor(int(steps[s].kind), device=device))
            pos = self.decode_position_embedding(torch.as_tensor(s, device=device))
            rows.append(prev + kind + v[steps[s].var] + pos)
        return torch.stack(rows)

    def decoder_hidden(
        self,
        X: Tensor,
        H: Tensor,
        memory_pad_mask: Tensor | None = None,
    ) -> Tensor:
        """Causal decoder pass; [B, S, d] inputs to [B, S, d] hidden states."""
        squeeze = X.dim() == 2
        if squeeze:
            X = X.unsqueeze(0)
            H = H.unsqueeze(0)
        s = X.shape[1]
        causal = torch.triu(torch.ones(s, s, dtype=torch.bool, device=X.device), diagonal=1)
        Z = self.decoder(X, H, tgt_mask=causal, memory_key_padding_mask=memory_pad_mask)
        return Z.squeeze(0) if squeeze else Z

    def decode_step(
        self,
        steps: Sequence[Step],
        labels: Sequence[int],
        v: Tensor,
        H: Tensor,
        memory_pad_mask: Tensor | None = None,
    ) -> Tensor:
        """Hidden state for the next step given the labels decoded so far."""
        X = self.build_decoder_inputs(steps, labels, v)
        return self.decoder_hidden(X, H, memory_pad_mask)[-1]

    def output_logits(self, z: Tensor, kind: StepKind) -> Tensor:
        head = self.type_head if kind == StepKind.TYPE else self.name_head
        return head(z)


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_FORMAT = "retyper-checkpoint/1"


def artifact_hashes(subword_vocab, name_vocab, layout_vocab, lib) -> dict[str, str]:
    return {
        "subword_vocab": subword_vocab.content_hash(),
        "name_vocab": name_vocab.content_hash(),
        "layout_vocab": layout_vocab.content_hash(),
        "type_library": lib.content_hash(),
    }


def save_checkpoint(
    path: str | Path,
    model: RetyperModel,
    hashes: dict[str, str],
    extra: dict | None = None,
) -> None:
    """Atomically write a self-describing checkpoint archive."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "hashes": dict(hashes),
        "extra": dict(extra or {}),
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(
    path: str | Path, expected_hashes: dict[str, str] | None = None
) -> tuple[RetyperModel, dict[str, str], dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unrecognized checkpoint format in {path}")
    config = ModelConfig(**payload["model_config"])
    model = RetyperModel(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    hashes = payload["hashes"]
    if expected_hashes is not None:
        for key, value in expected_hashes.items():
            if hashes.get(key) != value:
                raise CheckpointError(
                    f"checkpoint {path} was trained against a different {key}"
                    f" (got {hashes.get(key)}, expected {value})"
                )
    return model, hashes, payload.get("extra", {})
