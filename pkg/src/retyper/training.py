"""Loss computation, the optimization loop, and ablation variants."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

from .corpus import NO_NAME_ID, UNK_NAME_ID, LayoutVocab, ProcessedFunction
from .decoding import ModelScorer, greedy_decode
from .model import (
    ModelConfig,
    RetyperModel,
    Step,
    StepKind,
    multitask_schedule,
    save_checkpoint,
)
from .typelib import COMPONENT_ID, UNKNOWN_ID

logger = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


class TrainingDiverged(TrainingError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_value: float = 1.0
    epochs: int = 15
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("batch_size", "learning_rate", "adam_eps", "clip_value", "epochs"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")


ABLATION_VARIANTS = ("full", "small", "no_data_layout", "type_only", "name_only")


def build_ablation(config: ModelConfig, variant: str) -> ModelConfig:
    """Adjust a model configuration for one of the ablation studies."""
    if variant == "full":
        return config
    if variant == "small":
        return replace(
            config,
            d_model=256,
            d_ff=None,
            n_enc_layers=3,
            n_dec_layers=3,
            n_heads=4,
            layout_d_model=128,
            layout_n_heads=4,
        )
    if variant == "no_data_layout":
        return replace(config, use_layout_mask=False)
    if variant == "type_only":
        return replace(config, tasks="type")
    if variant == "name_only":
        return replace(config, tasks="name")
    raise TrainingError(f"unknown ablation variant: {variant!r} (choose from {ABLATION_VARIANTS})")


# ---------------------------------------------------------------------------
# Batching


@dataclass
class TrainBatch:
    tokens: Tensor            # [B, N] padded subword ids
    token_pad: Tensor         # [B, N] True at padding
    positions: list[list[tuple[int, ...]]]  # per function, per decodable variable
    layout_ids: Tensor        # [K, L] layout tokens of all decodable variables
    layout_pad: Tensor        # [K, L]
    layout_row: list[list[int]]  # per function: row in layout_ids per variable
    steps: list[list[Step]]
    gold: list[list[int]]
    include: list[list[bool]]

    @property
    def size(self) -> int:
        return self.tokens.shape[0]


def trainable_variables(fn: ProcessedFunction) -> list[int]:
    return [
        i
        for i, v in enumerate(fn.variables)
        if not v.truncated_out and v.gold_type_id is not None
    ]


def collate(
    functions: Sequence[ProcessedFunction],
    layout_vocab: LayoutVocab,
    config: ModelConfig,
    pad_id: int,
) -> TrainBatch:
    """Assemble one teacher-forced batch.

    Gold labels provide the decoder history. Name steps whose gold is the
    component no-name label or the unknown-name sentinel stay in the history
    but are excluded from the loss; unknown-sentinel gold types stay in the
    loss so the model learns to abstain into the sentinel.
    """
    n_max = max(len(fn.subword_ids) for fn in functions)
    b = len(functions)
    tokens = torch.full((b, n_max), pad_id, dtype=torch.long)
    token_pad = torch.ones(b, n_max, dtype=torch.bool)
    positions: list[list[tuple[int, ...]]] = []
    layout_rows: list[list[int]] = []
    all_layout: list[list[int]] = []
    steps: list[list[Step]] = []
    gold: list[list[int]] = []
    include: list[list[bool]] = []
    for i, fn in enumerate(functions):
        tokens[i, : len(fn.subword_ids)] = torch.as_tensor(fn.subword_ids)
        token_pad[i, : len(fn.subword_ids)] = False
        variables = trainable_variables(fn)
        if len(variables) > config.max_variables:
            variables = variables[: config.max_variables]
        positions.append([fn.variables[j].positions for j in variables])
        rows = []
        for j in variables:
            rows.append(len(all_layout))
            all_layout.append(layout_vocab.encode(fn.variables[j].layout_tokens))
        layout_rows.append(rows)
        plan = multitask_schedule(len(variables), config.tasks)
        fn_gold = []
        fn_include = []
        for step in plan:
            record = fn.variables[variables[step.var]]
            if step.kind == StepKind.TYPE:
                fn_gold.append(record.gold_type_id)
                fn_include.append(True)
            else:
                name_id = record.gold_name_id if record.gold_name_id is not None else NO_NAME_ID
                fn_gold.append(name_id)
                fn_include.append(
                    record.gold_type_id != COMPONENT_ID
                    and name_id not in (NO_NAME_ID, UNK_NAME_ID)
                )
        steps.append(plan)
        gold.append(fn_gold)
        include.append(fn_include)
    l_max = max((len(r) for r in all_layout), default=1)
    layout_ids = torch.full((max(len(all_layout), 1), l_max), layout_vocab.pad_id, dtype=torch.long)
    layout_pad = torch.ones(max(len(all_layout), 1), l_max, dtype=torch.bool)
    for k, row in enumerate(all_layout):
        layout_ids[k, : len(row)] = torch.as_tensor(row)
        layout_pad[k, : len(row)] = False
    return TrainBatch(
        tokens=tokens,
        token_pad=token_pad,
        positions=positions,
        layout_ids=layout_ids,
        layout_pad=layout_pad,
        layout_row=layout_rows,
        steps=steps,
        gold=gold,
        include=include,
    )


def compute_loss(
    model: RetyperModel,
    batch: TrainBatch,
    use_layout_mask: bool | None = None,
) -> Tensor:
    """Mean negative log-likelihood over every included decoding step.

    Type and name steps weigh equally; ``use_layout_mask`` overrides the
    model configuration so mask-off losses can be compared across variants.
    """
    if use_layout_mask is None:
        use_layout_mask = model.config.use_layout_mask
    if use_layout_mask and not model.config.use_layout_mask:
        raise TrainingError("model has no layout encoder to apply")
    dtype = next(model.parameters()).dtype
    H = model.encode_code(batch.tokens, batch.token_pad)
    masks = None
    if use_layout_mask:
        m = model.encode_layouts(batch.layout_ids, batch.layout_pad)
        masks = model.layout_mask(m)

    inputs = []
    for i, plan in enumerate(batch.steps):
        if not plan:
            inputs.append(torch.zeros(0, model.config.d_model, dtype=dtype))
            continue
        v = torch.stack([H[i, list(pos)].mean(dim=0) for pos in batch.positions[i]])
        inputs.append(model.build_decoder_inputs(plan, batch.gold[i][:-1], v))
    s_max = max(x.shape[0] for x in inputs)
    if s_max == 0:
        raise TrainingError("batch contains no decodable steps")
    X = torch.zeros(batch.size, s_max, model.config.d_model, dtype=dtype)
    for i, x in enumerate(inputs):
        X[i, : x.shape[0]] = x
    Z = model.decoder_hidden(X, H, memory_pad_mask=batch.token_pad)

    losses: list[Tensor] = []
    for kind, head in ((StepKind.TYPE, model.type_head), (StepKind.NAME, model.name_head)):
        zs = []
        golds = []
        mask_rows = []
        for i, plan in enumerate(batch.steps):
            for s, step in enumerate(plan):
                if step.kind != kind or not batch.include[i][s]:
                    continue
                zs.append(Z[i, s])
                golds.append(batch.gold[i][s])
                if kind == StepKind.TYPE and masks is not None:
                    mask_rows.append(batch.layout_row[i][step.var])
        if not zs:
            continue
        logits = head(torch.stack(zs))
        if kind == StepKind.TYPE and masks is not None:
            logits = logits + masks[torch.as_tensor(mask_rows, dtype=torch.long)]
        target = torch.as_tensor(golds, dtype=torch.long)
        losses.append(F.cross_entropy(logits, target, reduction="none"))
    if not losses:
        raise TrainingError("batch contains no steps included in the loss")
    return torch.cat(losses).mean()


# ---------------------------------------------------------------------------
# Accuracy used for model selection


def decode_accuracy(
    model: RetyperModel,
    functions: Sequence[ProcessedFunction],
    layout_vocab: LayoutVocab,
    task: str,
) -> float:
    """Greedy-decoding accuracy over gold-labeled variables.

    Unknown-sentinel gold types never count as correct; truncated-out
    variables count as incorrect.
    """
    correct = 0
    total = 0
    model.eval()
    for fn in functions:
        scorer = ModelScorer(fn, model, layout_vocab)
        decoded = greedy_decode(scorer)
        labels = {
            (step.var, step.kind): decoded.labels[i] for i, step in enumerate(scorer.steps)
        }
        slot_of = {var: slot for slot, var in enumerate(scorer.decodable)}
        for index, record in enumerate(fn.variables):
            if task == "type":
                if record.gold_type_id is None:
                    continue
                total += 1
                if record.gold_type_id == UNKNOWN_ID or record.truncated_out:
                    continue
                pred = labels.get((slot_of.get(index), StepKind.TYPE))
                correct += int(pred == record.gold_type_id)
            else:
                if record.gold_name_id is None or record.gold_name_id in (NO_NAME_ID, UNK_NAME_ID):
                    continue
                total += 1
                if record.truncated_out:
                    continue
                pred = labels.get((slot_of.get(index), StepKind.NAME))
                correct += int(pred == record.gold_name_id)
    return correct / total if total else 0.0


# ---------------------------------------------------------------------------
# The loop


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    valid_accuracy: float | None


def iterate_batches(
    functions: Sequence[ProcessedFunction], batch_size: int, rng: random.Random
) -> list[list[ProcessedFunction]]:
    order = list(range(len(functions)))
    rng.shuffle(order)
    return [
        [functions[j] for j in order[i : i + batch_size]]
        for i in range(0, len(order), batch_size)
    ]


def train(
    train_fns: Sequence[ProcessedFunction],
    valid_fns: Sequence[ProcessedFunction],
    model_config: ModelConfig,
    train_config: TrainConfig,
    layout_vocab: LayoutVocab,
    pad_id: int,
    hashes: dict[str, str],
    out_dir: str | Path | None = None,
    keep_epoch_checkpoints: bool = True,
) -> tuple[RetyperModel, list[EpochStats]]:
    """Optimize the model, checkpointing per epoch plus the best-on-validation.

    The validation metric is greedy type accuracy, or name accuracy for the
    renaming-only variant. Fully reproducible for a fixed seed and platform.
    """
    torch.manual_seed(train_config.seed)
    model = RetyperModel(model_config)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_config.learning_rate,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
        eps=train_config.adam_eps,
    )
    selection_task = "name" if model_config.tasks == "name" else "type"
    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / "train_log.jsonl", "w", encoding="utf-8")
    history: list[EpochStats] = []
    best_accuracy = -1.0
    step_count = 0
    try:
        for epoch in range(1, train_config.epochs + 1):
            rng = random.Random(train_config.seed * 1_000_003 + epoch)
            model.train()
            epoch_losses = []
            for batch_fns in iterate_batches(train_fns, train_config.batch_size, rng):
                batch = collate(batch_fns, layout_vocab, model_config, pad_id)
                optimizer.zero_grad()
                loss = compute_loss(model, batch)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step_count}: {loss.item()}"
                    )
                loss.backward()
                torch.nn.utils.clip_grad_value_(model.parameters(), train_config.clip_value)
                optimizer.step()
                step_count += 1
                epoch_losses.append(loss.item())
                if log_fh is not None:
                    log_fh.write(
                        json.dumps(
                            {"epoch": epoch, "step": step_count, "loss": loss.item()},
                            sort_keys=True,
                        )
                        + "\n"
                    )
            valid_accuracy = None
            if valid_fns:
                valid_accuracy = decode_accuracy(model, valid_fns, layout_vocab, selection_task)
            stats = EpochStats(
                epoch=epoch,
                mean_loss=sum(epoch_losses) / max(len(epoch_losses), 1),
                valid_accuracy=valid_accuracy,
            )
            history.append(stats)
            logger.info(
                "epoch %d: mean loss %.4f, valid %s accuracy %s",
                epoch,
                stats.mean_loss,
                selection_task,
                f"{valid_accuracy:.3f}" if valid_accuracy is not None else "n/a",
            )
            if log_fh is not None:
                log_fh.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "mean_loss": stats.mean_loss,
                            "valid_accuracy": valid_accuracy,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
                log_fh.flush()
            if out_path is not None:
                if keep_epoch_checkpoints:
                    save_checkpoint(out_path / f"epoch_{epoch:03d}.pt", model, hashes)
                score = valid_accuracy if valid_accuracy is not None else -stats.mean_loss
                if score > best_accuracy:
                    best_accuracy = score
                    save_checkpoint(out_path / "best.pt", model, hashes, extra={"epoch": epoch})
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    return model, history
