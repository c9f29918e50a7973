"""Greedy, beam, and analyst-constrained decoding.

Search operates over a scorer abstraction exposing the step plan and the
conditional log-probabilities of the next step given a label history. The
neural model and the synthetic conditional tables used by the search oracles
both implement it, so the search code under test is identical in both cases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
import torch

from .corpus import LayoutVocab, ProcessedFunction
from .model import RetyperModel, Step, StepKind, apply_layout_mask, multitask_schedule


class DecodingError(Exception):
    pass


class StepScorer(Protocol):
    """Conditional next-step distributions over an interleaved step plan."""

    @property
    def steps(self) -> Sequence[Step]: ...

    def log_probs(self, history: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class Constraint:
    """Analyst-fixed labels keyed by variable index within the function."""

    types: Mapping[int, int] = field(default_factory=dict)
    names: Mapping[int, int] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.types) or bool(self.names)

    def forced_label(self, step: Step) -> int | None:
        table = self.types if step.kind == StepKind.TYPE else self.names
        return table.get(step.var)


@dataclass(frozen=True)
class DecodedSequence:
    """One completed label sequence over the step plan.

    ``log_prob`` sums the model's log-probabilities of the chosen labels at
    unconstrained steps; forced steps contribute nothing.
    """

    labels: tuple[int, ...]
    step_log_probs: tuple[float, ...]
    forced: tuple[bool, ...]
    log_prob: float


def greedy_decode(scorer: StepScorer, constraint: Constraint | None = None) -> DecodedSequence:
    """Follow the argmax at every step; ties break toward the smallest id."""
    labels: list[int] = []
    slps: list[float] = []
    forced_flags: list[bool] = []
    score = 0.0
    for step in scorer.steps:
        forced = constraint.forced_label(step) if constraint else None
        if forced is not None:
            labels.append(forced)
            slps.append(0.0)
            forced_flags.append(True)
            continue
        lp = scorer.log_probs(labels)
        label = int(np.argmax(lp))
        labels.append(label)
        slps.append(float(lp[label]))
        forced_flags.append(False)
        score = score + float(lp[label])
    return DecodedSequence(tuple(labels), tuple(slps), tuple(forced_flags), score)


@dataclass
class _Hypothesis:
    labels: list[int]
    step_log_probs: list[float]
    forced: list[bool]
    score: float

    def extend(self, label: int, log_prob: float, forced: bool) -> "_Hypothesis":
        return _Hypothesis(
            self.labels + [label],
            self.step_log_probs + [log_prob],
            self.forced + [forced],
            self.score if forced else self.score + log_prob,
        )


def beam_decode(
    scorer: StepScorer,
    beam_width: int,
    constraint: Constraint | None = None,
) -> list[DecodedSequence]:
    """Nested beam search; returns the completed sequences best-first.

    A plain level-wise beam is not monotone in its width: a wider beam can
    evict the exact prefix a narrower beam would have completed. Selection
    here is nested instead: the v-th beam slot is filled using only the
    expansions of the first v slots of the previous level, so the slots a
    width-v search would pick are always a prefix of the width-w selection
    (v <= w). That makes the best total log-probability non-decreasing in
    the width, keeps width 1 exactly equal to greedy decoding, and still
    degenerates to exhaustive search once the width covers every sequence.

    Constrained steps extend every slot with the forced label at no score
    change; a constant offset cannot reorder the beam.
    """
    if beam_width < 1:
        raise DecodingError(f"beam width must be >= 1, got {beam_width}")
    beam = [_Hypothesis([], [], [], 0.0)]
    for step in scorer.steps:
        forced = constraint.forced_label(step) if constraint else None
        if forced is not None:
            beam = [hyp.extend(forced, 0.0, True) for hyp in beam]
            continue
        # Children of each slot, best-first; ties break to the smaller label.
        pools: list[list[_Hypothesis]] = []
        for hyp in beam:
            lp = scorer.log_probs(hyp.labels)
            order = sorted(range(len(lp)), key=lambda i: (-lp[i], i))[:beam_width]
            pools.append([hyp.extend(label, float(lp[label]), False) for label in order])
        fronts = [0] * len(pools)
        selected: list[_Hypothesis] = []
        for v in range(beam_width):
            visible = min(v + 1, len(pools))
            best_pool = -1
            for i in range(visible):
                if fronts[i] >= len(pools[i]):
                    continue
                cand = pools[i][fronts[i]]
                if best_pool < 0 or (-cand.score, cand.labels) < (
                    -pools[best_pool][fronts[best_pool]].score,
                    pools[best_pool][fronts[best_pool]].labels,
                ):
                    best_pool = i
            if best_pool < 0:
                break
            selected.append(pools[best_pool][fronts[best_pool]])
            fronts[best_pool] += 1
        beam = selected
    completed = sorted(beam, key=lambda h: (-h.score, h.labels))
    return [
        DecodedSequence(tuple(h.labels), tuple(h.step_log_probs), tuple(h.forced), h.score)
        for h in completed
    ]


def exhaustive_decode(scorer: StepScorer, n_labels: Sequence[int]) -> DecodedSequence:
    """Enumerate every label sequence; the independent optimum oracle.

    ``n_labels`` gives the label-space size of each step. Only viable for
    tiny synthetic instances.
    """
    best: DecodedSequence | None = None

    def walk(history: list[int], slps: list[float], score: float) -> None:
        nonlocal best
        depth = len(history)
        if depth == len(scorer.steps):
            seq = DecodedSequence(
                tuple(history), tuple(slps), (False,) * depth, score
            )
            if (
                best is None
                or seq.log_prob > best.log_prob
                or (seq.log_prob == best.log_prob and seq.labels < best.labels)
            ):
                best = seq
            return
        lp = scorer.log_probs(history)
        for label in range(n_labels[depth]):
            walk(history + [label], slps + [float(lp[label])], score + float(lp[label]))

    walk([], [], 0.0)
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# Scorers


class TableScorer:
    """Scorer backed by explicit conditional tables, for tests and oracles."""

    def __init__(self, steps: Sequence[Step], tables: Mapping[tuple[int, ...], np.ndarray]):
        self._steps = list(steps)
        self._tables = {tuple(k): np.asarray(v, dtype=np.float64) for k, v in tables.items()}

    @property
    def steps(self) -> Sequence[Step]:
        return self._steps

    def log_probs(self, history: Sequence[int]) -> np.ndarray:
        return self._tables[tuple(history)]


class ModelScorer:
    """Scorer over one processed function backed by the neural model.

    Encodes the function once; each query runs the decoder over the history
    prefix. Read-only over the model parameters.
    """

    def __init__(
        self,
        fn: ProcessedFunction,
        model: RetyperModel,
        layout_vocab: LayoutVocab,
    ):
        model.eval()
        self.model = model
        self.fn = fn
        self.decodable = [i for i, v in enumerate(fn.variables) if not v.truncated_out]
        config = model.config
        if len(self.decodable) > config.max_variables:
            raise DecodingError(
                f"{fn.function_id}: {len(self.decodable)} variables exceed"
                f" max_variables {config.max_variables}"
            )
        self._steps = multitask_schedule(len(self.decodable), config.tasks)
        with torch.no_grad():
            tokens = torch.as_tensor(list(fn.subword_ids), dtype=torch.long)
            self.H = model.encode_code(tokens)
            if self.decodable:
                vs = [
                    self.H[list(fn.variables[i].positions)].mean(dim=0)
                    for i in self.decodable
                ]
                self.v = torch.stack(vs)
            else:
                self.v = torch.zeros(0, config.d_model, dtype=self.H.dtype)
            self.masks = None
            if config.use_layout_mask and self.decodable:
                rows = [layout_vocab.encode(fn.variables[i].layout_tokens) for i in self.decodable]
                width = max(len(r) for r in rows)
                ids = torch.full((len(rows), width), layout_vocab.pad_id, dtype=torch.long)
                pad = torch.ones(len(rows), width, dtype=torch.bool)
                for k, row in enumerate(rows):
                    ids[k, : len(row)] = torch.as_tensor(row)
                    pad[k, : len(row)] = False
                m = model.encode_layouts(ids, pad)
                self.masks = model.layout_mask(m)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def steps(self) -> Sequence[Step]:
        return self._steps

    def log_probs(self, history: Sequence[int]) -> np.ndarray:
        key = tuple(history)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        step = self._steps[len(history)]
        with torch.no_grad():
            z = self.model.decode_step(self._steps, list(history), self.v, self.H)
            logits = self.model.output_logits(z, step.kind)
            if step.kind == StepKind.TYPE and self.masks is not None:
                logits = apply_layout_mask(logits, self.masks[step.var], step.kind)
            lp = torch.log_softmax(logits, dim=-1).cpu().numpy().astype(np.float64)
        self._cache[key] = lp
        return lp


# ---------------------------------------------------------------------------
# Function-level prediction sets


@dataclass(frozen=True)
class CandidatePrediction:
    type_id: int | None
    name_id: int | None
    log_prob: float


@dataclass(frozen=True)
class VariablePrediction:
    index: int
    candidates: tuple[CandidatePrediction, ...]
    truncated_out: bool


@dataclass(frozen=True)
class PredictionSet:
    """Ranked candidates per variable plus the full decoded sequences."""

    sequences: tuple[DecodedSequence, ...]
    variables: tuple[VariablePrediction, ...]


def _remap_constraint(fn: ProcessedFunction, decodable: Sequence[int], constraint: Constraint | None) -> Constraint | None:
    """Translate variable indices of the function into decodable slots."""
    if not constraint:
        return None
    slot_of = {var_index: slot for slot, var_index in enumerate(decodable)}
    types: dict[int, int] = {}
    names: dict[int, int] = {}
    for source, target in ((constraint.types, types), (constraint.names, names)):
        for var_index, label in source.items():
            if not 0 <= var_index < len(fn.variables):
                raise DecodingError(f"constraint on unknown variable index {var_index}")
            if var_index not in slot_of:
                raise DecodingError(
                    f"variable {var_index} is truncated out and cannot be constrained"
                )
            target[slot_of[var_index]] = int(label)
    return Constraint(types, names)


def predict_function(
    fn: ProcessedFunction,
    model: RetyperModel,
    layout_vocab: LayoutVocab,
    beam_width: int = 5,
    greedy: bool = False,
    constraint: Constraint | None = None,
) -> PredictionSet:
    """Decode one function into ranked per-variable (type, name) candidates."""
    scorer = ModelScorer(fn, model, layout_vocab)
    remapped = _remap_constraint(fn, scorer.decodable, constraint)
    if greedy:
        sequences = [greedy_decode(scorer, remapped)]
    else:
        sequences = beam_decode(scorer, beam_width, remapped)
    return assemble_predictions(fn, scorer.decodable, scorer.steps, sequences)


def assemble_predictions(
    fn: ProcessedFunction,
    decodable: Sequence[int],
    steps: Sequence[Step],
    sequences: Sequence[DecodedSequence],
) -> PredictionSet:
    step_index: dict[tuple[int, StepKind], int] = {
        (step.var, step.kind): i for i, step in enumerate(steps)
    }
    variables = []
    for var_index in range(len(fn.variables)):
        if var_index not in set(decodable):
            variables.append(VariablePrediction(var_index, (), truncated_out=True))
            continue
        slot = list(decodable).index(var_index)
        best: dict[tuple[int | None, int | None], float] = {}
        for seq in sequences:
            type_i = step_index.get((slot, StepKind.TYPE))
            name_i = step_index.get((slot, StepKind.NAME))
            type_id = seq.labels[type_i] if type_i is not None else None
            name_id = seq.labels[name_i] if name_i is not None else None
            joint = 0.0
            for i in (type_i, name_i):
                if i is not None and not seq.forced[i]:
                    joint += seq.step_log_probs[i]
            key = (type_id, name_id)
            if key not in best or joint > best[key]:
                best[key] = joint
        ranked = sorted(
            (CandidatePrediction(t, n, lp) for (t, n), lp in best.items()),
            key=lambda c: (-c.log_prob, c.type_id if c.type_id is not None else -1,
                           c.name_id if c.name_id is not None else -1),
        )
        variables.append(VariablePrediction(var_index, tuple(ranked), truncated_out=False))
    return PredictionSet(tuple(sequences), tuple(variables))
