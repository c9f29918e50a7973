"""Exact-match metrics, test-set partitions, baselines, and the report.

Accuracy is macro-averaged over functions (each function contributes its
fraction of correct variables) with the per-variable micro average reported
alongside. Partitions: overall, function-in-training, function-not-in-
training, and variables with structural gold types.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import ProcessedFunction, VariableRecord
from .typelib import (
    COMPONENT_NAME,
    UNKNOWN_ID,
    UNKNOWN_NAME,
    CanonicalParseError,
    NoLayoutError,
    TypeLibrary,
    is_structural,
    layout_signature,
    parse_canonical,
)


class EvaluationError(Exception):
    pass


NO_PREDICTION = "<no-prediction>"


def name_match(pred_name: str, gold_name: str) -> bool:
    """Exact, case-sensitive string equality."""
    return pred_name == gold_name


def type_match(pred_type_id: int, gold_canonical: str, lib: TypeLibrary) -> bool:
    """Canonical-string equality; the unknown sentinel never matches."""
    if pred_type_id == UNKNOWN_ID:
        return False
    return lib[pred_type_id].canonical == gold_canonical


def type_match_str(pred_canonical: str | None, gold_canonical: str) -> bool:
    if pred_canonical is None or pred_canonical == UNKNOWN_NAME:
        return False
    return pred_canonical == gold_canonical


def _signature_or_none(canonical: str) -> str | None:
    try:
        return layout_signature(parse_canonical(canonical))
    except (CanonicalParseError, NoLayoutError):
        return None


def signature_match(pred_canonical: str | None, gold_canonical: str) -> bool:
    """Structural match after discarding type and field names.

    Canonically equal strings always match, so name discarding can only
    merge classes, never split them.
    """
    if pred_canonical is None:
        return False
    if pred_canonical == gold_canonical:
        return True
    pred_sig = _signature_or_none(pred_canonical)
    gold_sig = _signature_or_none(gold_canonical)
    return pred_sig is not None and pred_sig == gold_sig


# ---------------------------------------------------------------------------
# Prediction records (the batch-prediction wire format)


@dataclass(frozen=True)
class PredictedCandidate:
    type_canonical: str | None
    name: str | None
    log_prob: float
    type_id: int | None = None
    name_id: int | None = None


@dataclass(frozen=True)
class FunctionPredictions:
    binary_id: str
    function_id: str
    variables: tuple[tuple[PredictedCandidate, ...], ...]  # per variable, ranked

    def top1(self, index: int) -> PredictedCandidate | None:
        cands = self.variables[index] if index < len(self.variables) else ()
        return cands[0] if cands else None


def predictions_to_json(record: FunctionPredictions) -> dict:
    return {
        "binary_id": record.binary_id,
        "function_id": record.function_id,
        "variables": [
            [
                {
                    "type": c.type_canonical,
                    "type_id": c.type_id,
                    "name": c.name,
                    "name_id": c.name_id,
                    "log_prob": c.log_prob,
                }
                for c in cands
            ]
            for cands in record.variables
        ],
    }


def predictions_from_json(obj: dict) -> FunctionPredictions:
    return FunctionPredictions(
        binary_id=obj["binary_id"],
        function_id=obj["function_id"],
        variables=tuple(
            tuple(
                PredictedCandidate(
                    type_canonical=c.get("type"),
                    name=c.get("name"),
                    log_prob=c.get("log_prob", 0.0),
                    type_id=c.get("type_id"),
                    name_id=c.get("name_id"),
                )
                for c in cands
            )
            for cands in obj["variables"]
        ),
    )


def load_predictions(path: str | Path) -> list[FunctionPredictions]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(predictions_from_json(json.loads(line)))
    return out


def save_predictions(records: Iterable[FunctionPredictions], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(predictions_to_json(record), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Scoring


@dataclass
class VariableOutcome:
    binary_id: str
    function_key: tuple[str, str]
    in_training: bool
    structural: bool
    gold_canonical: str | None
    pred_canonical: str | None
    type_evaluated: bool
    type_correct: bool
    signature_correct: bool
    gold_name: str | None
    pred_name: str | None
    name_evaluated: bool
    name_correct: bool


def _gold_is_structural(record: VariableRecord, lib: TypeLibrary) -> bool:
    canonical = record.gold_type_canonical
    if canonical in (None, COMPONENT_NAME):
        return False
    type_id = lib.lookup(canonical)
    if type_id is not None:
        return is_structural(lib[type_id])
    try:
        return is_structural(parse_canonical(canonical))
    except CanonicalParseError:
        return False


def score_variables(
    predictions: Sequence[FunctionPredictions],
    test_split: Sequence[ProcessedFunction],
    flags: Sequence[bool],
    lib: TypeLibrary,
) -> list[VariableOutcome]:
    """Per-variable outcomes for every gold-labeled test variable.

    Variables without any prediction (truncated out, or the predictor
    skipped them) count as incorrect. Gold components take part in type
    scoring only; name scoring covers variables with a gold name.
    """
    by_key = {(p.binary_id, p.function_id): p for p in predictions}
    outcomes: list[VariableOutcome] = []
    for fn, in_training in zip(test_split, flags):
        record = by_key.get((fn.binary_id, fn.function_id))
        for index, variable in enumerate(fn.variables):
            has_type = variable.gold_type_canonical is not None
            has_name = variable.gold_name is not None
            if not has_type and not has_name:
                continue
            top = record.top1(index) if record is not None else None
            pred_canonical = top.type_canonical if top is not None else None
            pred_name = top.name if top is not None else None
            type_evaluated = has_type
            gold_canonical = variable.gold_type_canonical
            type_correct = (
                type_evaluated
                and gold_canonical is not None
                and type_match_str(pred_canonical, gold_canonical)
            )
            outcomes.append(
                VariableOutcome(
                    binary_id=fn.binary_id,
                    function_key=(fn.binary_id, fn.function_id),
                    in_training=in_training,
                    structural=_gold_is_structural(variable, lib),
                    gold_canonical=gold_canonical,
                    pred_canonical=pred_canonical,
                    type_evaluated=type_evaluated,
                    type_correct=type_correct,
                    signature_correct=(
                        type_evaluated
                        and gold_canonical is not None
                        and signature_match(pred_canonical, gold_canonical)
                    ),
                    gold_name=variable.gold_name,
                    pred_name=pred_name,
                    name_evaluated=has_name,
                    name_correct=has_name and pred_name is not None and name_match(pred_name, variable.gold_name),
                )
            )
    return outcomes


# ---------------------------------------------------------------------------
# Aggregation


@dataclass
class PartitionScores:
    n_functions: int = 0
    n_type_variables: int = 0
    n_name_variables: int = 0
    type_macro: float | None = None
    type_micro: float | None = None
    name_macro: float | None = None
    name_micro: float | None = None


PARTITIONS = ("overall", "function_in_training", "function_not_in_training", "struct")


def _aggregate(outcomes: Sequence[VariableOutcome]) -> PartitionScores | None:
    if not outcomes:
        return None
    by_fn: dict[tuple[str, str], list[VariableOutcome]] = defaultdict(list)
    for o in outcomes:
        by_fn[o.function_key].append(o)
    type_fracs = []
    name_fracs = []
    type_total = type_correct = 0
    name_total = name_correct = 0
    for members in by_fn.values():
        t = [o for o in members if o.type_evaluated]
        if t:
            type_fracs.append(sum(o.type_correct for o in t) / len(t))
            type_total += len(t)
            type_correct += sum(o.type_correct for o in t)
        n = [o for o in members if o.name_evaluated]
        if n:
            name_fracs.append(sum(o.name_correct for o in n) / len(n))
            name_total += len(n)
            name_correct += sum(o.name_correct for o in n)
    return PartitionScores(
        n_functions=len(by_fn),
        n_type_variables=type_total,
        n_name_variables=name_total,
        type_macro=sum(type_fracs) / len(type_fracs) if type_fracs else None,
        type_micro=type_correct / type_total if type_total else None,
        name_macro=sum(name_fracs) / len(name_fracs) if name_fracs else None,
        name_micro=name_correct / name_total if name_total else None,
    )


@dataclass
class PerBinaryRow:
    binary_id: str
    n_variables: int
    type_accuracy: float | None
    name_accuracy: float | None


@dataclass
class EvaluationReport:
    partitions: dict[str, PartitionScores | None]
    confusion: dict[str, list[tuple[str, float]]]
    per_binary: list[PerBinaryRow]
    layout_signature_micro: float | None
    baselines: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "partitions": {
                name: None
                if scores is None
                else {
                    "n_functions": scores.n_functions,
                    "n_type_variables": scores.n_type_variables,
                    "n_name_variables": scores.n_name_variables,
                    "type_macro": scores.type_macro,
                    "type_micro": scores.type_micro,
                    "name_macro": scores.name_macro,
                    "name_micro": scores.name_micro,
                }
                for name, scores in self.partitions.items()
            },
            "confusion": {
                gold: [[pred, freq] for pred, freq in rows]
                for gold, rows in self.confusion.items()
            },
            "per_binary": [
                {
                    "binary_id": row.binary_id,
                    "n_variables": row.n_variables,
                    "type_accuracy": row.type_accuracy,
                    "name_accuracy": row.name_accuracy,
                }
                for row in self.per_binary
            ],
            "layout_signature_micro": self.layout_signature_micro,
            "baselines": self.baselines,
        }

    def to_text(self) -> str:
        def pct(x: float | None) -> str:
            return f"{100 * x:5.1f}%" if x is not None else "    --"

        lines = ["partition                     funcs  typevars  type(macro)  type(micro)  name(macro)  name(micro)"]
        for name in PARTITIONS:
            scores = self.partitions.get(name)
            if scores is None:
                lines.append(f"{name:<28} (empty)")
                continue
            lines.append(
                f"{name:<28} {scores.n_functions:6d} {scores.n_type_variables:9d}"
                f"  {pct(scores.type_macro):>11}  {pct(scores.type_micro):>11}"
                f"  {pct(scores.name_macro):>11}  {pct(scores.name_micro):>11}"
            )
        if self.layout_signature_micro is not None:
            lines.append(f"layout-signature accuracy (micro): {pct(self.layout_signature_micro)}")
        for baseline, scores in self.baselines.items():
            lines.append(
                f"baseline {baseline}: type(micro) {pct(scores.get('type_micro'))}"
                f"  type(macro) {pct(scores.get('type_macro'))}"
            )
        return "\n".join(lines) + "\n"


def partition_report(
    predictions: Sequence[FunctionPredictions],
    test_split: Sequence[ProcessedFunction],
    flags: Sequence[bool],
    lib: TypeLibrary,
    baselines: Mapping[str, dict] | None = None,
) -> EvaluationReport:
    outcomes = score_variables(predictions, test_split, flags, lib)
    partitions: dict[str, PartitionScores | None] = {
        "overall": _aggregate(outcomes),
        "function_in_training": _aggregate([o for o in outcomes if o.in_training]),
        "function_not_in_training": _aggregate([o for o in outcomes if not o.in_training]),
        "struct": _aggregate([o for o in outcomes if o.structural]),
    }
    confusion: dict[str, list[tuple[str, float]]] = {}
    by_gold: dict[str, Counter[str]] = defaultdict(Counter)
    for o in outcomes:
        if o.type_evaluated and o.gold_canonical is not None:
            by_gold[o.gold_canonical][o.pred_canonical or NO_PREDICTION] += 1
    for gold, counts in sorted(by_gold.items()):
        total = sum(counts.values())
        top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        confusion[gold] = [(pred, count / total) for pred, count in top]
    per_binary: list[PerBinaryRow] = []
    by_binary: dict[str, list[VariableOutcome]] = defaultdict(list)
    for o in outcomes:
        by_binary[o.binary_id].append(o)
    for binary_id in sorted(by_binary):
        members = by_binary[binary_id]
        t = [o for o in members if o.type_evaluated]
        n = [o for o in members if o.name_evaluated]
        per_binary.append(
            PerBinaryRow(
                binary_id=binary_id,
                n_variables=len(t),
                type_accuracy=sum(o.type_correct for o in t) / len(t) if t else None,
                name_accuracy=sum(o.name_correct for o in n) / len(n) if n else None,
            )
        )
    n_type = sum(o.type_evaluated for o in outcomes)
    sig_micro = (
        sum(o.signature_correct for o in outcomes if o.type_evaluated) / n_type
        if n_type
        else None
    )
    return EvaluationReport(
        partitions=partitions,
        confusion=confusion,
        per_binary=per_binary,
        layout_signature_micro=sig_micro,
        baselines=dict(baselines or {}),
    )


def layout_signature_accuracy(
    predictions: Sequence[FunctionPredictions],
    test_split: Sequence[ProcessedFunction],
    flags: Sequence[bool],
    lib: TypeLibrary,
) -> float | None:
    """Accuracy when matching on layout signatures instead of canonicals."""
    outcomes = score_variables(predictions, test_split, flags, lib)
    evaluated = [o for o in outcomes if o.type_evaluated]
    if not evaluated:
        return None
    return sum(o.signature_correct for o in evaluated) / len(evaluated)


# ---------------------------------------------------------------------------
# Baselines


class FrequencyBySize:
    """Predict the modal developer type for each decompiler-reported size."""

    def __init__(self, table: Mapping[int, str]):
        self.table = dict(table)

    def predict(self, variable: VariableRecord) -> str:
        size = variable.layout.size if variable.layout is not None else None
        if size is None:
            return UNKNOWN_NAME
        return self.table.get(size, UNKNOWN_NAME)


def baseline_frequency_by_size(
    train_split: Sequence[ProcessedFunction], lib: TypeLibrary
) -> FrequencyBySize:
    counts: dict[int, Counter[str]] = defaultdict(Counter)
    for fn in train_split:
        for variable in fn.variables:
            canonical = variable.gold_type_canonical
            if canonical in (None, COMPONENT_NAME):
                continue
            size = variable.layout.size if variable.layout is not None else None
            if size is None:
                continue
            counts[size][canonical] += 1

    def tie_key(canonical: str) -> tuple[int, str]:
        type_id = lib.lookup(canonical)
        return (type_id if type_id is not None else len(lib), canonical)

    table = {}
    for size, counter in counts.items():
        top = max(counter.values())
        table[size] = min((c for c, n in counter.items() if n == top), key=tie_key)
    return FrequencyBySize(table)


class DecompilerRemap:
    """Reassign each decompiler type to its most common developer spelling."""

    def __init__(self, table: Mapping[str, str]):
        self.table = dict(table)

    def predict(self, variable: VariableRecord) -> str | None:
        dec = variable.decompiler_type
        if dec is None:
            return None
        return self.table.get(dec, dec)  # unseen decompiler types pass through


def baseline_decompiler_remap(
    train_split: Sequence[ProcessedFunction], lib: TypeLibrary
) -> DecompilerRemap:
    counts: dict[str, Counter[str]] = defaultdict(Counter)
    saw_field = False
    for fn in train_split:
        for variable in fn.variables:
            if variable.decompiler_type is not None:
                saw_field = True
            canonical = variable.gold_type_canonical
            if canonical in (None, COMPONENT_NAME) or variable.decompiler_type is None:
                continue
            counts[variable.decompiler_type][canonical] += 1
    if not saw_field:
        raise EvaluationError(
            "corpus records carry no decompiler_type field;"
            " re-ingest the corpus with decompiler-assigned types to run this baseline"
        )

    def tie_key(canonical: str) -> tuple[int, str]:
        type_id = lib.lookup(canonical)
        return (type_id if type_id is not None else len(lib), canonical)

    table = {}
    for dec, counter in counts.items():
        top = max(counter.values())
        table[dec] = min((c for c, n in counter.items() if n == top), key=tie_key)
    return DecompilerRemap(table)


def baseline_predictions(
    predictor, test_split: Sequence[ProcessedFunction]
) -> list[FunctionPredictions]:
    """Run a baseline predictor over every variable of the test split."""
    records = []
    for fn in test_split:
        rows = []
        for variable in fn.variables:
            pred = predictor.predict(variable)
            if pred is None:
                rows.append(())
            else:
                rows.append((PredictedCandidate(type_canonical=pred, name=None, log_prob=0.0),))
        records.append(
            FunctionPredictions(
                binary_id=fn.binary_id, function_id=fn.function_id, variables=tuple(rows)
            )
        )
    return records


def baseline_scores(
    predictor,
    test_split: Sequence[ProcessedFunction],
    flags: Sequence[bool],
    lib: TypeLibrary,
) -> dict:
    records = baseline_predictions(predictor, test_split)
    outcomes = score_variables(records, test_split, flags, lib)
    scores = _aggregate(outcomes)
    if scores is None:
        return {}
    return {
        "n_type_variables": scores.n_type_variables,
        "type_macro": scores.type_macro,
        "type_micro": scores.type_micro,
    }
