"""Corpus ingestion and preprocessing.

Turns pre-decompiled, pre-aligned functions (one JSON record per line) into
model-ready shards: literal placeholders, byte-pair subword encoding,
per-variable occurrence sets, layout token streams, component labeling and a
per-binary train/valid/test split.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .typelib import (
    COMPONENT_ID,
    COMPONENT_NAME,
    DataLayout,
    Register,
    Stack,
    TypeLibrary,
)

NUM_TOKEN = "<Num>"
STR_TOKEN = "<Str>"
VAR_SENTINEL = "<Var>"
PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"

SPECIAL_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, NUM_TOKEN, STR_TOKEN, VAR_SENTINEL)

NO_NAME = "<NoName>"
UNK_NAME = "<UnkName>"
NO_NAME_ID = 0
UNK_NAME_ID = 1

LAYOUT_PAD = "<pad-layout>"
LAYOUT_UNK = "<unk-layout>"
LAYOUT_NONE = "<no-layout>"


class CorpusError(Exception):
    """Malformed corpus input."""


# ---------------------------------------------------------------------------
# Raw corpus records


@dataclass(frozen=True)
class RawVariable:
    decompiler_name: str
    occurrences: tuple[int, ...]
    layout: DataLayout | None = None
    gold_type_canonical: str | None = None
    gold_name: str | None = None
    decompiler_type: str | None = None


@dataclass(frozen=True)
class RawFunction:
    binary_id: str
    function_id: str
    tokens: tuple[str, ...]
    variables: tuple[RawVariable, ...]

    def validate(self) -> None:
        seen: set[int] = set()
        for var in self.variables:
            if not var.occurrences:
                raise CorpusError(
                    f"{self.function_id}: variable {var.decompiler_name!r} never occurs"
                )
            for idx in var.occurrences:
                if not 0 <= idx < len(self.tokens):
                    raise CorpusError(f"{self.function_id}: occurrence {idx} out of range")
                if self.tokens[idx] != var.decompiler_name:
                    raise CorpusError(
                        f"{self.function_id}: token {idx} is {self.tokens[idx]!r},"
                        f" expected {var.decompiler_name!r}"
                    )
                if idx in seen:
                    raise CorpusError(f"{self.function_id}: token {idx} claimed twice")
                seen.add(idx)


def layout_to_json(layout: DataLayout | None) -> dict | None:
    if layout is None:
        return None
    if isinstance(layout.location, Register):
        location = {"kind": "register", "name": layout.location.name}
    elif isinstance(layout.location, Stack):
        location = {"kind": "stack", "offset": layout.location.offset}
    else:
        location = None
    return {"location": location, "size": layout.size, "offsets": list(layout.offsets)}


def layout_from_json(obj: dict | None) -> DataLayout | None:
    if obj is None:
        return None
    loc = obj.get("location")
    location: Register | Stack | None
    if loc is None:
        location = None
    elif loc["kind"] == "register":
        location = Register(loc["name"])
    elif loc["kind"] == "stack":
        location = Stack(int(loc["offset"]))
    else:
        raise CorpusError(f"bad location kind: {loc['kind']!r}")
    return DataLayout(location=location, size=obj.get("size"), offsets=tuple(obj.get("offsets", ())))


def raw_function_to_json(fn: RawFunction) -> dict:
    return {
        "binary_id": fn.binary_id,
        "function_id": fn.function_id,
        "tokens": list(fn.tokens),
        "variables": [
            {
                "decompiler_name": v.decompiler_name,
                "occurrences": list(v.occurrences),
                "layout": layout_to_json(v.layout),
                "gold_type_canonical": v.gold_type_canonical,
                "gold_name": v.gold_name,
                "decompiler_type": v.decompiler_type,
            }
            for v in fn.variables
        ],
    }


def raw_function_from_json(obj: dict) -> RawFunction:
    try:
        fn = RawFunction(
            binary_id=obj["binary_id"],
            function_id=obj["function_id"],
            tokens=tuple(obj["tokens"]),
            variables=tuple(
                RawVariable(
                    decompiler_name=v["decompiler_name"],
                    occurrences=tuple(v["occurrences"]),
                    layout=layout_from_json(v.get("layout")),
                    gold_type_canonical=v.get("gold_type_canonical"),
                    gold_name=v.get("gold_name"),
                    decompiler_type=v.get("decompiler_type"),
                )
                for v in obj["variables"]
            ),
        )
    except KeyError as exc:
        raise CorpusError(f"missing corpus field: {exc}") from exc
    fn.validate()
    return fn


def load_corpus(path: str | Path) -> list[RawFunction]:
    functions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                functions.append(raw_function_from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    return functions


def save_corpus(functions: Iterable[RawFunction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fn in functions:
            fh.write(json.dumps(raw_function_to_json(fn), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Literal placeholders

_NUMERIC_RE = re.compile(
    r"""^(?:
        0[xX][0-9a-fA-F]+ |            # hex
        0[bB][01]+ |                   # binary
        (?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)? # decimal / float
    )[uUlLfF]*$""",
    re.VERBOSE,
)
_CHAR_RE = re.compile(r"^'(?:\\.|[^'\\])+'$")


def is_numeric_literal(token: str) -> bool:
    return bool(_NUMERIC_RE.match(token) or _CHAR_RE.match(token))


def is_string_literal(token: str) -> bool:
    return len(token) >= 2 and token.startswith('"') and token.endswith('"')


def normalize_literals(tokens: Sequence[str]) -> tuple[str, ...]:
    """Replace numeric literals with <Num> and string literals with <Str>."""
    out = []
    for tok in tokens:
        if is_numeric_literal(tok):
            out.append(NUM_TOKEN)
        elif is_string_literal(tok):
            out.append(STR_TOKEN)
        else:
            out.append(tok)
    return tuple(out)


# ---------------------------------------------------------------------------
# Byte-pair subword encoding


class SubwordVocab:
    """Character-level BPE over surface code tokens.

    Merges are learned greedily on pair frequency; ties break on the
    lexicographically smallest pair so training is deterministic. Special
    tokens are atomic and never split.
    """

    def __init__(self, alphabet: Sequence[str], merges: Sequence[tuple[str, str]]):
        self.alphabet = tuple(alphabet)
        self.merges = tuple((a, b) for a, b in merges)
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        symbols = list(SPECIAL_TOKENS) + list(self.alphabet) + [a + b for a, b in self.merges]
        self.id_of = {}
        for sym in symbols:
            if sym not in self.id_of:
                self.id_of[sym] = len(self.id_of)
        self.token_of = {i: s for s, i in self.id_of.items()}
        self.pad_id = self.id_of[PAD_TOKEN]
        self.bos_id = self.id_of[BOS_TOKEN]
        self.eos_id = self.id_of[EOS_TOKEN]
        self.unk_id = self.id_of[UNK_TOKEN]

    def __len__(self) -> int:
        return len(self.id_of)

    def split(self, token: str) -> list[str]:
        """Subword pieces of one surface token."""
        if token in SPECIAL_TOKENS:
            return [token]
        pieces = list(token)
        while len(pieces) > 1:
            best_rank = None
            best_idx = -1
            for i in range(len(pieces) - 1):
                rank = self._ranks.get((pieces[i], pieces[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_idx = i
            if best_rank is None:
                break
            merged = pieces[best_idx] + pieces[best_idx + 1]
            pieces[best_idx : best_idx + 2] = [merged]
        return pieces

    def encode_token(self, token: str) -> list[int]:
        return [self.id_of.get(p, self.unk_id) for p in self.split(token)]

    def decode(self, ids: Iterable[int]) -> str:
        """Concatenate pieces; inverse of encode_token for in-alphabet tokens."""
        return "".join(self.token_of[i] for i in ids)

    def content_hash(self) -> str:
        payload = json.dumps(
            {"alphabet": list(self.alphabet), "merges": [list(m) for m in self.merges]},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"alphabet": list(self.alphabet), "merges": [list(m) for m in self.merges]},
                fh,
                sort_keys=True,
            )

    @classmethod
    def load(cls, path: str | Path) -> "SubwordVocab":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(obj["alphabet"], [tuple(m) for m in obj["merges"]])


def train_bpe(corpus: Iterable[Sequence[str]], vocab_size: int) -> SubwordVocab:
    """Learn BPE merges until the symbol inventory reaches ``vocab_size``.

    ``vocab_size`` counts alphabet characters plus merged symbols; special
    tokens sit on top of it.
    """
    token_counts: Counter[str] = Counter()
    for tokens in corpus:
        for tok in tokens:
            if tok not in SPECIAL_TOKENS:
                token_counts[tok] += 1
    alphabet = sorted({c for tok in token_counts for c in tok})
    if vocab_size < len(alphabet):
        raise CorpusError(
            f"vocab_size {vocab_size} smaller than base alphabet ({len(alphabet)})"
        )
    words = {tok: list(tok) for tok in token_counts}
    merges: list[tuple[str, str]] = []
    while len(alphabet) + len(merges) < vocab_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for tok, pieces in words.items():
            count = token_counts[tok]
            for a, b in zip(pieces, pieces[1:]):
                pair_counts[(a, b)] += count
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        for tok, pieces in words.items():
            i = 0
            while i < len(pieces) - 1:
                if pieces[i] == best[0] and pieces[i + 1] == best[1]:
                    pieces[i : i + 2] = [merged]
                else:
                    i += 1
    return SubwordVocab(alphabet, merges)


# ---------------------------------------------------------------------------
# Name vocabulary


class NameVocab:
    """Closed vocabulary of the N most frequent gold names plus sentinels."""

    def __init__(self, names: Sequence[str]):
        self.names = (NO_NAME, UNK_NAME) + tuple(names)
        self.id_of = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def lookup(self, name: str | None) -> int:
        if name is None:
            return NO_NAME_ID
        return self.id_of.get(name, UNK_NAME_ID)

    def name_of(self, name_id: int) -> str:
        return self.names[name_id]

    def content_hash(self) -> str:
        payload = json.dumps(list(self.names), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(self.names[2:]), fh)

    @classmethod
    def load(cls, path: str | Path) -> "NameVocab":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


def build_name_vocab(functions: Iterable[RawFunction], max_names: int = 10_000) -> NameVocab:
    counts: Counter[str] = Counter()
    for fn in functions:
        for var in fn.variables:
            if var.gold_name is not None:
                counts[var.gold_name] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return NameVocab([name for name, _ in ranked[:max_names]])


# ---------------------------------------------------------------------------
# Layout tokenization


def layout_tokens(layout: DataLayout | None) -> tuple[str, ...]:
    """Render a layout as [Loc_*][Size_*][Offset_*]... tokens.

    Stack offsets use lowercase hex with a 0x prefix; sizes and member
    offsets are decimal. Missing layouts yield no tokens.
    """
    if layout is None:
        return ()
    toks: list[str] = []
    if isinstance(layout.location, Register):
        toks.append(f"[Loc_{layout.location.name}]")
    elif isinstance(layout.location, Stack):
        toks.append(f"[Loc_S{layout.location.offset:#x}]")
    if layout.size is not None:
        toks.append(f"[Size_{layout.size}]")
    toks.extend(f"[Offset_{off}]" for off in layout.offsets)
    return tuple(toks)


_LOC_REG_RE = re.compile(r"^\[Loc_(?!S0x)(.+)\]$")
_LOC_STACK_RE = re.compile(r"^\[Loc_S(0x[0-9a-f]+)\]$")
_SIZE_RE = re.compile(r"^\[Size_([0-9]+)\]$")
_OFFSET_RE = re.compile(r"^\[Offset_([0-9]+)\]$")


def parse_layout_tokens(tokens: Sequence[str]) -> DataLayout | None:
    """Inverse of :func:`layout_tokens`; the re-parse oracle for injectivity."""
    if not tokens:
        return None
    location: Register | Stack | None = None
    size: int | None = None
    offsets: list[int] = []
    for tok in tokens:
        if m := _LOC_STACK_RE.match(tok):
            location = Stack(int(m.group(1), 16))
        elif m := _LOC_REG_RE.match(tok):
            location = Register(m.group(1))
        elif m := _SIZE_RE.match(tok):
            size = int(m.group(1))
        elif m := _OFFSET_RE.match(tok):
            offsets.append(int(m.group(1)))
        else:
            raise CorpusError(f"unrecognized layout token: {tok!r}")
    return DataLayout(location=location, size=size, offsets=tuple(offsets))


class LayoutVocab:
    """Token ids for the layout encoder, built from the training split."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = (LAYOUT_PAD, LAYOUT_UNK, LAYOUT_NONE) + tuple(tokens)
        self.id_of = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.id_of[LAYOUT_PAD]
        self.unk_id = self.id_of[LAYOUT_UNK]
        self.none_id = self.id_of[LAYOUT_NONE]

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Ids for one variable's layout tokens; empty layouts map to <no-layout>."""
        if not tokens:
            return [self.none_id]
        return [self.id_of.get(t, self.unk_id) for t in tokens]

    def content_hash(self) -> str:
        payload = json.dumps(list(self.tokens), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(self.tokens[3:]), fh)

    @classmethod
    def load(cls, path: str | Path) -> "LayoutVocab":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


def build_layout_vocab(functions: Iterable[RawFunction]) -> LayoutVocab:
    seen: set[str] = set()
    for fn in functions:
        for var in fn.variables:
            seen.update(layout_tokens(var.layout))
    return LayoutVocab(sorted(seen))


# ---------------------------------------------------------------------------
# Component labeling


def label_components(fn: RawFunction) -> RawFunction:
    """Mark variables with neither a gold name nor a gold type as components.

    Those are decompiler-invented fragments of a source-level variable; they
    get the component type label and are excluded from name supervision.
    """
    new_vars = []
    changed = False
    for var in fn.variables:
        if var.gold_type_canonical is None and var.gold_name is None:
            new_vars.append(replace(var, gold_type_canonical=COMPONENT_NAME))
            changed = True
        else:
            new_vars.append(var)
    if not changed:
        return fn
    return replace(fn, variables=tuple(new_vars))


def has_labeled_variable(fn: RawFunction) -> bool:
    """True when at least one variable needs renaming or retyping."""
    return any(
        v.gold_type_canonical not in (None, COMPONENT_NAME) or v.gold_name is not None
        for v in fn.variables
    )


# ---------------------------------------------------------------------------
# Encoded functions


@dataclass(frozen=True)
class VariableRecord:
    name: str
    positions: tuple[int, ...]  # subword positions of every surviving occurrence
    layout: DataLayout | None
    layout_tokens: tuple[str, ...]
    truncated_out: bool
    gold_type_id: int | None = None
    gold_name_id: int | None = None
    gold_type_canonical: str | None = None
    gold_name: str | None = None
    decompiler_type: str | None = None


@dataclass(frozen=True)
class ProcessedFunction:
    binary_id: str
    function_id: str
    subword_ids: tuple[int, ...]
    variables: tuple[VariableRecord, ...]  # ordered by first occurrence
    body_hash: str


def body_hash(tokens: Sequence[str], variable_positions: set[int], vocab: SubwordVocab) -> str:
    """Hash of the subword stream with literals normalized and variable
    occurrences replaced by a fixed sentinel, so renaming and constant
    changes do not defeat duplicate detection."""
    normalized = [
        VAR_SENTINEL if i in variable_positions else tok
        for i, tok in enumerate(normalize_literals(tokens))
    ]
    ids: list[int] = []
    for tok in normalized:
        ids.extend(vocab.encode_token(tok))
    payload = ",".join(str(i) for i in ids)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def encode_function(
    raw: RawFunction,
    vocab: SubwordVocab,
    name_vocab: NameVocab,
    lib: TypeLibrary,
    max_seq_length: int,
) -> ProcessedFunction:
    """Subword-encode one function and recompute occurrence sets.

    A surface occurrence maps to the positions of all its subword pieces.
    Sequences are truncated at the right; variables whose every occurrence
    falls beyond the cut are flagged truncated-out (excluded from training,
    scored incorrect at evaluation).
    """
    raw.validate()
    tokens = normalize_literals(raw.tokens)
    piece_ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for tok in tokens:
        ids = vocab.encode_token(tok)
        spans.append((len(piece_ids), len(piece_ids) + len(ids)))
        piece_ids.extend(ids)

    occupied = {i for var in raw.variables for i in var.occurrences}
    records = []
    for var in sorted(raw.variables, key=lambda v: min(v.occurrences)):
        positions = []
        for occ in var.occurrences:
            start, end = spans[occ]
            if end <= max_seq_length:  # partially cut occurrences do not count
                positions.extend(range(start, end))
        truncated_out = not positions
        is_component = var.gold_type_canonical == COMPONENT_NAME
        if var.gold_type_canonical is None and var.gold_name is None:
            gold_type_id = None
            gold_name_id = None
        else:
            gold_type_id = (
                COMPONENT_ID if is_component else lib.lookup_or_unknown(var.gold_type_canonical)
            )
            gold_name_id = NO_NAME_ID if is_component else name_vocab.lookup(var.gold_name)
        records.append(
            VariableRecord(
                name=var.decompiler_name,
                positions=tuple(positions),
                layout=var.layout,
                layout_tokens=layout_tokens(var.layout),
                truncated_out=truncated_out,
                gold_type_id=gold_type_id,
                gold_name_id=gold_name_id,
                gold_type_canonical=var.gold_type_canonical,
                gold_name=var.gold_name,
                decompiler_type=var.decompiler_type,
            )
        )
    return ProcessedFunction(
        binary_id=raw.binary_id,
        function_id=raw.function_id,
        subword_ids=tuple(piece_ids[:max_seq_length]),
        variables=tuple(records),
        body_hash=body_hash(raw.tokens, occupied, vocab),
    )


def processed_to_json(fn: ProcessedFunction) -> dict:
    return {
        "binary_id": fn.binary_id,
        "function_id": fn.function_id,
        "subword_ids": list(fn.subword_ids),
        "body_hash": fn.body_hash,
        "variables": [
            {
                "name": v.name,
                "positions": list(v.positions),
                "layout": layout_to_json(v.layout),
                "layout_tokens": list(v.layout_tokens),
                "truncated_out": v.truncated_out,
                "gold_type_id": v.gold_type_id,
                "gold_name_id": v.gold_name_id,
                "gold_type_canonical": v.gold_type_canonical,
                "gold_name": v.gold_name,
                "decompiler_type": v.decompiler_type,
            }
            for v in fn.variables
        ],
    }


def processed_from_json(obj: dict) -> ProcessedFunction:
    return ProcessedFunction(
        binary_id=obj["binary_id"],
        function_id=obj["function_id"],
        subword_ids=tuple(obj["subword_ids"]),
        body_hash=obj["body_hash"],
        variables=tuple(
            VariableRecord(
                name=v["name"],
                positions=tuple(v["positions"]),
                layout=layout_from_json(v.get("layout")),
                layout_tokens=tuple(v["layout_tokens"]),
                truncated_out=v["truncated_out"],
                gold_type_id=v.get("gold_type_id"),
                gold_name_id=v.get("gold_name_id"),
                gold_type_canonical=v.get("gold_type_canonical"),
                gold_name=v.get("gold_name"),
                decompiler_type=v.get("decompiler_type"),
            )
            for v in obj["variables"]
        ),
    )


def save_processed(functions: Iterable[ProcessedFunction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fn in functions:
            fh.write(json.dumps(processed_to_json(fn), sort_keys=True) + "\n")


def load_processed(path: str | Path) -> list[ProcessedFunction]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(processed_from_json(json.loads(line)))
    return out


# ---------------------------------------------------------------------------
# Splitting


SPLIT_NAMES = ("train", "valid", "test")


def split_per_binary(
    functions: Sequence[RawFunction],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> dict[str, list[RawFunction]]:
    """Assign whole binaries to train/valid/test so no binary spans splits."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {ratios}")
    binaries = sorted({fn.binary_id for fn in functions})
    rng = random.Random(seed)
    rng.shuffle(binaries)
    n = len(binaries)
    bounds = [round(sum(ratios[: i + 1]) * n) for i in range(3)]
    assignment: dict[str, str] = {}
    start = 0
    for name, end in zip(SPLIT_NAMES, bounds):
        for b in binaries[start:end]:
            assignment[b] = name
        start = end
    splits: dict[str, list[RawFunction]] = {name: [] for name in SPLIT_NAMES}
    for fn in sorted(functions, key=lambda f: (f.binary_id, f.function_id)):
        splits[assignment[fn.binary_id]].append(fn)
    return splits


def mark_function_in_training(
    test_split: Sequence[ProcessedFunction], train_split: Sequence[ProcessedFunction]
) -> list[bool]:
    """Per test function: does its normalized body also appear in training?"""
    train_hashes = {fn.body_hash for fn in train_split}
    return [fn.body_hash in train_hashes for fn in test_split]
