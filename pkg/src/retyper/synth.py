"""Synthetic corpora for desk-scale experiments and demos.

Two generators:

* :func:`toy_corpus` - a small closed world for memorization sanity checks.
* :func:`layout_corpus` - gold types mostly determined by the variable's
  observed storage layout, with a weaker code-token cue, so the value of the
  layout encoder is measurable; gold names correlate with gold types.

Run ``python -m retyper.synth --out corpus.jsonl`` to write a demo corpus.
"""

from __future__ import annotations

import argparse
import random

from .corpus import RawFunction, RawVariable, save_corpus
from .typelib import DataLayout, Stack, TypeEntry, layout_of, make_array, make_pointer, make_scalar, make_struct


def _toy_types() -> list[TypeEntry]:
    int4 = make_scalar("int", 4)
    return [
        int4,
        make_scalar("unsigned int", 4),
        make_scalar("char", 1),
        make_scalar("float", 4),
        make_scalar("double", 8),
        make_scalar("__int64", 8),
        make_pointer(make_scalar("char", 1)),
        make_struct("pair", [("a", int4, 0), ("b", int4, 4)]),
    ]


TOY_NAMES = [
    "count", "i", "j", "len", "size", "buf", "ptr", "result", "tmp", "flag",
    "idx", "total", "key", "value", "name", "data", "pos", "acc", "left", "right",
]

_FILLER_CALLS = ["sub_401000", "sub_4010f0", "memcpy_0", "log_msg", "check_state"]


def _variable_layout(entry: TypeEntry, slot: int) -> DataLayout:
    base = layout_of(entry)
    return DataLayout(location=Stack(16 * (slot + 1)), size=base.size, offsets=base.offsets)


def _emit_statements(rng: random.Random, name: str, extra: list[str]) -> list[str]:
    forms = [
        [name, "=", str(rng.randint(0, 4096)), ";"],
        ["if", "(", name, ">", str(rng.randint(1, 64)), ")", "{", name, "=", "0", ";", "}"],
        [rng.choice(_FILLER_CALLS), "(", name, ",", '"msg"', ")", ";"],
    ]
    toks = list(rng.choice(forms))
    toks.extend(extra)
    return toks


def _build_function(
    binary_id: str,
    function_id: str,
    rng: random.Random,
    variables: list[tuple[str, TypeEntry | None, str | None, DataLayout | None, str | None, list[str]]],
    unique_token: str,
) -> RawFunction:
    tokens: list[str] = ["void", unique_token, "(", ")", "{"]
    occurrences: dict[str, list[int]] = {name: [] for name, *_ in variables}
    for name, _, _, _, _, cue_tokens in variables:
        for _ in range(rng.randint(1, 3)):
            for tok in _emit_statements(rng, name, cue_tokens):
                if tok == name:
                    occurrences[name].append(len(tokens))
                tokens.append(tok)
            cue_tokens = []
    tokens.append("}")
    raw_vars = tuple(
        RawVariable(
            decompiler_name=name,
            occurrences=tuple(occurrences[name]),
            layout=layout,
            gold_type_canonical=entry.canonical if entry is not None else None,
            gold_name=gold_name,
            decompiler_type=dec_type,
        )
        for name, entry, gold_name, layout, dec_type, _ in variables
    )
    return RawFunction(
        binary_id=binary_id, function_id=function_id, tokens=tuple(tokens), variables=raw_vars
    )


def toy_corpus(n_functions: int = 50, seed: int = 0) -> list[RawFunction]:
    """Closed world of 8 types and 20 names; layouts always match the type."""
    rng = random.Random(seed)
    types = _toy_types()
    functions = []
    for k in range(n_functions):
        n_vars = rng.randint(2, 4)
        variables = []
        for t in range(n_vars):
            entry = rng.choice(types)
            variables.append(
                (
                    f"v{t + 1}",
                    entry,
                    rng.choice(TOY_NAMES),
                    _variable_layout(entry, t),
                    entry.canonical,
                    [],
                )
            )
        functions.append(
            _build_function(f"bin_{k % 10}", f"fn_{k}", rng, variables, f"toy_fn_{k}")
        )
    return functions


def _layout_world() -> list[tuple[TypeEntry, list[str], str]]:
    """(type, gold name pool, cue tag) with pairwise-distinct layouts."""
    char = make_scalar("char", 1)
    short = make_scalar("short", 2)
    int4 = make_scalar("int", 4)
    int64 = make_scalar("__int64", 8)
    return [
        (char, ["ch", "letter"], "byte"),
        (short, ["level", "half"], "word"),
        (int4, ["count", "idx", "total"], "dword"),
        (int64, ["offset", "big"], "qword"),
        (make_struct("pair_c", [("a", char, 0), ("b", char, 1)]), ["twin", "duo"], "cpair"),
        (make_struct("pair_i", [("x", int4, 0), ("y", int4, 4)]), ["point", "coord"], "ipair"),
        (make_array(int4, 3), ["triple", "window"], "ivec"),
        (
            make_struct("mix", [("lo", short, 0), ("hi", short, 2), ("v", int4, 4)]),
            ["packet", "header"],
            "mix",
        ),
    ]


def layout_corpus(
    n_functions: int = 360,
    seed: int = 0,
    layout_fidelity: float = 0.8,
    cue_rate: float = 0.2,
    n_binaries: int = 30,
) -> list[RawFunction]:
    """Corpus where the observed layout carries most of the type signal.

    Each variable's gold type is rendered faithfully in its layout with
    probability ``layout_fidelity``; otherwise the layout of another type is
    observed (simulating decompiler mistakes). Independently, a code-token
    cue names the type with probability ``cue_rate``. Gold names are drawn
    from small per-type pools, injecting name-type correlation.
    """
    rng = random.Random(seed)
    world = _layout_world()
    functions = []
    for k in range(n_functions):
        n_vars = rng.randint(2, 4)
        variables = []
        for t in range(n_vars):
            entry, pool, tag = world[rng.randrange(len(world))]
            weights = [3] + [1] * (len(pool) - 1)
            gold_name = rng.choices(pool, weights=weights, k=1)[0]
            if rng.random() < layout_fidelity:
                observed = entry
            else:
                observed = world[rng.randrange(len(world))][0]
            layout = _variable_layout(observed, t)
            name = f"v{t + 1}"
            cue = [f"cue_{tag}", "(", name, ")", ";"] if rng.random() < cue_rate else []
            variables.append((name, entry, gold_name, layout, observed.canonical, cue))
        functions.append(
            _build_function(
                f"bin_{k % n_binaries}", f"fn_{k}", rng, variables, f"sub_{0x400000 + 16 * k:x}"
            )
        )
    return functions


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="write a synthetic demo corpus")
    parser.add_argument("--kind", choices=["toy", "layout"], default="layout")
    parser.add_argument("--out", required=True)
    parser.add_argument("--functions", type=int, default=360)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if args.kind == "toy":
        functions = toy_corpus(args.functions, args.seed)
    else:
        functions = layout_corpus(args.functions, args.seed)
    save_corpus(functions, args.out)
    print(f"wrote {len(functions)} functions to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
