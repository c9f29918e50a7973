"""Hand-labeled 10-function fixture with hand-computed expected accuracies.

The expected values in EXPECTED were worked out on paper from the table
below; tests assert the scoring pipeline reproduces them exactly.

Function  flags  variables: gold type / gold name  ->  predicted type / name
  f0  FIT   int/count -> int/count OK,OK ; float/x -> int/x X,OK ; char/c -> char/cc OK,X
  f1  FIT   struct pt/p -> int/p X,OK                     (struct variable)
  f2        char[4]/buf -> char[3]/buf X,OK ; int/i -> int/i OK,OK
  f3        <Component>/- -> <Component> OK  (no name evaluation)
  f4        int/total -> truncated out, no prediction X,X ; int/n -> int/n OK,OK
  f5        obscure_t/q -> int/q X,OK                     (gold not in library)
  f6        pt */pp -> pt */pp OK,OK ; float/f -> <Unknown>/g X,X
  f7        uint16_t/u -> unsigned __int16/u X,OK         (distinct spellings)
  f8        int/idx -> int/idx OK,OK ; char/ch -> char/c OK,X
  f9        (no gold type)/res -> float/res  -,OK         (name-only variable)

Type macro  = mean(2/3, 0, 1/2, 1, 1/2, 0, 1/2, 0, 1) = 25/54
Type micro  = 8/15      FIT: macro 1/3, micro 1/2 (4 vars)
FNIT: macro 1/2, micro 6/11 (11 vars)   Struct: macro 1/2, micro 1/2
Name macro  = mean(2/3, 1, 1, 1/2, 1, 1/2, 1, 1/2, 1) = 43/54
Name micro  = 11/15
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from retyper import corpus as C
from retyper.evaluation import FunctionPredictions, PredictedCandidate, save_predictions
from retyper.typelib import (
    COMPONENT_NAME,
    UNKNOWN_NAME,
    DataLayout,
    Stack,
    TypeLibrary,
    make_array,
    make_pointer,
    make_scalar,
    make_struct,
)

INT = make_scalar("int", 4)
FLOAT = make_scalar("float", 4)
CHAR = make_scalar("char", 1)
INT64 = make_scalar("__int64", 8)
U16 = make_scalar("uint16_t", 2)
PT = make_struct("pt", [("x", FLOAT, 0), ("y", FLOAT, 4)])
PT_PTR = make_pointer(PT)
CHAR3 = make_array(CHAR, 3)
CHAR4 = make_array(CHAR, 4)

EXPECTED = {
    "overall": {
        "type_macro": Fraction(25, 54), "type_micro": Fraction(8, 15),
        "name_macro": Fraction(43, 54), "name_micro": Fraction(11, 15),
        "n_type_variables": 15, "n_name_variables": 15,
    },
    "function_in_training": {
        "type_macro": Fraction(1, 3), "type_micro": Fraction(1, 2),
        "n_type_variables": 4,
    },
    "function_not_in_training": {
        "type_macro": Fraction(1, 2), "type_micro": Fraction(6, 11),
        "n_type_variables": 11,
    },
    "struct": {
        "type_macro": Fraction(1, 2), "type_micro": Fraction(1, 2),
        "n_type_variables": 2,
    },
}


def build_library() -> TypeLibrary:
    lib = TypeLibrary()
    for entry in (INT, FLOAT, CHAR, INT64, U16, PT, PT_PTR, CHAR3, CHAR4):
        lib.register(entry)
    return lib


def _layout(entry) -> DataLayout:
    return DataLayout(location=Stack(16), size=entry.size, offsets=entry.member_offsets)


def _record(name, gold_entry=None, gold_name=None, truncated=False, gold_canonical=None,
            decompiler_type=None, layout=None):
    canonical = gold_canonical if gold_canonical is not None else (
        gold_entry.canonical if gold_entry is not None else None
    )
    if layout is None and gold_entry is not None:
        layout = _layout(gold_entry)
    return C.VariableRecord(
        name=name,
        positions=() if truncated else (0,),
        layout=layout,
        layout_tokens=C.layout_tokens(layout),
        truncated_out=truncated,
        gold_type_id=None,
        gold_name_id=None,
        gold_type_canonical=canonical,
        gold_name=gold_name,
        decompiler_type=decompiler_type,
    )


def _fn(binary_id, function_id, records):
    return C.ProcessedFunction(
        binary_id=binary_id,
        function_id=function_id,
        subword_ids=(0,),
        variables=tuple(records),
        body_hash=f"hash_{binary_id}_{function_id}",
    )


def _cand(entry=None, name=None, canonical=None, log_prob=-0.5):
    return (
        PredictedCandidate(
            type_canonical=canonical if canonical is not None else (
                entry.canonical if entry is not None else None
            ),
            name=name,
            log_prob=log_prob,
        ),
    )


def build_test_split():
    functions = [
        _fn("b0", "f0", [
            _record("v1", INT, "count"),
            _record("v2", FLOAT, "x"),
            _record("v3", CHAR, "c"),
        ]),
        _fn("b0", "f1", [_record("v1", PT, "p")]),
        _fn("b0", "f2", [
            _record("v1", CHAR4, "buf"),
            _record("v2", INT, "i"),
        ]),
        _fn("b1", "f3", [_record("v1", gold_canonical=COMPONENT_NAME)]),
        _fn("b1", "f4", [
            _record("v1", INT, "total", truncated=True),
            _record("v2", INT, "n"),
        ]),
        _fn("b1", "f5", [_record("v1", gold_canonical="obscure_t", gold_name="q")]),
        _fn("b2", "f6", [
            _record("v1", PT_PTR, "pp"),
            _record("v2", FLOAT, "f"),
        ]),
        _fn("b2", "f7", [_record("v1", U16, "u")]),
        _fn("b2", "f8", [
            _record("v1", INT, "idx"),
            _record("v2", CHAR, "ch"),
        ]),
        _fn("b2", "f9", [_record("v1", gold_name="res")]),
    ]
    flags = [True, True, False, False, False, False, False, False, False, False]
    predictions = [
        FunctionPredictions("b0", "f0", (
            _cand(INT, "count"), _cand(INT, "x"), _cand(CHAR, "cc"),
        )),
        FunctionPredictions("b0", "f1", (_cand(INT, "p"),)),
        FunctionPredictions("b0", "f2", (_cand(CHAR3, "buf"), _cand(INT, "i"))),
        FunctionPredictions("b1", "f3", (_cand(canonical=COMPONENT_NAME),)),
        FunctionPredictions("b1", "f4", ((), _cand(INT, "n"))),
        FunctionPredictions("b1", "f5", (_cand(INT, "q"),)),
        FunctionPredictions("b2", "f6", (
            _cand(PT_PTR, "pp"), _cand(canonical=UNKNOWN_NAME, name="g"),
        )),
        FunctionPredictions("b2", "f7", (_cand(canonical="unsigned __int16", name="u"),)),
        FunctionPredictions("b2", "f8", (_cand(INT, "idx"), _cand(CHAR, "c"))),
        FunctionPredictions("b2", "f9", (_cand(FLOAT, "res"),)),
    ]
    return functions, flags, predictions


DATA_DIR = Path(__file__).parent / "data" / "metric_fixture"


def write_fixture(out_dir: Path = DATA_DIR) -> None:
    """Serialize the fixture; the shipped copy under tests/data is what the
    metric-oracle tests actually load."""
    out_dir.mkdir(parents=True, exist_ok=True)
    test_split, flags, predictions = build_test_split()
    C.save_processed(test_split, out_dir / "test.jsonl")
    C.save_processed(build_train_split(), out_dir / "train.jsonl")
    save_predictions(predictions, out_dir / "predictions.jsonl")
    expected = {
        partition: {key: [value.numerator, value.denominator] if isinstance(value, Fraction) else value
                    for key, value in scores.items()}
        for partition, scores in EXPECTED.items()
    }
    with open(out_dir / "expected.json", "w", encoding="utf-8") as fh:
        json.dump({"flags": flags, "expected": expected}, fh, indent=2, sort_keys=True)


def load_fixture(data_dir: Path = DATA_DIR):
    from retyper.evaluation import load_predictions

    test_split = C.load_processed(data_dir / "test.jsonl")
    train_split = C.load_processed(data_dir / "train.jsonl")
    predictions = load_predictions(data_dir / "predictions.jsonl")
    with open(data_dir / "expected.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    expected = {
        partition: {
            key: Fraction(value[0], value[1]) if isinstance(value, list) else value
            for key, value in scores.items()
        }
        for partition, scores in meta["expected"].items()
    }
    return test_split, train_split, meta["flags"], predictions, expected


def build_train_split():
    """Gold sizes: int x3 and float x1 at 4 bytes, __int64 x2 at 8, char x1,
    uint16_t x2 at 2 with decompiler type "unsigned __int16"."""
    return [
        _fn("t0", "g0", [
            _record("v1", INT, "a", decompiler_type="int"),
            _record("v2", INT, "b", decompiler_type="int"),
            _record("v3", FLOAT, "c", decompiler_type="float"),
        ]),
        _fn("t1", "g1", [
            _record("v1", INT, "d", decompiler_type="int"),
            _record("v2", INT64, "e", decompiler_type="__int64"),
            _record("v3", INT64, "f", decompiler_type="__int64"),
        ]),
        _fn("t2", "g2", [
            _record("v1", CHAR, "g", decompiler_type="char"),
            _record("v2", U16, "h", decompiler_type="unsigned __int16"),
            _record("v3", U16, "i", decompiler_type="unsigned __int16"),
        ]),
    ]
