from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from generators import leaf_resolver, random_entry
from retyper.typelib import (
    COMPONENT_ID,
    COMPONENT_NAME,
    UNKNOWN_ID,
    CanonicalParseError,
    NoLayoutError,
    TypeEntry,
    TypeKind,
    TypeLibError,
    TypeLibrary,
    TypeValidationError,
    canonical_serialize,
    layout_of,
    layout_signature,
    is_structural,
    make_array,
    make_component,
    make_pointer,
    make_scalar,
    make_struct,
    make_union,
    make_void,
    parse_canonical,
)

INT = make_scalar("int", 4)
CHAR = make_scalar("char", 1)
FLOAT = make_scalar("float", 4)


def point_struct(second_field: str = "y") -> TypeEntry:
    return make_struct("point", [("x", FLOAT, 0), (second_field, FLOAT, 4)])


class TestCanonicalSerialize:
    def test_scalar_is_its_name(self):
        assert canonical_serialize(INT) == "int"

    def test_struct_grammar(self):
        assert (
            canonical_serialize(point_struct())
            == "struct point { float x @0; float y @4; }"
        )

    def test_field_names_distinguish_types(self):
        assert canonical_serialize(point_struct("y")) != canonical_serialize(point_struct("z"))

    def test_pointer_and_array(self):
        assert canonical_serialize(make_pointer(CHAR)) == "char *"
        assert canonical_serialize(make_array(CHAR, 4)) == "char[4]"
        assert canonical_serialize(make_pointer(make_array(INT, 2))) == "int[2] *"
        assert canonical_serialize(make_array(make_pointer(INT), 3)) == "int *[3]"

    def test_component(self):
        assert canonical_serialize(make_component()) == COMPONENT_NAME

    def test_deterministic(self):
        a = point_struct()
        b = point_struct()
        assert canonical_serialize(a) == canonical_serialize(b)

    def test_malformed_entry_rejected(self):
        with pytest.raises(TypeValidationError):
            TypeEntry(
                name="bad",
                kind=TypeKind.STRUCT,
                size=2,
                member_offsets=(0, 4),  # size < last offset
                fields=(("a", "int"), ("b", "int")),
            ).validate()
        with pytest.raises(TypeValidationError):
            TypeEntry(name="x", kind=TypeKind.SCALAR, size=4, member_offsets=(0, 4)).validate()


class TestRegister:
    def test_dedup_by_canonical(self):
        lib = TypeLibrary()
        first = lib.register(INT)
        assert lib.register(make_scalar("int", 4)) == first

    def test_distinct_spellings_distinct_ids(self):
        lib = TypeLibrary()
        assert lib.register(INT) != lib.register(make_scalar("unsigned int", 4))

    def test_reserved_slots(self):
        lib = TypeLibrary()
        assert lib.register(make_component()) == COMPONENT_ID == 0
        assert lib.lookup(COMPONENT_NAME) == 0
        assert lib.lookup_or_unknown("never seen") == UNKNOWN_ID == 1

    def test_round_trip_id(self):
        lib = TypeLibrary()
        entry = point_struct()
        type_id = lib.register(entry)
        assert lib.lookup(canonical_serialize(entry)) == type_id

    def test_frozen_library_rejects_new_entries(self):
        lib = TypeLibrary()
        lib.freeze()
        with pytest.raises(TypeLibError):
            lib.register(INT)
        # registering an existing canonical is still a lookup, not a write
        assert lib.register(make_component()) == COMPONENT_ID


class TestLayoutSignature:
    def test_primitives_merge_by_size(self):
        assert layout_signature(make_scalar("bool", 1)) == "Primitive_1"
        assert layout_signature(make_scalar("char", 1)) == "Primitive_1"

    def test_pointers_discard_qualifiers(self):
        const_char_ptr = make_pointer(make_scalar("const char", 1))
        char_ptr = make_pointer(CHAR)
        assert layout_signature(const_char_ptr) == "Pointer<Primitive_1>"
        assert layout_signature(char_ptr) == "Pointer<Primitive_1>"

    def test_struct_of_two_floats(self):
        imvec2 = make_struct("ImVec2", [("x", FLOAT, 0), ("y", FLOAT, 4)])
        assert layout_signature(imvec2) == "Struct<Primitive_4, Primitive_4>"

    def test_invariant_under_renaming(self):
        renamed = make_struct("Vec2f", [("a", FLOAT, 0), ("b", FLOAT, 4)])
        assert layout_signature(renamed) == layout_signature(point_struct())

    def test_arrays_keep_length(self):
        assert layout_signature(make_array(CHAR, 3)) != layout_signature(make_array(CHAR, 4))

    def test_component_and_unknown_have_no_signature(self):
        lib = TypeLibrary()
        with pytest.raises(NoLayoutError):
            layout_signature(lib[COMPONENT_ID])
        with pytest.raises(NoLayoutError):
            layout_signature(lib[UNKNOWN_ID])


class TestLayoutOf:
    def test_array_offsets(self):
        assert layout_of(make_array(INT, 2)).offsets == (0, 4)

    def test_struct_of_two_chars(self):
        two_chars = make_struct("cc", [("a", CHAR, 0), ("b", CHAR, 1)])
        assert layout_of(two_chars).offsets == (0, 1)

    def test_scalar_single_offset(self):
        assert layout_of(INT).offsets == (0,)
        assert layout_of(INT).size == 4

    def test_unsized_types_have_no_layout(self):
        with pytest.raises(NoLayoutError):
            layout_of(make_void())
        with pytest.raises(NoLayoutError):
            layout_of(make_component())

    def test_pointer_layout_is_one_word(self):
        layout = layout_of(make_pointer(point_struct()))
        assert (layout.size, layout.offsets) == (8, (0,))


class TestParseCanonical:
    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 10**9))
    def test_round_trip_entries(self, seed):
        entry = random_entry(random.Random(seed))
        assert parse_canonical(entry.canonical, leaf_resolver) == entry

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 10**9))
    def test_reserialize_is_identity_on_strings(self, seed):
        text = random_entry(random.Random(seed)).canonical
        assert parse_canonical(text, leaf_resolver).canonical == text

    def test_nested_struct(self):
        inner = make_struct("in_", [("a", INT, 0)])
        outer = make_struct("out_", [("first", inner, 0), ("b", CHAR, 4)])
        assert parse_canonical(outer.canonical, leaf_resolver) == outer

    def test_unknown_leaf_is_unsized_scalar(self):
        entry = parse_canonical("struct_mystery_t")
        assert entry.kind == TypeKind.SCALAR
        assert entry.size is None

    def test_malformed(self):
        for text in ("", "struct broken {", "int[x]", "struct s { int @0; }", "int[0]"):
            with pytest.raises(CanonicalParseError):
                parse_canonical(text)

    def test_hostile_nesting_rejected_not_crashed(self):
        with pytest.raises(CanonicalParseError, match="nesting"):
            parse_canonical("char" + " *" * 5000)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 10**9), st.data())
    def test_mutated_canonicals_never_crash(self, seed, data):
        # any mutation of a valid canonical either parses or raises the
        # parse error; nothing else may escape
        text = list(random_entry(random.Random(seed)).canonical)
        for _ in range(data.draw(st.integers(1, 4))):
            pos = data.draw(st.integers(0, max(len(text) - 1, 0)))
            op = data.draw(st.sampled_from(["del", "ins", "sub"]))
            if op == "del" and text:
                del text[pos % len(text)]
            elif op == "ins":
                text.insert(pos, data.draw(st.sampled_from("abc *[]{};@09")))
            elif text:
                text[pos % len(text)] = data.draw(st.sampled_from("abc *[]{};@09"))
        try:
            parse_canonical("".join(text))
        except CanonicalParseError:
            pass


class TestStructural:
    def test_struct_union_pointer_array(self):
        assert is_structural(point_struct())
        assert is_structural(make_union("u", [("a", INT)]))
        assert is_structural(make_pointer(point_struct()))
        assert is_structural(make_array(point_struct(), 2))
        assert not is_structural(INT)
        assert not is_structural(make_pointer(CHAR))


class TestLibraryFile:
    def test_save_load_identity(self, tmp_path):
        lib = TypeLibrary()
        for seed in range(25):
            lib.register(random_entry(random.Random(seed)))
        path = tmp_path / "typelib.jsonl"
        lib.save(path)
        loaded = TypeLibrary.load(path)
        assert [e.canonical for e in loaded] == [e.canonical for e in lib]
        assert loaded.content_hash() == lib.content_hash()
