"""Closed library of predictable variable types.

The decoder classifies over a fixed set of types collected from training
data. Each type has a canonical string used for exact-match scoring, a byte
layout (size plus member offsets) feeding the layout encoder, and a
name-free structural signature used for layout-only comparison against
systems that do not recover type or field names.

Canonical grammar:

    scalar / typedef / function pointer / void -> the type's name
    pointer      -> <child canonical> " *"
    array        -> <child canonical> "[" <length> "]"
    struct/union -> "struct"|"union" " " <name> " { " <field>... "; }"
                    where <field> = <child canonical> " " <field name> " @" <offset>
                    and fields are joined with "; "
    component    -> "<Component>"

Within one library, canonical strings are injective over entries: equal
strings mean equal types, including layout and field names.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator

POINTER_SIZE = 8  # 64-bit targets

COMPONENT_NAME = "<Component>"
UNKNOWN_NAME = "<Unknown>"
COMPONENT_ID = 0
UNKNOWN_ID = 1


class TypeLibError(Exception):
    """Base error for type library operations."""


class TypeValidationError(TypeLibError):
    """An entry violates structural invariants (offset/size contradictions etc.)."""


class CanonicalParseError(TypeLibError):
    """A canonical string does not conform to the grammar."""


class NoLayoutError(TypeLibError):
    """The entry has no resolvable byte layout (component, unknown, void, unsized)."""


class TypeKind(str, Enum):
    SCALAR = "scalar"
    POINTER = "pointer"
    ARRAY = "array"
    STRUCT = "struct"
    UNION = "union"
    TYPEDEF = "typedef-alias"
    COMPONENT = "component"
    VOID = "void"
    FUNCTION_POINTER = "function-pointer"
    # Reserved out-of-library sentinel. Not part of the surface kind set; it
    # exists so the unknown entry is representable like any other entry.
    UNKNOWN = "unknown"


# Kinds whose canonical string is just the name and whose layout, if sized,
# is a single member at offset 0.
LEAF_KINDS = frozenset(
    {TypeKind.SCALAR, TypeKind.TYPEDEF, TypeKind.FUNCTION_POINTER, TypeKind.VOID}
)

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TAG_RE = re.compile(r"^[A-Za-z_$][A-Za-z0-9_:$.]*$")
_ARRAY_SUFFIX_RE = re.compile(r"^(.*)\[([0-9]+)\]$", re.DOTALL)


@dataclass(frozen=True)
class Register:
    name: str


@dataclass(frozen=True)
class Stack:
    """Byte offset below the stack pointer."""

    offset: int


@dataclass(frozen=True)
class DataLayout:
    """Storage location, byte size and member offsets of a variable.

    ``location`` is None for layouts derived from a type alone (types carry
    no storage location; that is a per-variable property).
    """

    location: Register | Stack | None
    size: int | None
    offsets: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.size is not None:
            if not self.offsets:
                raise TypeValidationError("sized layout requires member offsets")
            if self.offsets[0] != 0:
                raise TypeValidationError("member offsets must start at 0")


@dataclass(frozen=True)
class TypeEntry:
    """One entry of the type library.

    ``fields`` holds (field name, child canonical) pairs for struct/union
    members; pointer and array entries keep their single child there under
    an empty field name. ``member_offsets`` is the byte offset of each
    immediate member; scalars have a single member at offset 0.
    """

    name: str
    kind: TypeKind
    size: int | None = None
    member_offsets: tuple[int, ...] = ()
    fields: tuple[tuple[str, str], ...] = ()
    id: int = -1

    @property
    def canonical(self) -> str:
        return canonical_serialize(self)

    def validate(self) -> None:
        _validate_entry(self)


def _validate_entry(entry: TypeEntry) -> None:
    kind = entry.kind
    if (kind == TypeKind.COMPONENT) != (entry.name == COMPONENT_NAME):
        raise TypeValidationError("component kind is reserved for <Component>")
    if kind in (TypeKind.COMPONENT, TypeKind.UNKNOWN, TypeKind.VOID):
        if entry.size is not None or entry.member_offsets or entry.fields:
            raise TypeValidationError(f"{kind.value} entries carry no layout")
        return
    if kind in LEAF_KINDS:
        if entry.fields:
            raise TypeValidationError("leaf types have no fields")
        if _name_collides_with_grammar(entry.name):
            raise TypeValidationError(f"ambiguous leaf type name: {entry.name!r}")
        expected = (0,) if entry.size is not None else ()
        if entry.member_offsets != expected:
            raise TypeValidationError("leaf member offsets must be [0] when sized")
        if entry.size is not None and entry.size <= 0:
            raise TypeValidationError("sized leaf requires positive size")
        return
    if kind == TypeKind.POINTER:
        if len(entry.fields) != 1 or entry.size != POINTER_SIZE:
            raise TypeValidationError("pointer requires one child and word size")
        if entry.member_offsets != (0,):
            raise TypeValidationError("pointer layout is a single word at offset 0")
        return
    if kind == TypeKind.ARRAY:
        if len(entry.fields) != 1:
            raise TypeValidationError("array requires exactly one element type")
        n = len(entry.member_offsets)
        if n == 0 or entry.size is None:
            raise TypeValidationError("array requires a sized element and length >= 1")
        if entry.size % n != 0:
            raise TypeValidationError("array size must be length * element size")
        elem = entry.size // n
        if entry.member_offsets != tuple(i * elem for i in range(n)):
            raise TypeValidationError("array offsets must be uniform element strides")
        return
    if kind in (TypeKind.STRUCT, TypeKind.UNION):
        if not entry.fields:
            raise TypeValidationError(f"{kind.value} requires at least one field")
        if not _TAG_RE.match(entry.name):
            raise TypeValidationError(f"bad {kind.value} tag: {entry.name!r}")
        for fname, _ in entry.fields:
            if not _IDENT_RE.match(fname):
                raise TypeValidationError(f"bad field name: {fname!r}")
        if kind == TypeKind.UNION:
            if entry.member_offsets != (0,):
                raise TypeValidationError("union members all live at offset 0")
        else:
            offs = entry.member_offsets
            if len(offs) != len(entry.fields):
                raise TypeValidationError("struct needs one offset per field")
            if offs[0] != 0 or any(a >= b for a, b in zip(offs, offs[1:])):
                raise TypeValidationError(
                    "struct offsets must be strictly increasing from 0"
                )
            if entry.size is not None and entry.size < offs[-1]:
                raise TypeValidationError("struct size smaller than last offset")
        return
    raise TypeValidationError(f"unhandled kind: {kind}")


def _name_collides_with_grammar(name: str) -> bool:
    if not name or name in (COMPONENT_NAME, UNKNOWN_NAME):
        return True
    if name.startswith("struct ") or name.startswith("union "):
        return True
    if name.endswith(" *"):
        return True
    return any(c in name for c in "{};@[]")


# ---------------------------------------------------------------------------
# Builders


def make_component() -> TypeEntry:
    return TypeEntry(name=COMPONENT_NAME, kind=TypeKind.COMPONENT)


def make_unknown() -> TypeEntry:
    return TypeEntry(name=UNKNOWN_NAME, kind=TypeKind.UNKNOWN)


def make_void() -> TypeEntry:
    return TypeEntry(name="void", kind=TypeKind.VOID)


def make_scalar(name: str, size: int | None, kind: TypeKind = TypeKind.SCALAR) -> TypeEntry:
    entry = TypeEntry(
        name=name,
        kind=kind,
        size=size,
        member_offsets=(0,) if size is not None else (),
    )
    entry.validate()
    return entry


def make_pointer(child: TypeEntry) -> TypeEntry:
    entry = TypeEntry(
        name=child.canonical + " *",
        kind=TypeKind.POINTER,
        size=POINTER_SIZE,
        member_offsets=(0,),
        fields=(("", child.canonical),),
    )
    entry.validate()
    return entry


def make_array(elem: TypeEntry, length: int) -> TypeEntry:
    if elem.size is None:
        raise TypeValidationError("array element must be sized")
    if length < 1:
        raise TypeValidationError("array length must be >= 1")
    entry = TypeEntry(
        name=f"{elem.canonical}[{length}]",
        kind=TypeKind.ARRAY,
        size=elem.size * length,
        member_offsets=tuple(i * elem.size for i in range(length)),
        fields=(("", elem.canonical),),
    )
    entry.validate()
    return entry


def anonymous_tag(fields: Iterable[tuple[str, str]]) -> str:
    """Deterministic tag for anonymous aggregates, derived from the field list."""
    digest = hashlib.sha256(json.dumps(list(fields)).encode("utf-8")).hexdigest()
    return f"anon_{digest[:8]}"


def make_struct(
    tag: str | None,
    members: Iterable[tuple[str, TypeEntry, int]],
    size: int | None = None,
) -> TypeEntry:
    """Build a struct from (field name, child, byte offset) triples.

    When ``size`` is omitted it is derived as last offset + last member size
    (no trailing padding); pass it explicitly for padded layouts.
    """
    members = list(members)
    fields = tuple((fname, child.canonical) for fname, child, _ in members)
    offsets = tuple(off for _, _, off in members)
    if size is None and members:
        last_child = members[-1][1]
        if last_child.size is not None:
            size = offsets[-1] + last_child.size
    entry = TypeEntry(
        name=tag if tag is not None else anonymous_tag(fields),
        kind=TypeKind.STRUCT,
        size=size,
        member_offsets=offsets,
        fields=fields,
    )
    entry.validate()
    return entry


def make_union(tag: str | None, members: Iterable[tuple[str, TypeEntry]]) -> TypeEntry:
    members = list(members)
    fields = tuple((fname, child.canonical) for fname, child in members)
    sizes = [child.size for _, child in members]
    size = max((s for s in sizes if s is not None), default=None)
    entry = TypeEntry(
        name=tag if tag is not None else anonymous_tag(fields),
        kind=TypeKind.UNION,
        size=size,
        member_offsets=(0,),
        fields=fields,
    )
    entry.validate()
    return entry


# ---------------------------------------------------------------------------
# Canonical serialization and parsing


def canonical_serialize(entry: TypeEntry) -> str:
    """Deterministic canonical string; equal strings imply equal types."""
    kind = entry.kind
    if kind == TypeKind.COMPONENT:
        return COMPONENT_NAME
    if kind == TypeKind.UNKNOWN:
        return UNKNOWN_NAME
    if kind in LEAF_KINDS:
        return entry.name
    if kind == TypeKind.POINTER:
        return entry.fields[0][1] + " *"
    if kind == TypeKind.ARRAY:
        return f"{entry.fields[0][1]}[{len(entry.member_offsets)}]"
    if kind == TypeKind.STRUCT:
        body = "; ".join(
            f"{child} {fname} @{off}"
            for (fname, child), off in zip(entry.fields, entry.member_offsets)
        )
        return f"struct {entry.name} {{ {body}; }}"
    if kind == TypeKind.UNION:
        body = "; ".join(f"{child} {fname} @0" for fname, child in entry.fields)
        return f"union {entry.name} {{ {body}; }}"
    raise TypeValidationError(f"cannot serialize kind {kind}")


#: Default sizes for leaf type spellings seen in decompiler output. Distinct
#: spellings stay distinct entries; this table only supplies byte sizes.
BUILTIN_SCALARS: dict[str, tuple[TypeKind, int | None]] = {
    "bool": (TypeKind.SCALAR, 1),
    "_Bool": (TypeKind.SCALAR, 1),
    "char": (TypeKind.SCALAR, 1),
    "signed char": (TypeKind.SCALAR, 1),
    "unsigned char": (TypeKind.SCALAR, 1),
    "const char": (TypeKind.SCALAR, 1),
    "short": (TypeKind.SCALAR, 2),
    "unsigned short": (TypeKind.SCALAR, 2),
    "__int16": (TypeKind.SCALAR, 2),
    "unsigned __int16": (TypeKind.SCALAR, 2),
    "int": (TypeKind.SCALAR, 4),
    "const int": (TypeKind.SCALAR, 4),
    "unsigned int": (TypeKind.SCALAR, 4),
    "__int32": (TypeKind.SCALAR, 4),
    "unsigned __int32": (TypeKind.SCALAR, 4),
    "long": (TypeKind.SCALAR, 8),
    "unsigned long": (TypeKind.SCALAR, 8),
    "long long": (TypeKind.SCALAR, 8),
    "unsigned long long": (TypeKind.SCALAR, 8),
    "__int64": (TypeKind.SCALAR, 8),
    "unsigned __int64": (TypeKind.SCALAR, 8),
    "__int128": (TypeKind.SCALAR, 16),
    "float": (TypeKind.SCALAR, 4),
    "double": (TypeKind.SCALAR, 8),
    "long double": (TypeKind.SCALAR, 16),
    "int8_t": (TypeKind.TYPEDEF, 1),
    "uint8_t": (TypeKind.TYPEDEF, 1),
    "int16_t": (TypeKind.TYPEDEF, 2),
    "uint16_t": (TypeKind.TYPEDEF, 2),
    "int32_t": (TypeKind.TYPEDEF, 4),
    "uint32_t": (TypeKind.TYPEDEF, 4),
    "u_int32_t": (TypeKind.TYPEDEF, 4),
    "int64_t": (TypeKind.TYPEDEF, 8),
    "uint64_t": (TypeKind.TYPEDEF, 8),
    "size_t": (TypeKind.TYPEDEF, 8),
    "ssize_t": (TypeKind.TYPEDEF, 8),
    "intptr_t": (TypeKind.TYPEDEF, 8),
    "uintptr_t": (TypeKind.TYPEDEF, 8),
    "ptrdiff_t": (TypeKind.TYPEDEF, 8),
    "time_t": (TypeKind.TYPEDEF, 8),
    "wchar_t": (TypeKind.TYPEDEF, 4),
}

ScalarResolver = Callable[[str], tuple[TypeKind, int | None]]


def builtin_resolver(name: str) -> tuple[TypeKind, int | None]:
    """Resolve a leaf spelling to (kind, size); unknown spellings are unsized scalars."""
    return BUILTIN_SCALARS.get(name, (TypeKind.SCALAR, None))


_MAX_NESTING = 64


def parse_canonical(
    text: str, resolve: ScalarResolver = builtin_resolver, _depth: int = 0
) -> TypeEntry:
    """Parse a canonical string back into an unregistered entry.

    Inverse of :func:`canonical_serialize` up to leaf sizes, which the string
    does not carry and ``resolve`` supplies.
    """
    if _depth > _MAX_NESTING:
        raise CanonicalParseError(f"type nesting deeper than {_MAX_NESTING}")
    text = text.strip()
    if not text:
        raise CanonicalParseError("empty canonical string")
    if text == COMPONENT_NAME:
        return make_component()
    if text == UNKNOWN_NAME:
        return make_unknown()
    if text == "void":
        return make_void()
    try:
        # Suffix forms first: pointers to and arrays of aggregates start with
        # the aggregate keyword but end with the pointer/array suffix.
        if text.endswith(" *"):
            return make_pointer(parse_canonical(text[:-2], resolve, _depth + 1))
        m = _ARRAY_SUFFIX_RE.match(text)
        if m:
            elem = parse_canonical(m.group(1), resolve, _depth + 1)
            if elem.size is None:
                raise CanonicalParseError(f"array of unsized element: {text!r}")
            return make_array(elem, int(m.group(2)))
        if text.startswith("struct ") or text.startswith("union "):
            return _parse_aggregate(text, resolve, _depth)
        kind, size = resolve(text)
        return make_scalar(text, size, kind)
    except TypeValidationError as exc:
        raise CanonicalParseError(str(exc)) from exc


def _parse_aggregate(text: str, resolve: ScalarResolver, _depth: int = 0) -> TypeEntry:
    keyword, rest = text.split(" ", 1)
    brace = rest.find(" { ")
    if brace < 0 or not rest.endswith("; }"):
        raise CanonicalParseError(f"malformed {keyword} canonical: {text!r}")
    tag = rest[:brace]
    body = rest[brace + 3 : -3]
    members: list[tuple[str, TypeEntry, int]] = []
    for part in _split_fields(body):
        left, _, off_text = part.rpartition(" @")
        if not left or not off_text.isdigit():
            raise CanonicalParseError(f"malformed field: {part!r}")
        child_text, _, fname = left.rpartition(" ")
        if not child_text:
            raise CanonicalParseError(f"malformed field: {part!r}")
        members.append(
            (fname, parse_canonical(child_text, resolve, _depth + 1), int(off_text))
        )
    try:
        if keyword == "union":
            if any(off != 0 for _, _, off in members):
                raise CanonicalParseError("union member offsets must be 0")
            return make_union(tag, [(f, c) for f, c, _ in members])
        return make_struct(tag, members)
    except TypeValidationError as exc:
        raise CanonicalParseError(str(exc)) from exc


def _split_fields(body: str) -> Iterator[str]:
    depth = 0
    start = 0
    i = 0
    while i < len(body):
        c = body[i]
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
        elif depth == 0 and body.startswith("; ", i):
            yield body[start:i]
            i += 2
            start = i
            continue
        i += 1
    if start < len(body):
        yield body[start:]


# ---------------------------------------------------------------------------
# Layout derivation


def layout_of(entry: TypeEntry) -> DataLayout:
    """Size and member offsets of a type, with no storage location."""
    if entry.kind in (TypeKind.COMPONENT, TypeKind.UNKNOWN, TypeKind.VOID):
        raise NoLayoutError(f"{entry.canonical} has no layout")
    if entry.size is None:
        raise NoLayoutError(f"{entry.canonical} has unknown size")
    return DataLayout(location=None, size=entry.size, offsets=entry.member_offsets)


def layout_signature(
    entry: TypeEntry, resolve: ScalarResolver = builtin_resolver
) -> str:
    """Name-free structural rendering: Primitive_k / Pointer<..> / Struct<..>.

    Invariant under renaming of the type and all its fields.
    """
    if entry.kind in (TypeKind.COMPONENT, TypeKind.UNKNOWN, TypeKind.VOID):
        raise NoLayoutError(f"{entry.canonical} has no structural signature")
    return _signature(entry, resolve, top=True)


def _signature(entry: TypeEntry, resolve: ScalarResolver, top: bool = False) -> str:
    kind = entry.kind
    if kind == TypeKind.VOID:
        return "Void"
    if kind in (TypeKind.COMPONENT, TypeKind.UNKNOWN):
        raise NoLayoutError(f"{entry.canonical} has no structural signature")
    if kind in LEAF_KINDS:
        if entry.size is None:
            if top:
                raise NoLayoutError(f"{entry.canonical} has unknown size")
            return "Opaque"
        return f"Primitive_{entry.size}"
    if kind == TypeKind.POINTER:
        child = parse_canonical(entry.fields[0][1], resolve)
        return f"Pointer<{_signature(child, resolve)}>"
    if kind == TypeKind.ARRAY:
        child = parse_canonical(entry.fields[0][1], resolve)
        return f"Array<{_signature(child, resolve)}, {len(entry.member_offsets)}>"
    children = (parse_canonical(c, resolve) for _, c in entry.fields)
    inner = ", ".join(_signature(c, resolve) for c in children)
    tag = "Struct" if kind == TypeKind.STRUCT else "Union"
    return f"{tag}<{inner}>"


def is_structural(entry: TypeEntry, resolve: ScalarResolver = builtin_resolver) -> bool:
    """True for struct/union types and pointers/arrays reaching one."""
    if entry.kind in (TypeKind.STRUCT, TypeKind.UNION):
        return True
    if entry.kind in (TypeKind.POINTER, TypeKind.ARRAY):
        try:
            child = parse_canonical(entry.fields[0][1], resolve)
        except CanonicalParseError:
            return False
        return is_structural(child, resolve)
    return False


# ---------------------------------------------------------------------------
# The library


class TypeLibrary:
    """Bijective id <-> canonical registry with two reserved slots.

    Id 0 is the component label and id 1 the out-of-library sentinel.
    Construction is single-writer; call :meth:`freeze` before sharing across
    threads, after which the library is immutable.
    """

    def __init__(self) -> None:
        self.entries: list[TypeEntry] = []
        self._by_canonical: dict[str, int] = {}
        self._frozen = False
        self.register(make_component())
        self.register(make_unknown())

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, type_id: int) -> TypeEntry:
        return self.entries[type_id]

    def __iter__(self) -> Iterator[TypeEntry]:
        return iter(self.entries)

    def freeze(self) -> None:
        self._frozen = True

    def register(self, entry: TypeEntry) -> int:
        """Register an entry, deduplicating by canonical string; returns its id."""
        entry.validate()
        canonical = entry.canonical
        existing = self._by_canonical.get(canonical)
        if existing is not None:
            return existing
        if self._frozen:
            raise TypeLibError("type library is frozen")
        type_id = len(self.entries)
        self.entries.append(replace(entry, id=type_id))
        self._by_canonical[canonical] = type_id
        return type_id

    def lookup(self, canonical: str) -> int | None:
        return self._by_canonical.get(canonical)

    def lookup_or_unknown(self, canonical: str | None) -> int:
        if canonical is None:
            return UNKNOWN_ID
        return self._by_canonical.get(canonical, UNKNOWN_ID)

    def register_canonical(
        self, canonical: str, resolve: ScalarResolver = builtin_resolver
    ) -> int:
        """Parse and register a canonical string along with its nested children."""
        entry = parse_canonical(canonical, resolve)
        for _, child in entry.fields:
            self.register_canonical(child, resolve)
        return self.register(entry)

    def content_hash(self) -> str:
        payload = "\n".join(e.canonical for e in self.entries)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    # -- persistence: one JSON record per entry --------------------------------

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                record = {
                    "id": entry.id,
                    "name": entry.name,
                    "kind": entry.kind.value,
                    "size": entry.size,
                    "member_offsets": list(entry.member_offsets),
                    "fields": [list(f) for f in entry.fields],
                    "canonical": entry.canonical,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TypeLibrary":
        lib = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                entry = TypeEntry(
                    name=rec["name"],
                    kind=TypeKind(rec["kind"]),
                    size=rec["size"],
                    member_offsets=tuple(rec["member_offsets"]),
                    fields=tuple((f[0], f[1]) for f in rec["fields"]),
                )
                assigned = lib.register(entry)
                if assigned != rec["id"]:
                    raise TypeLibError(
                        f"non-contiguous ids in library file: {rec['id']} != {assigned}"
                    )
                if entry.canonical != rec["canonical"]:
                    raise TypeLibError(
                        f"stored canonical mismatch for id {rec['id']}"
                    )
        return lib


def build_library(canonicals: Iterable[str], resolve: ScalarResolver = builtin_resolver) -> TypeLibrary:
    """Build a library from gold canonical strings, skipping unparseable ones.

    Unparseable strings stay out of the library; variables carrying them fall
    back to the unknown sentinel at encoding time.
    """
    lib = TypeLibrary()
    for canonical in canonicals:
        try:
            lib.register_canonical(canonical, resolve)
        except CanonicalParseError:
            continue
    return lib
