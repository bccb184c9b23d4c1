"""Mini-IR types.

Recursive types go through named references, so a linked list node can
point at itself.  Containment by value must be acyclic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

from .sexpr import SExpr, write


class CycleError(ValueError):
    pass


class TypeErrorIR(ValueError):
    pass


@dataclass(frozen=True)
class Int:
    kind = "int"


@dataclass(frozen=True)
class FuncPtr:
    kind = "funcptr"


@dataclass(frozen=True)
class UniversalPtr:
    kind = "voidptr"


@dataclass(frozen=True)
class DataPtr:
    inner: "MiniType"
    kind = "ptr"


@dataclass(frozen=True)
class Struct:
    fields: Tuple[Tuple[str, "MiniType"], ...]
    has_virtual: bool = False
    methods: Tuple[str, ...] = ()
    base: Optional[str] = None
    kind = "struct"


@dataclass(frozen=True)
class Array:
    elem: "MiniType"
    n: int
    kind = "array"


@dataclass(frozen=True)
class Union:
    members: Tuple["MiniType", ...]
    kind = "union"


@dataclass(frozen=True)
class Named:
    name: str
    kind = "named"


@dataclass(frozen=True)
class VPtr:
    """Hidden vtable pointer of a class object."""
    cls: str
    kind = "vptr"


MiniType = object
POINTER_KINDS = ("funcptr", "voidptr", "ptr", "vptr")
WORD = 8


def parse_type(expr: SExpr) -> MiniType:
    if isinstance(expr, str):
        if expr == "int":
            return Int()
        if expr == "funcptr":
            return FuncPtr()
        if expr == "voidptr":
            return UniversalPtr()
        return Named(expr)
    if not isinstance(expr, list) or not expr:
        raise TypeErrorIR(f"bad type {expr!r}")
    head = expr[0]
    if head == "ptr" and len(expr) == 2:
        return DataPtr(parse_type(expr[1]))
    if head == "array" and len(expr) == 3 and isinstance(expr[2], int) and expr[2] >= 1:
        return Array(parse_type(expr[1]), expr[2])
    if head == "union" and len(expr) >= 2:
        return Union(tuple(parse_type(m) for m in expr[1:]))
    if head == "vptr" and len(expr) == 2:
        return VPtr(expr[1])
    if head in ("struct", "class"):
        fields, methods, base = [], (), None
        for item in expr[1:]:
            if not isinstance(item, list) or len(item) < 1:
                raise TypeErrorIR(f"bad struct member {item!r}")
            if item[0] == "methods":
                methods = tuple(str(m).lstrip("@") for m in item[1:])
            elif item[0] == "extends" and len(item) == 2:
                base = item[1]
            elif len(item) == 2:
                fields.append((item[0], parse_type(item[1])))
            else:
                raise TypeErrorIR(f"bad struct member {item!r}")
        return Struct(tuple(fields), head == "class", methods, base)
    raise TypeErrorIR(f"bad type {write(expr)}")


def format_type(t: MiniType) -> SExpr:
    if isinstance(t, (Int, FuncPtr, UniversalPtr)):
        return t.kind
    if isinstance(t, Named):
        return t.name
    if isinstance(t, DataPtr):
        return ["ptr", format_type(t.inner)]
    if isinstance(t, Array):
        return ["array", format_type(t.elem), t.n]
    if isinstance(t, Union):
        return ["union"] + [format_type(m) for m in t.members]
    if isinstance(t, VPtr):
        return ["vptr", t.cls]
    if isinstance(t, Struct):
        out = ["class" if t.has_virtual else "struct"]
        if t.base:
            out.append(["extends", t.base])
        if t.has_virtual:
            out.append(["methods"] + ["@" + m for m in t.methods])
        out += [[n, format_type(ft)] for n, ft in t.fields]
        return out
    raise TypeErrorIR(f"unknown type {t!r}")


def type_key(t: MiniType) -> str:
    """Stable textual key, used for type ids and as a display name."""
    return write(format_type(t))


class TypeTable:
    def __init__(self, named: Optional[Dict[str, MiniType]] = None):
        self.named: Dict[str, MiniType] = dict(named or {})

    def __contains__(self, name):
        return name in self.named

    def __iter__(self) -> Iterator[str]:
        return iter(self.named)

    def resolve(self, t: MiniType) -> MiniType:
        seen = set()
        while isinstance(t, Named):
            if t.name in seen:
                raise CycleError(f"type alias cycle through {t.name}")
            seen.add(t.name)
            if t.name not in self.named:
                raise TypeErrorIR(f"unknown type {t.name}")
            t = self.named[t.name]
        return t

    def size(self, t: MiniType, _stack: Tuple[str, ...] = ()) -> int:
        if isinstance(t, Named):
            if t.name in _stack:
                raise CycleError(f"type {t.name} contains itself by value")
            return self.size(self.resolve_one(t), _stack + (t.name,))
        if isinstance(t, Struct):
            return (WORD if t.has_virtual else 0) + sum(self.size(ft, _stack) for _, ft in t.fields) or WORD
        if isinstance(t, Array):
            return t.n * self.size(t.elem, _stack)
        if isinstance(t, Union):
            return max(self.size(m, _stack) for m in t.members)
        return WORD

    def resolve_one(self, t: Named) -> MiniType:
        if t.name not in self.named:
            raise TypeErrorIR(f"unknown type {t.name}")
        return self.named[t.name]

    def field_offset(self, t: MiniType, fname: str) -> Tuple[int, MiniType]:
        st = self.resolve(t)
        if not isinstance(st, Struct):
            raise TypeErrorIR(f"{type_key(t)} is not a struct")
        off = WORD if st.has_virtual else 0
        for n, ft in st.fields:
            if n == fname:
                return off, ft
            off += self.size(ft)
        raise TypeErrorIR(f"{type_key(t)} has no field {fname}")

    def is_pointer(self, t: MiniType) -> bool:
        t = self.resolve(t)
        return getattr(t, "kind", None) in POINTER_KINDS or isinstance(t, Union)

    def check_finite(self):
        for name in self.named:
            self.size(Named(name))

    def classes(self) -> Dict[str, Struct]:
        out = {}
        for name in self.named:
            t = self.resolve(Named(name))
            if isinstance(t, Struct) and t.has_virtual:
                out[name] = t
        return out
