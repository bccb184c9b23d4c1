"""Sensitive-type classification.

CFI protects code pointers, VTABLE adds the hidden vtable pointer of classes
with virtual methods, and CPI closes over data pointers: a type is sensitive
when a code pointer is reachable from it through members or pointees.  The
closure is a least fixpoint over the named types, so self-referential
structs settle instead of recursing forever.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Optional

from .types import (Array, DataPtr, FuncPtr, Int, MiniType, Named, Struct, TypeTable,
                    UniversalPtr, Union, VPtr)


class Level(enum.IntEnum):
    CFI = 1
    VTABLE = 2
    CPI = 3

    @classmethod
    def parse(cls, s) -> "Level":
        if isinstance(s, Level):
            return s
        try:
            return cls[str(s).upper()]
        except KeyError:
            raise ValueError(f"unknown level {s!r} (cfi, vtable, cpi)") from None


@dataclass
class SensitivityMap:
    level: Level
    table: TypeTable
    verdicts: Dict[str, bool] = field(default_factory=dict)

    def is_sensitive(self, t: MiniType) -> bool:
        return _sensitive(t, self.level, self.table, self.verdicts)

    def is_sensitive_cell(self, t: MiniType) -> bool:
        """Whether a pointer-sized cell of type ``t`` gets signed."""
        r = self.table.resolve(t)
        if isinstance(r, FuncPtr):
            return True
        if isinstance(r, VPtr):
            return self.level >= Level.VTABLE
        if isinstance(r, (DataPtr, Union)):
            return self.is_sensitive(r)
        return False

    def sensitive_types(self):
        return sorted(n for n, v in self.verdicts.items() if v)


def _sensitive(t: MiniType, level: Level, table: TypeTable, verdicts: Dict[str, bool]) -> bool:
    if isinstance(t, Named):
        return verdicts.get(t.name, False)
    if isinstance(t, (Int, UniversalPtr)):
        return False
    if isinstance(t, FuncPtr):
        return True
    if isinstance(t, VPtr):
        return level >= Level.VTABLE
    if isinstance(t, DataPtr):
        return level >= Level.CPI and _sensitive(t.inner, level, table, verdicts)
    if isinstance(t, Array):
        return _sensitive(t.elem, level, table, verdicts)
    if isinstance(t, Struct):
        if t.has_virtual and level >= Level.VTABLE:
            return True
        return any(_sensitive(ft, level, table, verdicts) for _, ft in t.fields)
    if isinstance(t, Union):
        if any(_sensitive(m, level, table, verdicts) for m in t.members):
            return True
        # a void* member could hold anything; assume the worst
        return level >= Level.CPI and any(
            isinstance(_peel(m, table), UniversalPtr) for m in t.members)
    raise TypeError(f"unknown type {t!r}")


def _peel(t: MiniType, table: TypeTable) -> MiniType:
    return table.resolve(t) if isinstance(t, Named) else t


def classify_sensitive(types: TypeTable, level="cpi") -> SensitivityMap:
    level = Level.parse(level)
    types.check_finite()
    verdicts = {name: False for name in types}
    changed = True
    while changed:
        changed = False
        for name, t in types.named.items():
            if not verdicts[name] and _sensitive(t, level, types, verdicts):
                verdicts[name] = True
                changed = True
    return SensitivityMap(level, types, verdicts)


def pointer_class(t: MiniType, table: TypeTable) -> str:
    """'function' for code pointers, 'data' for everything else."""
    r = table.resolve(t)
    if isinstance(r, FuncPtr):
        return "function"
    if isinstance(r, Union) and any(isinstance(_peel(m, table), FuncPtr) for m in r.members):
        return "function"
    return "data"
