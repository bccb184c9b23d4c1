"""Instrumentation pass inserting the runtime calls.

Placement rules:

* ``pct_add_tag`` right after an allocation whose type is sensitive.  Stack
  slots are tagged only when their address escapes (stored, passed, or
  returned); a slot used purely as a local cell is never a pointee.
* ``pct_sign`` right after every store to a sensitive cell and after a
  constructor writes a vtable pointer.
* ``pct_auth`` right before every load, indirect call or virtual call
  through a sensitive cell.  Loads re-seal the cell after the last use of
  the loaded value in the same straight-line run; calls re-seal right after
  the call.  With OVWRT the re-seal restores the value saved before
  authentication instead of signing again.
* ``pct_rm_tag`` before ``free`` of a tagged heap object, and once before
  each ``ret`` for all tagged slots of the frame.
* Sensitive global initialisers, address-taken functions and vtables are
  tagged (and signed) in a synthetic ``__ctors`` function run before main.

``void*`` cells take the type they are cast to after a load in the same
function; unresolved ones holding code addresses are treated as sensitive
and reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .analysis import Level, SensitivityMap, classify_sensitive
from .program import Function, Global, Instr, Program, assign_function_ids
from .types import (FuncPtr, MiniType, Named, Struct, UniversalPtr, VPtr, format_type,
                    parse_type, type_key)

CTOR = "__ctors"
CODE_TAG_SIZE = 16
RET_MODES = ("none", "pactight", "sp", "zero")


class AlreadyInstrumented(ValueError):
    pass


@dataclass
class InstrumentOptions:
    ovwrt: bool = False
    ret_mode: str = "none"


@dataclass
class InstrumentReport:
    unresolved_universal: List[Tuple[str, str]] = field(default_factory=list)
    resolved_universal: Dict[Tuple[str, str], str] = field(default_factory=dict)


def _t(instr_arg) -> MiniType:
    return parse_type(instr_arg)


def _is_reg(x) -> bool:
    return isinstance(x, str) and x.startswith("%")


class _FunctionPass:
    def __init__(self, prog: Program, smap: SensitivityMap, fn: Function,
                 opts: InstrumentOptions, report: InstrumentReport):
        self.prog = prog
        self.smap = smap
        self.fn = fn
        self.opts = opts
        self.report = report
        self.body = fn.body
        self.universal = self._resolve_universal()

    # -- analysis ----------------------------------------------------------
    def _resolve_universal(self) -> Dict[str, MiniType]:
        """Map void* cell registers to the type their loads are cast to."""
        out: Dict[str, MiniType] = {}
        loaded: Dict[str, str] = {}
        for ins in self.body:
            if ins.op == "load" and isinstance(_t(ins.args[1]), UniversalPtr):
                loaded[ins.dst] = ins.args[0]
            elif ins.op == "bitcast" and ins.args[0] in loaded:
                cell = loaded[ins.args[0]]
                out.setdefault(cell, _t(ins.args[1]))
        return out

    def cell_type(self, cell, declared) -> Optional[MiniType]:
        """Effective type of a cell for sensitivity purposes, or None."""
        t = _t(declared)
        r = self.smap.table.resolve(t)
        if not isinstance(r, UniversalPtr):
            return t
        key = (self.fn.name, str(cell))
        if cell in self.universal:
            self.report.resolved_universal[key] = type_key(self.universal[cell])
            return self.universal[cell]
        return None

    def universal_used_sensitively(self, cell) -> bool:
        loads_sensitive = {ins.dst for ins in self.body
                           if ins.op == "load" and self._sensitive_cell(ins.args[0], ins.args[1], probe=True)}
        for ins in self.body:
            if ins.op == "store" and ins.args[0] == cell:
                v = ins.args[1]
                if isinstance(v, str) and v.startswith("@") and v[1:] in self.prog.functions:
                    return True
                if v in loads_sensitive:
                    return True
        return False

    def _sensitive_cell(self, cell, declared, probe=False) -> bool:
        t = _t(declared)
        r = self.smap.table.resolve(t)
        if isinstance(r, UniversalPtr):
            if probe:
                return False
            eff = self.cell_type(cell, declared)
            if eff is None:
                if self.universal_used_sensitively(cell):
                    key = (self.fn.name, str(cell))
                    if key not in self.report.unresolved_universal:
                        self.report.unresolved_universal.append(key)
                    return True
                return False
            return self.smap.is_sensitive_cell(eff) or self.smap.is_sensitive(eff)
        return self.smap.is_sensitive_cell(t)

    def sign_type(self, cell, declared) -> list:
        """Type operand written into pct_sign / pct_auth."""
        t = _t(declared)
        if isinstance(self.smap.table.resolve(t), UniversalPtr):
            return "voidptr"
        return format_type(t)

    def escaping_allocas(self) -> Set[str]:
        derived: Dict[str, str] = {}
        for ins in self.body:
            if ins.op == "alloca":
                derived[ins.dst] = ins.dst
            elif ins.op in ("field", "gep", "bitcast", "mov") and ins.args and ins.args[0] in derived:
                derived[ins.dst] = derived[ins.args[0]]
        escaped = set()
        for ins in self.body:
            vals = []
            if ins.op == "store":
                vals = [ins.args[1]]
            elif ins.op in ("call",):
                vals = ins.args[1:]
            elif ins.op == "icall":
                vals = ins.args[2:]
            elif ins.op == "vcall":
                vals = ins.args[3:]
            elif ins.op == "ret":
                vals = ins.args
            for v in vals:
                if v in derived:
                    escaped.add(derived[v])
        return escaped

    def reseal_point(self, i: int) -> Tuple[int, Optional[object]]:
        """Index after which to re-seal the cell loaded at ``i``, and the gep index."""
        ins = self.body[i]
        reg, cell = ins.dst, ins.args[0]
        last = i
        gep_n = None
        assigned = set()
        derived = {reg}
        for j in range(i + 1, len(self.body)):
            nxt = self.body[j]
            if nxt.op in ("label", "br", "brif", "ret") or nxt.op in ("call", "icall", "vcall", "free"):
                break
            if nxt.op in ("store", "load") and nxt.args[0] == cell:
                break
            used = set(nxt.uses())
            if used & derived:
                last = j
                if nxt.op in ("field", "gep", "bitcast", "mov") and nxt.args[0] in derived:
                    derived.add(nxt.dst)
                if nxt.op == "gep" and nxt.args[0] == reg and gep_n is None:
                    n = nxt.args[2]
                    if isinstance(n, int) or (_is_reg(n) and n not in assigned):
                        gep_n = n
            if nxt.dst:
                assigned.add(nxt.dst)
        return last, gep_n

    # -- rewriting ---------------------------------------------------------
    def run(self) -> List[Instr]:
        smap = self.smap
        escaped = self.escaping_allocas()
        frame_tags: List[str] = []
        out: List[Instr] = []
        after: Dict[int, List[Instr]] = {}

        def reseal(cell, ty) -> Instr:
            if self.opts.ovwrt:
                return Instr("pct_restore", [cell])
            return Instr("pct_sign", [cell, ty])

        for i, ins in enumerate(self.body):
            op = ins.op
            pre: List[Instr] = []
            post: List[Instr] = []
            if op == "alloca":
                t = _t(ins.args[0])
                if smap.is_sensitive(t) and ins.dst in escaped:
                    post.append(Instr("pct_add_tag", [ins.dst, ins.args[0], ins.args[1] if len(ins.args) > 1 else 1]))
                    frame_tags.append(ins.dst)
            elif op == "malloc":
                if smap.is_sensitive(_t(ins.args[0])):
                    post.append(Instr("pct_add_tag", [ins.dst, ins.args[0], ins.args[1] if len(ins.args) > 1 else 1]))
            elif op == "free":
                if smap.is_sensitive(_t(ins.args[1])):
                    pre.append(Instr("pct_rm_tag", [ins.args[0]]))
            elif op == "store":
                cell = ins.args[0]
                if self._sensitive_cell(cell, ins.args[2]):
                    post.append(Instr("pct_sign", [cell, self.sign_type(cell, ins.args[2])]))
            elif op == "load":
                cell = ins.args[0]
                if self._sensitive_cell(cell, ins.args[1]):
                    ty = self.sign_type(cell, ins.args[1])
                    last, n = self.reseal_point(i)
                    if self.opts.ovwrt:
                        pre.append(Instr("pct_save", [cell]))
                    pre.append(Instr("pct_auth", [cell, ty] + ([n] if n not in (None, 0) else [])))
                    after.setdefault(last, []).append(reseal(cell, ty))
            elif op == "icall":
                cell = ins.args[0]
                if self._sensitive_cell(cell, ins.args[1]):
                    ty = self.sign_type(cell, ins.args[1])
                    if self.opts.ovwrt:
                        pre.append(Instr("pct_save", [cell]))
                    pre.append(Instr("pct_auth", [cell, ty]))
                    post.append(reseal(cell, ty))
            elif op == "setvptr":
                if smap.level >= Level.VTABLE:
                    post.append(Instr("pct_sign", [ins.args[0], ["vptr", ins.args[1]]]))
            elif op == "vcall":
                if smap.level >= Level.VTABLE:
                    obj, ty = ins.args[0], ["vptr", ins.args[1]]
                    if self.opts.ovwrt:
                        pre.append(Instr("pct_save", [obj]))
                    pre.append(Instr("pct_auth", [obj, ty]))
                    post.append(reseal(obj, ty))
            elif op == "ret":
                if frame_tags:
                    pre.append(Instr("pct_rm_tag", list(frame_tags)))
            out.extend(pre)
            out.append(ins)
            out.extend(post)
            out.extend(after.pop(i, []))
        return out


def _address_taken_functions(prog: Program) -> List[str]:
    names = []
    for f in prog.functions.values():
        for ins in f.body:
            if ins.op == "call":
                vals = ins.args[1:]
            else:
                vals = ins.args
            for v in vals:
                if isinstance(v, str) and v.startswith("@") and v[1:] in prog.functions and v[1:] not in names:
                    names.append(v[1:])
    for g in prog.globals:
        if isinstance(g.init, str) and g.init.startswith("@") and g.init[1:] in prog.functions:
            if g.init[1:] not in names:
                names.append(g.init[1:])
    return names


def instrument(prog: Program, smap: Optional[SensitivityMap] = None, level="cpi",
               opts: Optional[InstrumentOptions] = None,
               report: Optional[InstrumentReport] = None) -> Program:
    if prog.instrumented is not None or CTOR in prog.functions:
        raise AlreadyInstrumented(f"{prog.name or 'program'} is already instrumented")
    level = Level.parse(smap.level if smap is not None else level)
    if smap is None:
        smap = classify_sensitive(prog.types, level)
    opts = opts or InstrumentOptions()
    if opts.ret_mode not in RET_MODES:
        raise ValueError(f"unknown ret mode {opts.ret_mode!r}")
    report = report if report is not None else InstrumentReport()
    out = prog.copy()
    for f in out.functions.values():
        f.body = _FunctionPass(out, smap, f, opts, report).run()

    ctor: List[Instr] = []
    any_sensitive_cell = any(
        ins.op in ("pct_sign", "pct_auth") for f in out.functions.values() for ins in f.body)
    if any_sensitive_cell:
        for fname in _address_taken_functions(prog):
            ctor.append(Instr("pct_add_tag", ["@" + fname, "fn", 1]))
    if level >= Level.VTABLE:
        for cname in prog.types.classes():
            ctor.append(Instr("pct_add_tag", ["@vt." + cname, "vtable", 1]))
    new_globals = []
    for g in out.globals:
        if not smap.is_sensitive(g.type):
            new_globals.append(g)
            continue
        ctor.append(Instr("pct_add_tag", ["@" + g.name, format_type(g.type), 1]))
        if g.init is not None and smap.is_sensitive_cell(g.type):
            ctor.append(Instr("store", ["@" + g.name, g.init, format_type(g.type)]))
            ctor.append(Instr("pct_sign", ["@" + g.name, format_type(g.type)]))
            new_globals.append(Global(g.name, g.type, None))
        else:
            new_globals.append(g)
    out.globals = new_globals
    if ctor:
        ctor.append(Instr("ret", []))
        functions = {CTOR: Function(CTOR, [], ctor)}
        functions.update(out.functions)
        out.functions = functions
        assign_function_ids(out)
    out.instrumented = {"level": level.name.lower(), "ovwrt": opts.ovwrt, "ret": opts.ret_mode}
    return out


def insertion_sites(prog: Program) -> Set[tuple]:
    """Identity of every inserted call, comparable across levels."""
    sites = set()
    for f in prog.functions.values():
        pos = 0
        for ins in f.body:
            if ins.op not in ("pct_add_tag", "pct_sign", "pct_auth", "pct_rm_tag", "pct_save", "pct_restore"):
                pos += 1
                continue
            where = None if f.name == CTOR else pos
            if ins.op == "pct_rm_tag":
                for a in ins.args:
                    sites.add((f.name, where, ins.op, str(a)))
            else:
                sites.add((f.name, where, ins.op, str(ins.args[0])))
    return sites
