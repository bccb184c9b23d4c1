"""Interpreter for (instrumented) mini-IR programs, with an attacker.

The machine owns the keys, the metadata store and a simulated 64-bit
memory.  The attacker acts at ``(point NAME)`` markers and may read or
write any writable byte; code and vtables are read-only, key material has
no address at all, and the metadata table is readable only when the store
is exposed.

A run ends at the first abort, trap, or successful hijack.  The verdict
compares what happened with the program's attack script:

* ``ATTACK_SUCCEEDED`` a goal function ran, a return landed somewhere other
  than its call site, or the heap allocator was corrupted;
* ``ATTACK_BLOCKED`` a runtime abort or a poisoned-pointer trap stopped it;
* ``ATTACK_FAILED`` the attack neither succeeded nor was detected;
* ``CLEAN`` a program without an attack ran to completion;
* ``ABORTED`` a program without an attack was stopped (a false positive).
"""
from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

from .ir.analysis import pointer_class
from .ir.instrument import CODE_TAG_SIZE, CTOR
from .ir.program import Function, Program
from .ir.types import DataPtr, Named, VPtr, parse_type, type_key
from .memory import (CODE_BASE, FUNC_STRIDE, GLOBAL_BASE, RODATA_BASE, STACK_TOP, STORE_WINDOW,
                     BumpHeap, Memory, MemoryFault, segment_of)
from .pa import AddressLayout, KeyVault, NonCanonicalInput, PointerAuth, AuthFault
from .ret import CHAIN_BASE, ReturnProtector
from .rng import derive_rng
from .runtime import (AbortReason, AbortRecord, PactightAbort, PointerClass, Runtime,
                      RuntimeConfig)
from .store import MetadataStore

EXIT_ADDR = CODE_BASE
MASK64 = (1 << 64) - 1
FRAME_HEADER = 16


class Verdict(str, enum.Enum):
    CLEAN = "CLEAN"
    ATTACK_SUCCEEDED = "ATTACK_SUCCEEDED"
    ATTACK_BLOCKED = "ATTACK_BLOCKED"
    ATTACK_FAILED = "ATTACK_FAILED"
    ABORTED = "ABORTED"


class Trap(Exception):
    kind = "Trap"

    def __init__(self, detail: str, address: int = 0):
        super().__init__(f"{self.kind}: {detail}")
        self.detail = detail
        self.address = address


class TrapPoisonedDeref(Trap):
    kind = "PoisonedDeref"


class TrapSegfault(Trap):
    kind = "Segfault"


class TrapExec(Trap):
    kind = "ExecFault"


class StepLimit(Trap):
    kind = "StepLimit"


class _Hijacked(Exception):
    pass


@dataclass
class MachineConfig:
    seed: Optional[int] = 0
    va_bits: int = 48
    pac_bits: int = 16
    tag_width: int = 64
    fpac: bool = False
    scheme: str = "pactight"
    ret_mode: Optional[str] = None
    expose_store: bool = False
    abort_on_auth_fail: bool = True
    max_steps: int = 1_000_000


@dataclass
class TraceReport:
    program: str
    config: dict
    status: str = "running"
    verdict: str = ""
    outputs: List[int] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)
    aborts: List[dict] = field(default_factory=list)
    trap: Optional[dict] = None
    attacker: List[dict] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    steps: int = 0
    exit_value: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class Frame:
    __slots__ = ("func", "regs", "pc", "sp_entry", "sp", "slot", "expected_ret", "call_dst")

    def __init__(self, func: Function, sp_entry: int, expected_ret: int):
        self.func = func
        self.regs: Dict[str, int] = {}
        self.pc = 0
        self.sp_entry = sp_entry
        self.sp = sp_entry
        self.slot = sp_entry
        self.expected_ret = expected_ret
        self.call_dst: Optional[str] = None


class Machine:
    def __init__(self, program: Program, config: Optional[MachineConfig] = None):
        self.program = program
        self.config = cfg = config or MachineConfig()
        self.vault = KeyVault(seed=cfg.seed)
        self.pa = PointerAuth(self.vault, AddressLayout(cfg.va_bits, cfg.pac_bits), fpac=cfg.fpac)
        self.store = MetadataStore(tag_width=cfg.tag_width)
        self.memory = Memory()
        self.heap = BumpHeap(self.memory)
        self.rng = derive_rng(cfg.seed, "tags")
        self.runtime = Runtime(
            self.pa, self.store, self.memory,
            RuntimeConfig(tag_width=cfg.tag_width, abort_on_auth_fail=cfg.abort_on_auth_fail,
                          scheme=cfg.scheme),
            rng=self.rng, on_event=self._runtime_event)
        ret_mode = cfg.ret_mode
        if ret_mode is None:
            ret_mode = (program.instrumented or {}).get("ret", "none")
        self.ret = ReturnProtector(self.pa, ret_mode)
        self.trace = TraceReport(program.name, {**asdict(cfg), "ret_mode": ret_mode})
        self.frames: List[Frame] = []
        self.attack = program.attack
        self.goals = set(self.attack.goals if self.attack else ()) | {
            f.name for f in program.functions.values() if f.gadget}
        self.attacker_vars: Dict[str, int] = {}
        self.point_hits: Counter = Counter()
        self._layout()

    # -- layout ------------------------------------------------------------
    def _layout(self):
        prog = self.program
        self.symbols: Dict[str, int] = {}
        self.by_fid: Dict[int, Function] = {}
        for f in prog.functions.values():
            self.symbols[f.name] = CODE_BASE + f.fid * FUNC_STRIDE
            self.by_fid[f.fid] = f
        vt = RODATA_BASE
        self.vtables: Dict[str, int] = {}
        for cname, cls in prog.types.classes().items():
            self.vtables[cname] = vt
            self.symbols["vt." + cname] = vt
            for i, m in enumerate(cls.methods):
                if m not in self.symbols:
                    raise ValueError(f"class {cname} names unknown method {m}")
                self.memory.write(vt + 8 * i, self.symbols[m], privileged=True)
            vt += max(16, (8 * len(cls.methods) + 15) & ~15)
        addr = GLOBAL_BASE
        for g in prog.globals:
            self.symbols[g.name] = addr
            addr += max(16, (prog.types.size(g.type) + 15) & ~15)
        for g in prog.globals:
            if g.init is not None:
                self.memory.write(self.symbols[g.name], self._const(g.init))

    def _const(self, v) -> int:
        if isinstance(v, int):
            return v & MASK64
        if isinstance(v, str) and v.startswith("@"):
            return self.symbols[v[1:]]
        raise ValueError(f"bad constant {v!r}")

    # -- events ------------------------------------------------------------
    def _event(self, kind: str, **data):
        ev = {"kind": kind, "step": self.trace.steps}
        if self.frames:
            ev["func"] = self.frames[-1].func.name
        ev.update(data)
        self.trace.events.append(ev)

    def _runtime_event(self, kind: str, **data):
        self._event(kind, **{k: (f"{v:#x}" if k in ("address", "loc") and isinstance(v, int) else v)
                             for k, v in data.items()})

    # -- helpers -----------------------------------------------------------
    def val(self, frame: Frame, v) -> int:
        if isinstance(v, int):
            return v & MASK64
        if isinstance(v, str):
            if v.startswith("%"):
                try:
                    return frame.regs[v]
                except KeyError:
                    raise Trap(f"undefined register {v} in {frame.func.name}") from None
            if v.startswith("@"):
                return self.symbols[v[1:]]
        raise Trap(f"bad operand {v!r}")

    def _check_addr(self, addr: int):
        if self.pa.is_poisoned(addr):
            raise TrapPoisonedDeref(f"dereference of poisoned pointer {addr:#018x}", addr)

    def load(self, addr: int) -> int:
        self._check_addr(addr)
        try:
            return self.memory.read(addr)
        except MemoryFault as e:
            raise TrapSegfault(str(e), addr) from None

    def store_word(self, addr: int, value: int):
        self._check_addr(addr)
        try:
            self.memory.write(addr, value)
        except MemoryFault as e:
            raise TrapSegfault(str(e), addr) from None

    def tsize(self, t) -> int:
        if t in ("fn",):
            return CODE_TAG_SIZE
        if t == "vtable":
            return 8
        return self.program.types.size(parse_type(t))

    def pclass(self, t) -> PointerClass:
        ty = parse_type(t)
        if isinstance(ty, VPtr) or t == "voidptr":
            return PointerClass.DATA
        if pointer_class(ty, self.program.types) == "function":
            return PointerClass.FUNCTION
        return PointerClass.DATA

    def pointee_size(self, t) -> int:
        ty = self.program.types.resolve(parse_type(t))
        if isinstance(ty, DataPtr):
            return self.program.types.size(ty.inner)
        return 8

    def decode(self, addr: int):
        """Map a code address to (function, pc)."""
        if self.pa.is_poisoned(addr):
            raise TrapPoisonedDeref(f"branch to poisoned pointer {addr:#018x}", addr)
        seg = segment_of(addr)
        if seg is None or seg.name != "code":
            raise TrapExec(f"branch to non-code address {addr:#018x}", addr)
        off = addr - CODE_BASE
        fid, rest = divmod(off, FUNC_STRIDE)
        f = self.by_fid.get(fid)
        if f is None or rest % 4 or rest // 4 > len(f.body):
            raise TrapExec(f"branch to invalid code address {addr:#018x}", addr)
        return f, rest // 4

    # -- calls -------------------------------------------------------------
    def _push(self, func: Function, args: List[int], ret_addr: int, dst: Optional[str]):
        caller = self.frames[-1] if self.frames else None
        sp_entry = (caller.sp if caller else STACK_TOP) - FRAME_HEADER
        frame = Frame(func, sp_entry, ret_addr)
        prev = self.memory.read(caller.slot) if caller else CHAIN_BASE
        signed = self.ret.sign_prologue(ret_addr, func.fid, prev, sp_entry)
        if self.ret.mode != "none":
            self._event("ret_sign", fid=func.fid)
        self.memory.write(frame.slot, signed)
        if len(args) != len(func.params):
            raise Trap(f"{func.name} expects {len(func.params)} arguments, got {len(args)}")
        frame.regs.update(zip(func.params, args))
        if caller:
            caller.call_dst = dst
        self.frames.append(frame)
        if func.name in self.goals:
            self._event("gadget_reached", target=func.name)
            raise _Hijacked(func.name)

    def _reseal_at_branch(self, frame: Frame, cell_arg):
        # the branch consumed the stripped target; the cell's re-seal placed
        # after the call takes effect before the callee runs
        body = frame.func.body
        if frame.pc < len(body):
            nxt = body[frame.pc]
            if nxt.op in ("pct_sign", "pct_restore") and nxt.args[0] == cell_arg:
                frame.pc += 1
                self._exec(frame, nxt)

    def _call_addr(self, frame: Frame, target: int, args, dst):
        func, pc = self.decode(target)
        if pc != 0:
            raise TrapExec(f"indirect call into the middle of {func.name}", target)
        self._event("icall", target=func.name)
        ret_addr = self.symbols[frame.func.name] + 4 * frame.pc
        self._push(func, [self.val(frame, a) for a in args], ret_addr, dst)

    def _return(self, value: Optional[int]):
        frame = self.frames[-1]
        caller = self.frames[-2] if len(self.frames) > 1 else None
        signed = self.memory.read(frame.slot)
        prev = self.memory.read(caller.slot) if caller else CHAIN_BASE
        self.runtime.site = f"{frame.func.name}:ret"
        addr = self.ret.auth_epilogue(signed, frame.func.fid, prev, frame.sp_entry, site=self.runtime.site)
        if self.ret.mode != "none":
            self._event("ret_auth", fid=frame.func.fid)
        self.frames.pop()
        if addr != frame.expected_ret:
            if addr == EXIT_ADDR and caller is None:
                pass
            else:
                func, pc = self.decode(addr)
                self._event("ret_hijack", expected=f"{frame.expected_ret:#x}", actual=f"{addr:#x}",
                            target=func.name)
                raise _Hijacked("return")
        if caller is None:
            self.trace.exit_value = value
            return
        if caller.call_dst and value is not None:
            caller.regs[caller.call_dst] = value
        caller.call_dst = None

    # -- attacker ----------------------------------------------------------
    def _aval(self, frame: Frame, x) -> int:
        if isinstance(x, int):
            return x & MASK64
        if isinstance(x, str):
            if x.startswith("$"):
                return self.attacker_vars[x[1:]]
            return self.val(frame, x)
        head, *rest = x
        if head in ("+", "-", "xor", "and", "or"):
            a, b = (self._aval(frame, y) for y in rest)
            return {"+": a + b, "-": a - b, "xor": a ^ b, "and": a & b, "or": a | b}[head] & MASK64
        if head == "strip":
            return self._aval(frame, rest[0]) & self.pa.layout.va_mask
        if head == "ret_slot":
            depth = rest[0] if rest else 0
            return self.frames[-1 - depth].slot
        if head == "store_slot":
            if not self.config.expose_store:
                raise PermissionError("metadata store is not exposed")
            slot = self.store.slot_of(self._aval(frame, rest[0]))
            if slot is None:
                raise PermissionError("no metadata entry")
            return STORE_WINDOW + 16 * slot
        raise ValueError(f"bad attacker operand {x!r}")

    def _attacker_read(self, addr: int, n: int) -> bytes:
        if STORE_WINDOW <= addr < STORE_WINDOW + 16 * self.store.capacity:
            if not self.config.expose_store:
                raise PermissionError("metadata store is not exposed")
            out = bytearray()
            for a in range(addr, addr + n):
                off = a - STORE_WINDOW
                key, tag = self.store.slot(off // 16)
                word = key if (off % 16) < 8 else tag
                out.append((word >> (8 * (off % 8))) & 0xFF)
            return bytes(out)
        if segment_of(addr) is None:
            raise PermissionError(f"unmapped address {addr:#x}")
        return self.memory.read_bytes(addr, n)

    def _attacker_write(self, addr: int, data: bytes):
        for a in (addr, addr + len(data) - 1):
            seg = segment_of(a)
            if seg is None or not seg.writable:
                raise PermissionError(f"address {a:#x} is not writable")
        self.memory.write_bytes(addr, data)

    def _attack_action(self, frame: Frame, action: list):
        kind = action[0]
        rec = {"point": None, "action": kind}
        try:
            if kind == "write":
                addr = self._aval(frame, action[1])
                value = self._aval(frame, action[2])
                n = action[3] if len(action) > 3 else 8
                self._attacker_write(addr, value.to_bytes(8, "little")[:n])
                rec.update(address=f"{addr:#x}", value=f"{value:#x}", bytes=n)
            elif kind == "read":
                var = action[1].lstrip("$")
                addr = self._aval(frame, action[2])
                n = action[3] if len(action) > 3 else 8
                value = int.from_bytes(self._attacker_read(addr, n), "little")
                self.attacker_vars[var] = value
                rec.update(address=f"{addr:#x}", value=f"{value:#x}", var=var)
            elif kind == "let":
                self.attacker_vars[action[1].lstrip("$")] = self._aval(frame, action[2])
            elif kind == "copy":
                dst, src = self._aval(frame, action[1]), self._aval(frame, action[2])
                self._attacker_write(dst, self._attacker_read(src, 8))
                rec.update(dst=f"{dst:#x}", src=f"{src:#x}")
            elif kind == "swap":
                a, b = self._aval(frame, action[1]), self._aval(frame, action[2])
                da, db = self._attacker_read(a, 8), self._attacker_read(b, 8)
                self._attacker_write(a, db)
                self._attacker_write(b, da)
                rec.update(a=f"{a:#x}", b=f"{b:#x}")
            elif kind == "craft":
                addr = self._aval(frame, action[1])
                words = [self._aval(frame, w) for w in action[2:]]
                self._attacker_write(addr, b"".join(w.to_bytes(8, "little") for w in words))
                rec.update(address=f"{addr:#x}", words=len(words))
            else:
                raise ValueError(f"unknown attacker action {kind!r}")
            rec["result"] = "done"
        except PermissionError as e:
            rec["result"] = "denied"
            rec["reason"] = str(e)
        return rec

    def _point(self, frame: Frame, name: str):
        self.point_hits[name] += 1
        if not self.attack:
            return
        hit = self.point_hits[name]
        for step in self.attack.steps:
            if step[1] != name:
                continue
            actions = step[2:]
            if actions and isinstance(actions[0], int):
                if actions[0] != hit:
                    continue
                actions = actions[1:]
            for act in actions:
                rec = self._attack_action(frame, act)
                rec["point"] = f"{name}#{hit}"
                self.trace.attacker.append(rec)
                self._event("attack", **rec)

    # -- main loop ---------------------------------------------------------
    def _exec(self, frame: Frame, ins):
        op = ins.op
        a = ins.args
        rt = self.runtime
        regs = frame.regs
        if op == "load":
            regs[ins.dst] = self.load(self.val(frame, a[0]))
        elif op == "store":
            self.store_word(self.val(frame, a[0]), self.val(frame, a[1]))
        elif op in ("mov", "bitcast"):
            regs[ins.dst] = self.val(frame, a[0])
        elif op in ("add", "sub", "mul", "and", "xor", "lt", "eq"):
            x, y = self.val(frame, a[0]), self.val(frame, a[1])
            regs[ins.dst] = {
                "add": lambda: (x + y) & MASK64, "sub": lambda: (x - y) & MASK64,
                "mul": lambda: (x * y) & MASK64, "and": lambda: x & y, "xor": lambda: x ^ y,
                "lt": lambda: int(x < y), "eq": lambda: int(x == y)}[op]()
        elif op == "cmpptr":
            regs[ins.dst] = int(rt.ptr_compare(self.val(frame, a[0]), self.val(frame, a[1])))
        elif op == "gep":
            regs[ins.dst] = (self.val(frame, a[0]) + self.val(frame, a[2]) * self.tsize(a[1])) & MASK64
        elif op == "field":
            off, _ = self.program.types.field_offset(parse_type(a[1]), a[2])
            regs[ins.dst] = (self.val(frame, a[0]) + off) & MASK64
        elif op == "alloca":
            n = self.val(frame, a[1]) if len(a) > 1 else 1
            size = (n * self.tsize(a[0]) + 15) & ~15
            frame.sp -= size
            for c in range(frame.sp, frame.sp + size, 8):
                self.memory.cells.pop(c, None)
            regs[ins.dst] = frame.sp
        elif op == "malloc":
            n = self.val(frame, a[1]) if len(a) > 1 else 1
            regs[ins.dst] = self.heap.malloc(n * self.tsize(a[0]))
        elif op == "free":
            addr = self.val(frame, a[0])
            if not self.heap.free(addr):
                self._event("heap_corruption", address=f"{addr:#x}")
                raise _Hijacked("double free")
        elif op == "label":
            pass
        elif op == "br":
            frame.pc = frame.func.labels()[a[0]]
        elif op == "brif":
            if self.val(frame, a[0]):
                frame.pc = frame.func.labels()[a[1]]
        elif op == "call":
            callee = self.program.functions[a[0].lstrip("@")]
            ret_addr = self.symbols[frame.func.name] + 4 * frame.pc
            self._push(callee, [self.val(frame, x) for x in a[1:]], ret_addr, ins.dst)
        elif op == "icall":
            target = self.load(self.val(frame, a[0]))
            self.decode(target)  # a poisoned target faults before any re-seal
            self._reseal_at_branch(frame, a[0])
            self._call_addr(frame, target, a[2:], ins.dst)
        elif op == "setvptr":
            self.store_word(self.val(frame, a[0]), self.vtables[a[1]])
        elif op == "vcall":
            vptr = self.load(self.val(frame, a[0]))
            entry = self.load((vptr + 8 * self.val(frame, a[2])) & MASK64)
            self._reseal_at_branch(frame, a[0])
            self._call_addr(frame, entry, a[3:], ins.dst)
        elif op == "ret":
            self._return(self.val(frame, a[0]) if a else None)
        elif op == "out":
            self.trace.outputs.append(self.val(frame, a[0]))
        elif op == "point":
            self._point(frame, a[0])
        elif op == "pct_add_tag":
            rt.pct_add_tag(self.val(frame, a[0]), self.tsize(a[1]), self.val(frame, a[2]))
        elif op == "pct_sign":
            cell = self.val(frame, a[0])
            self._check_addr(cell)
            rt.sp = frame.sp_entry
            try:
                rt.pct_sign(cell, self.pclass(a[1]), type_key(parse_type(a[1])))
            except NonCanonicalInput as e:
                raise TrapSegfault(str(e), cell) from None
        elif op == "pct_auth":
            cell = self.val(frame, a[0])
            self._check_addr(cell)
            rt.sp = frame.sp_entry
            elem = None
            if len(a) > 2:
                elem = (self.pa.strip(self.memory.read(cell))
                        + self.val(frame, a[2]) * self.pointee_size(a[1])) & MASK64
            rt.pct_auth(cell, elem, self.pclass(a[1]), type_key(parse_type(a[1])))
        elif op == "pct_rm_tag":
            for x in a:
                rt.pct_rm_tag(self.val(frame, x))
        elif op == "pct_save":
            rt.ovwrt_save(self.val(frame, a[0]))
        elif op == "pct_restore":
            rt.ovwrt_restore(self.val(frame, a[0]))
        else:
            raise Trap(f"unknown instruction {op}")

    def _call_top(self, name: str):
        self._push(self.program.functions[name], [], EXIT_ADDR, None)
        limit = self.config.max_steps
        trace = self.trace
        while self.frames:
            frame = self.frames[-1]
            body = frame.func.body
            if frame.pc >= len(body):
                self.runtime.site = f"{frame.func.name}:end"
                self._return(None)
                continue
            ins = body[frame.pc]
            frame.pc += 1
            trace.steps += 1
            if trace.steps > limit:
                raise StepLimit(f"exceeded {limit} steps")
            self.runtime.site = f"{frame.func.name}:{frame.pc - 1}"
            self._exec(frame, ins)

    def run(self) -> TraceReport:
        trace = self.trace
        try:
            if CTOR in self.program.functions:
                self._call_top(CTOR)
            self._call_top("main")
            trace.status = "exited"
        except PactightAbort as e:
            trace.status = "aborted"
            trace.aborts.append(e.record.to_dict())
            if not any(ev["kind"] == "abort" for ev in trace.events):
                self._event("abort", **e.record.to_dict())
        except AuthFault as e:
            trace.status = "aborted"
            rec = AbortRecord(AbortReason.AUTH_FAIL, self.runtime.site, e.address).to_dict()
            trace.aborts.append(rec)
            self._event("abort", **rec)
        except _Hijacked as e:
            trace.status = "hijacked"
        except Trap as e:
            trace.status = "trapped"
            trace.trap = {"kind": e.kind, "detail": e.detail, "site": self.runtime.site}
            self._event("trap", kind_=e.kind, detail=e.detail)
        counts = Counter(self.runtime.counts)
        counts["ret_sign"] = self.ret.signs
        counts["ret_auth"] = self.ret.auths
        trace.counts = dict(sorted(counts.items()))
        trace.verdict = self._verdict().value
        return trace

    def _verdict(self) -> Verdict:
        t = self.trace
        attacked = self.attack is not None
        kinds = {ev["kind"] for ev in t.events}
        if kinds & {"gadget_reached", "ret_hijack", "heap_corruption"}:
            return Verdict.ATTACK_SUCCEEDED
        detected = t.status == "aborted" or (t.status == "trapped" and t.trap["kind"] == "PoisonedDeref")
        if detected:
            return Verdict.ATTACK_BLOCKED if attacked else Verdict.ABORTED
        if attacked:
            return Verdict.ATTACK_FAILED
        return Verdict.CLEAN if t.status == "exited" else Verdict.ABORTED

    def audit_keys(self) -> bool:
        """True when no attacker-readable word equals any key half."""
        halves = set()
        for k in self.vault._keys.values():
            halves.add(k.material & MASK64)
            halves.add(k.material >> 64)
        for addr, word in self.memory.cells.items():
            if word in halves:
                return False
        if self.config.expose_store:
            for i in range(self.store.capacity):
                if set(self.store.slot(i)) & halves:
                    return False
        return True


def run(program: Program, config: Optional[MachineConfig] = None) -> TraceReport:
    return Machine(program, config).run()
