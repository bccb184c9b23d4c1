"""The four runtime APIs (add_tag / sign / auth / rm_tag) and pointer helpers.

A signed cell at ``loc`` holding target ``t`` carries
``sign(t, loc ^ tag(t), key)``, where ``tag(t)`` is the random tag of the
element ``t`` points at.  Moving the value to another cell changes ``loc``;
freeing the pointee removes ``tag(t)``; reallocating it draws a new one.

``pct_auth`` leaves the stripped pointer in the cell, as the hardware
``aut*`` does to the register it loaded.  Instrumented code re-seals the
cell after the use, either with ``pct_sign`` or, under OVWRT, by writing
back the signed value saved before authentication.

Comparison schemes (``typeid``, ``sp``, ``zero``) swap in the modifier used by
other PA defenses so the same programs can be attacked under each.
"""
from __future__ import annotations

import enum
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

from .memory import Memory
from .pa import KeyId, PointerAuth
from .store import AbsentError, MetadataStore, OverlapError


class PointerClass(enum.Enum):
    FUNCTION = "function_ptr"
    DATA = "data_ptr"
    RETURN = "return_addr"


class AbortReason(enum.Enum):
    MISSING_TAG = "MissingTag"
    AUTH_FAIL = "AuthFail"
    POISONED_DEREF = "PoisonedDeref"
    DOUBLE_FREE = "DoubleFree"


DEFAULT_KEY_MAP = {
    PointerClass.FUNCTION: KeyId.IA,
    PointerClass.DATA: KeyId.DA,
    PointerClass.RETURN: KeyId.IB,
}

SCHEMES = ("pactight", "typeid", "sp", "zero")


@dataclass
class RuntimeConfig:
    tag_width: int = 64
    abort_on_auth_fail: bool = True
    key_map: Dict[PointerClass, KeyId] = field(default_factory=lambda: dict(DEFAULT_KEY_MAP))
    ovwrt_optimization: bool = False
    scheme: str = "pactight"

    def __post_init__(self):
        missing = set(PointerClass) - set(self.key_map)
        if missing:
            raise ValueError(f"key_map lacks {sorted(m.value for m in missing)}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class AbortRecord:
    reason: AbortReason
    site: Optional[str]
    address: int

    def to_dict(self) -> dict:
        return {"reason": self.reason.value, "site": self.site, "address": f"{self.address:#018x}"}


class PactightAbort(Exception):
    def __init__(self, record: AbortRecord):
        super().__init__(f"{record.reason.value} at {record.site} ({record.address:#018x})")
        self.record = record


def type_id(name: str) -> int:
    """Static 64-bit id of a type name, the type-id modifier scheme."""
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


class Runtime:
    def __init__(self, pa: PointerAuth, store: MetadataStore, memory: Memory,
                 config: Optional[RuntimeConfig] = None, rng=None,
                 on_event: Optional[Callable[..., None]] = None):
        self.pa = pa
        self.store = store
        self.memory = memory
        self.config = config or RuntimeConfig(tag_width=store.tag_width)
        if self.config.tag_width != store.tag_width:
            raise ValueError("runtime and store disagree on tag width")
        self.rng = rng
        self.on_event = on_event
        self.counts: Counter = Counter()
        self.site: Optional[str] = None
        self.sp = 0
        self._saved: Dict[int, int] = {}

    # -- helpers -----------------------------------------------------------
    def _abort(self, reason: AbortReason, address: int):
        record = AbortRecord(reason, self.site, address)
        if self.on_event:
            self.on_event("abort", **record.to_dict())
        raise PactightAbort(record)

    def _emit(self, kind: str, **data):
        if self.on_event:
            self.on_event(kind, **data)

    def key_for(self, cls: PointerClass) -> KeyId:
        return self.config.key_map[cls]

    def modifier(self, loc: int, elem: int, type_name: Optional[str]) -> int:
        scheme = self.config.scheme
        if scheme == "pactight":
            entry = self.store.lookup(elem)
            if entry is None:
                self._abort(AbortReason.MISSING_TAG, elem)
            return loc ^ entry.tag
        if scheme == "typeid":
            return type_id(type_name or "")
        if scheme == "sp":
            return self.sp
        return 0

    # -- the four APIs -----------------------------------------------------
    def pct_add_tag(self, p: int, tsz: int, asz: int = 1) -> Optional[int]:
        self.counts["pct_add_tag"] += 1
        if self.config.scheme != "pactight":
            return None
        try:
            tag = self.store.add(self.pa.strip(p), tsz, asz, self.rng)
        except OverlapError as e:
            self._abort(AbortReason.DOUBLE_FREE, e.address)
        self._emit("pct_add_tag", address=p, tsz=tsz, asz=asz)
        return tag

    def pct_sign(self, loc: int, cls: PointerClass = PointerClass.DATA,
                 type_name: Optional[str] = None) -> int:
        self.counts["pct_sign"] += 1
        target = self.memory.read(loc)
        if target == 0:
            # null stays null; there is nothing to bind it to
            self._emit("pct_sign", loc=loc)
            return 0
        mod = self.modifier(loc, target, type_name)
        signed = self.pa.sign(target, mod, self.key_for(cls))
        self.memory.write(loc, signed)
        self._emit("pct_sign", loc=loc)
        return signed

    def pct_auth(self, loc: int, elem: Optional[int] = None, cls: PointerClass = PointerClass.DATA,
                 type_name: Optional[str] = None, strip_cell: bool = True) -> int:
        self.counts["pct_auth"] += 1
        signed = self.memory.read(loc)
        if signed == 0:
            self._emit("pct_auth", loc=loc, ok=True)
            return 0
        target = self.pa.strip(signed)
        if elem is None:
            elem = target
        mod = self.modifier(loc, elem, type_name)
        ok, address = self.pa.auth(signed, mod, self.key_for(cls))
        self._emit("pct_auth", loc=loc, ok=ok)
        if not ok:
            if self.config.abort_on_auth_fail:
                self._abort(AbortReason.AUTH_FAIL, loc)
            if strip_cell:
                self.memory.write(loc, address)
            return address
        if strip_cell:
            self.memory.write(loc, address)
        return address

    def pct_rm_tag(self, p: int) -> int:
        self.counts["pct_rm_tag"] += 1
        if self.config.scheme != "pactight":
            return 0
        try:
            n = self.store.remove(self.pa.strip(p))
        except AbsentError as e:
            self._abort(AbortReason.DOUBLE_FREE, e.address)
        self._emit("pct_rm_tag", address=p, removed=n)
        return n

    # -- OVWRT -------------------------------------------------------------
    def ovwrt_save(self, loc: int):
        self._saved[loc] = self.memory.read(loc)

    def ovwrt_restore(self, loc: int):
        self.counts["ovwrt_restore"] += 1
        self.memory.write(loc, self._saved.pop(loc))

    # -- pointer operations ------------------------------------------------
    def ptr_compare(self, a: int, b: int) -> bool:
        return self.pa.strip(a) == self.pa.strip(b)

    def ptr_reassign(self, src_loc: int, dst_loc: int, cls: PointerClass = PointerClass.DATA,
                     type_name: Optional[str] = None) -> int:
        target = self.pct_auth(src_loc, cls=cls, type_name=type_name, strip_cell=False)
        self.memory.write(dst_loc, target)
        return self.pct_sign(dst_loc, cls, type_name)

    def ptr_extern_call_arg(self, loc: int, cls: PointerClass = PointerClass.DATA,
                            type_name: Optional[str] = None) -> int:
        return self.pct_auth(loc, cls=cls, type_name=type_name, strip_cell=False)
