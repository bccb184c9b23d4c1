"""Static instrumentation statistics of an instrumented program."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .program import Program

LOAD_OPS = ("load", "icall", "vcall")
STORE_OPS = ("store", "setvptr")


@dataclass
class InstrumentationStats:
    pct_add_tag: int = 0
    pct_sign: int = 0
    pct_auth: int = 0
    pct_rm_tag: int = 0
    ovwrt_restore: int = 0
    loads: int = 0
    protected_loads: int = 0
    stores: int = 0
    protected_stores: int = 0

    @property
    def protected_load_pct(self) -> float:
        return 100.0 * self.protected_loads / self.loads if self.loads else 0.0

    @property
    def protected_store_pct(self) -> float:
        return 100.0 * self.protected_stores / self.stores if self.stores else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protected_load_pct"] = round(self.protected_load_pct, 2)
        d["protected_store_pct"] = round(self.protected_store_pct, 2)
        return d

    def counts(self) -> dict:
        return {k: getattr(self, k) for k in ("pct_add_tag", "pct_sign", "pct_auth", "pct_rm_tag")}


def emit_stats(prog: Program) -> InstrumentationStats:
    s = InstrumentationStats()
    for f in prog.functions.values():
        body = f.body
        for i, ins in enumerate(body):
            op = ins.op
            if op in ("pct_add_tag", "pct_sign", "pct_auth", "pct_rm_tag"):
                setattr(s, op, getattr(s, op) + 1)
            elif op == "pct_restore":
                s.ovwrt_restore += 1
            elif op in LOAD_OPS:
                s.loads += 1
                prev = body[i - 1] if i else None
                if prev is not None and prev.op == "pct_auth" and prev.args[0] == ins.args[0]:
                    s.protected_loads += 1
            elif op in STORE_OPS:
                s.stores += 1
                nxt = body[i + 1] if i + 1 < len(body) else None
                if nxt is not None and nxt.op == "pct_sign" and nxt.args[0] == ins.args[0]:
                    s.protected_stores += 1
    return s
