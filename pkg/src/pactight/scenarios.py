"""Attack scenario registry.

Each scenario is a mini-IR program with an attack script plus the level it
is instrumented at.  A mode selects how the program is protected:

=============  ==========================  ===============
mode           cell modifier               return address
=============  ==========================  ===============
none           not instrumented            unsigned
pactight       location XOR tag            chained
parts_typeid   static type id              stack pointer
sp_modifier    stack pointer               stack pointer
zero_modifier  constant zero               constant zero
=============  ==========================  ===============
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional

from .interp import MachineConfig, TraceReport, Verdict, run
from .ir import InstrumentOptions, instrument, parse_program
from .ir.program import Program

MODES: Dict[str, Optional[tuple]] = {
    "none": None,
    "pactight": ("pactight", "pactight"),
    "parts_typeid": ("typeid", "sp"),
    "sp_modifier": ("sp", "sp"),
    "zero_modifier": ("zero", "zero"),
}

S, B = Verdict.ATTACK_SUCCEEDED, Verdict.ATTACK_BLOCKED


class UnknownScenario(KeyError):
    pass


class UnknownMode(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    level: str
    group: str
    summary: str
    expected: Dict[str, Verdict] = field(default_factory=dict)
    expose_store: bool = False

    def source(self) -> str:
        return resources.files("pactight.programs.scenarios").joinpath(self.name + ".ir").read_text()

    def program(self) -> Program:
        return parse_program(self.source(), self.name)


def _cfixx(name, summary):
    return Scenario(name, "vtable", "cfixx", summary, {"none": S, "pactight": B})


REGISTRY: Dict[str, Scenario] = {s.name: s for s in [
    _cfixx("fakevt", "heap overflow installs a fake vtable"),
    _cfixx("fakevt_sig", "fake vtable with a signature-compatible method"),
    _cfixx("vtxchg", "vtable pointer copied from an unrelated object"),
    _cfixx("vtxchg_hier", "vtable pointer copied within a hierarchy"),
    Scenario("coop", "vtable", "coop", "counterfeit object without constructor",
             {"none": S, "pactight": B}),
    Scenario("noncopy", "cfi", "reuse", "signed handler copied to another cell",
             {"none": S, "pactight": B, "parts_typeid": S, "sp_modifier": S, "zero_modifier": S}),
    Scenario("store_leak", "cfi", "reuse", "tag read from an exposed store, then copy",
             {"none": S, "pactight": B}, expose_store=True),
    Scenario("ret_swap", "cfi", "return", "saved return address replayed at equal depth",
             {"none": S, "pactight": B, "sp_modifier": S, "zero_modifier": S, "parts_typeid": S}),
    Scenario("fptr_forge", "cfi", "cfixx", "function pointer overwritten with a gadget",
             {"none": S, "pactight": B}),
    Scenario("dangling_uaf", "cpi", "temporal", "write after an indirect free, stale call",
             {"none": S, "pactight": B}),
    Scenario("double_free", "cpi", "temporal", "object freed twice",
             {"none": S, "pactight": B}),
]}


def get(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownScenario(name) from None


def build(scn: Scenario, mode: str, ovwrt: bool = False) -> Program:
    if mode not in MODES:
        raise UnknownMode(mode)
    prog = scn.program()
    schemes = MODES[mode]
    if schemes is None:
        return prog
    return instrument(prog, level=scn.level, opts=InstrumentOptions(ovwrt=ovwrt, ret_mode=schemes[1]))


def run_scenario_trace(name: str, mode: str = "pactight", seed: Optional[int] = 0,
                       **config) -> TraceReport:
    scn = get(name)
    ovwrt = config.pop("ovwrt", False)
    prog = build(scn, mode, ovwrt)
    schemes = MODES[mode]
    cfg = MachineConfig(seed=seed, scheme=schemes[0] if schemes else "pactight",
                        ret_mode=schemes[1] if schemes else "none",
                        expose_store=config.pop("expose_store", scn.expose_store), **config)
    return run(prog, cfg)


def run_scenario(name: str, mode: str = "pactight", seed: Optional[int] = 0, **config) -> Verdict:
    return Verdict(run_scenario_trace(name, mode, seed, **config).verdict)


def matrix(seed: Optional[int] = 0) -> Dict[str, Dict[str, str]]:
    return {name: {mode: run_scenario(name, mode, seed).value for mode in MODES}
            for name in REGISTRY}
