"""Emulated pointer-authentication defenses for a small typed IR.

The layers, bottom up: ``pa`` (keyed PAC sign/auth/strip), ``store`` (the
tag table), ``runtime`` (add_tag / sign / auth / rm_tag), ``ret`` (return
address signing), ``ir`` (parser, sensitivity analysis, instrumentation),
``interp`` (machine and attacker), ``scenarios`` and ``harness``.
"""
from .interp import Machine, MachineConfig, TraceReport, Verdict, run
from .pa import AddressLayout, AuthFault, KeyId, KeyVault, NonCanonicalInput, PointerAuth
from .ret import ReturnProtector
from .runtime import AbortReason, AbortRecord, PactightAbort, PointerClass, Runtime, RuntimeConfig
from .scenarios import UnknownScenario, run_scenario
from .store import MetadataStore, StoreStats

__version__ = "0.1.0"

__all__ = [
    "AbortReason", "AbortRecord", "AddressLayout", "AuthFault", "KeyId", "KeyVault", "Machine",
    "MachineConfig", "MetadataStore", "NonCanonicalInput", "PactightAbort", "PointerAuth",
    "PointerClass", "ReturnProtector", "Runtime", "RuntimeConfig", "StoreStats", "TraceReport",
    "UnknownScenario", "Verdict", "run", "run_scenario",
]
