from .analysis import Level, SensitivityMap, classify_sensitive, pointer_class
from .instrument import (AlreadyInstrumented, InstrumentOptions, InstrumentReport, instrument,
                         insertion_sites)
from .program import Function, Global, Instr, Program, format_program, parse_program
from .sexpr import ParseError
from .stats import InstrumentationStats, emit_stats
from .types import CycleError, TypeTable

__all__ = [
    "AlreadyInstrumented", "CycleError", "Function", "Global", "Instr", "InstrumentOptions",
    "InstrumentReport", "InstrumentationStats", "Level", "ParseError", "Program",
    "SensitivityMap", "TypeTable", "classify_sensitive", "emit_stats", "format_program",
    "instrument", "insertion_sites", "parse_program", "pointer_class",
]
