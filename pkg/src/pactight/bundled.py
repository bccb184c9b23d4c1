"""Access to the programs shipped with the package."""
from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Dict, List

from .ir import Program, parse_program

_ROOT = "pactight.programs"


def _dir(sub: str = ""):
    base = resources.files(_ROOT)
    return base.joinpath(sub) if sub else base


def corpus_names() -> List[str]:
    return sorted(p.name[:-3] for p in _dir("corpus").iterdir() if p.name.endswith(".ir"))


def load_corpus() -> Dict[str, Program]:
    return {n: parse_program(_dir("corpus").joinpath(n + ".ir").read_text(), n) for n in corpus_names()}


def program_names() -> List[str]:
    return sorted(p.name[:-3] for p in _dir().iterdir() if p.name.endswith(".ir"))


def source(name: str) -> str:
    for sub in ("", "corpus", "scenarios"):
        f = _dir(sub).joinpath(name + ".ir")
        if f.is_file():
            return f.read_text()
    raise FileNotFoundError(f"no bundled program named {name!r}")


def load(name_or_path: str) -> Program:
    """Parse a file path, or a bundled program by name."""
    p = Path(name_or_path)
    if p.is_file():
        return parse_program(p.read_text(), p.stem)
    return parse_program(source(name_or_path), name_or_path)
