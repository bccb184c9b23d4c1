"""Deterministic, splittable random streams.

Every consumer asks for its own named stream, so adding a draw in one place
never shifts the values seen by another.  ``seed=None`` gives OS entropy.
"""
from __future__ import annotations

import hashlib
import random
from typing import Optional


class _SystemStream(random.SystemRandom):
    pass


def derive_rng(seed: Optional[int], *labels) -> random.Random:
    if seed is None:
        return _SystemStream()
    h = hashlib.sha256(repr((int(seed),) + tuple(str(x) for x in labels)).encode())
    return random.Random(int.from_bytes(h.digest(), "little"))


def derive_seed(seed: Optional[int], *labels) -> Optional[int]:
    if seed is None:
        return None
    h = hashlib.sha256(repr((int(seed),) + tuple(str(x) for x in labels)).encode())
    return int.from_bytes(h.digest()[:8], "little")
