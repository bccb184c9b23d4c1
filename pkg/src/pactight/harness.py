"""Statistical experiments over the runtime, and a micro-benchmark suite.

Every acceptance rate is compared with its analytic value ``2**-pac_bits``
using a binomial band ``p +/- k*sqrt(p(1-p)/n)``.  Results report the 3σ
band; callers gate on 4σ.  An exact Clopper-Pearson interval is included
for readers who prefer it.

Trials run in fixed-size chunks, each with its own derived seed, so the
result depends on the seed and trial count but not on how many worker
processes were used.
"""
from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Tuple

from scipy.stats import binomtest

from .memory import HEAP_BASE, Memory
from .pa import AddressLayout, KeyId, KeyVault, PointerAuth
from .rng import derive_rng, derive_seed
from .runtime import PactightAbort, PointerClass, Runtime, RuntimeConfig
from .store import MetadataStore

CHUNK = 50_000
OBJ_SIZE = 16
ARENA = 1 << 24


@dataclass
class ExperimentResult:
    experiment: str
    trials: int
    accepted: int
    rate: float
    expected: float
    sigma: float
    z: float
    band3: Tuple[float, float]
    within_3sigma: bool
    within_4sigma: bool
    ci_exact: Tuple[float, float]
    pac_bits: int
    seed: Optional[int]
    elapsed_s: float
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band3"] = list(self.band3)
        d["ci_exact"] = list(self.ci_exact)
        return d


def binomial_band(p: float, n: int, k: float) -> Tuple[float, float]:
    s = math.sqrt(p * (1 - p) / n)
    return max(0.0, p - k * s), min(1.0, p + k * s)


def summarize(name: str, trials: int, accepted: int, expected: float, pac_bits: int,
              seed: Optional[int], elapsed: float, **extra) -> ExperimentResult:
    rate = accepted / trials
    sigma = math.sqrt(expected * (1 - expected) / trials)
    z = (rate - expected) / sigma if sigma else (0.0 if rate == expected else math.inf)
    lo3, hi3 = binomial_band(expected, trials, 3)
    lo4, hi4 = binomial_band(expected, trials, 4)
    ci = binomtest(accepted, trials, expected).proportion_ci(confidence_level=0.9999, method="exact")
    return ExperimentResult(
        name, trials, accepted, rate, expected, sigma, z, (lo3, hi3),
        lo3 <= rate <= hi3, lo4 <= rate <= hi4, (float(ci.low), float(ci.high)),
        pac_bits, seed, round(elapsed, 3), dict(extra))


class _Bench:
    """A bare runtime that reports auth failures instead of aborting."""

    def __init__(self, seed: Optional[int], pac_bits: int, chunk: int = 0, tag_width: int = 64):
        self.vault = KeyVault(seed=derive_seed(seed, "harness-keys"))
        self.pa = PointerAuth(self.vault, AddressLayout(pac_bits=pac_bits))
        self.store = MetadataStore(tag_width=tag_width)
        self.memory = Memory()
        self.rng = derive_rng(seed, "harness", chunk)
        self.rt = Runtime(self.pa, self.store, self.memory,
                          RuntimeConfig(tag_width=tag_width, abort_on_auth_fail=False), rng=self.rng)

    def random_cell(self) -> int:
        return HEAP_BASE + 8 * self.rng.randrange(ARENA // 8)


def _chunks(trials: int) -> List[Tuple[int, int]]:
    out, start = [], 0
    while start < trials:
        n = min(CHUNK, trials - start)
        out.append((len(out), n))
        start += n
    return out


def _fan_out(fn, trials: int, workers: int, *args) -> List:
    jobs = [(idx, n) + args for idx, n in _chunks(trials)]
    if workers <= 1 or len(jobs) == 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# -- forgery -------------------------------------------------------------------
_TARGETS = 64


def _forge_chunk(idx, n, seed, pac_bits) -> int:
    b = _Bench(seed, pac_bits, idx)
    rng, rt, mem, pa = b.rng, b.rt, b.memory, b.pa
    targets = [HEAP_BASE + ARENA + OBJ_SIZE * i for i in range(_TARGETS)]
    for t in targets:
        b.store.add(t, OBJ_SIZE, 1, rng)
    shift, bits = pa.layout.pac_shift, pa.layout.pac_bits
    ok = 0
    for _ in range(n):
        loc = b.random_cell()
        guess = targets[rng.randrange(_TARGETS)] | (rng.getrandbits(bits) << shift)
        mem.cells[loc] = guess
        if not pa.is_poisoned(rt.pct_auth(loc, cls=PointerClass.FUNCTION)):
            ok += 1
    return ok


def measure_forgery_rate(trials: int = 1_000_000, seed: Optional[int] = 0, pac_bits: int = 16,
                         workers: int = 1) -> ExperimentResult:
    """Uniform PAC guesses written over a tagged target, authenticated in place."""
    t0 = time.perf_counter()
    ok = sum(_fan_out(_forge_chunk, trials, workers, seed, pac_bits))
    return summarize("forge", trials, ok, 2.0 ** -pac_bits, pac_bits, seed, time.perf_counter() - t0)


# -- copy / reuse ---------------------------------------------------------------
def _copy_chunk(idx, n, seed, pac_bits, control) -> int:
    b = _Bench(seed, pac_bits, idx)
    rng, rt, mem, pa = b.rng, b.rt, b.memory, b.pa
    targets = [HEAP_BASE + ARENA + OBJ_SIZE * i for i in range(_TARGETS)]
    for t in targets:
        b.store.add(t, OBJ_SIZE, 1, rng)
    ok = 0
    for _ in range(n):
        loc1 = b.random_cell()
        loc2 = loc1
        while not control and loc2 == loc1:
            loc2 = b.random_cell()
        mem.cells[loc1] = targets[rng.randrange(_TARGETS)]
        mem.cells[loc2] = rt.pct_sign(loc1, PointerClass.FUNCTION)
        if not pa.is_poisoned(rt.pct_auth(loc2, cls=PointerClass.FUNCTION)):
            ok += 1
    return ok


def measure_copy_reuse_rate(trials: int = 1_000_000, seed: Optional[int] = 0, pac_bits: int = 16,
                            control: bool = False, workers: int = 1) -> ExperimentResult:
    """Sign at one cell, byte-copy to another, authenticate there.

    With ``control`` the destination is the source cell, so every trial
    must be accepted.
    """
    t0 = time.perf_counter()
    ok = sum(_fan_out(_copy_chunk, trials, workers, seed, pac_bits, control))
    expected = 1.0 if control else 2.0 ** -pac_bits
    return summarize("copy_control" if control else "copy", trials, ok, expected, pac_bits, seed,
                     time.perf_counter() - t0)


def collision_fixture(seed: Optional[int] = 0, pac_bits: int = 16, trials: int = 100) -> dict:
    """Force ``loc1 ^ tag1 == loc2 ^ tag2`` and show the copy is accepted.

    Each trial signs a pointer at ``loc1``, re-tags its pointee with
    ``tag2 = loc1 ^ tag1 ^ loc2`` (a reallocation that happens to draw the
    colliding tag) and authenticates the byte copy at ``loc2``.
    """
    b = _Bench(seed, pac_bits)
    rng, rt, mem, pa, store = b.rng, b.rt, b.memory, b.pa, b.store
    target = HEAP_BASE + ARENA
    accepted = 0
    for _ in range(trials):
        tag1 = store.add(target, OBJ_SIZE, 1, rng)
        loc1 = b.random_cell()
        loc2 = loc1
        while loc2 == loc1:
            loc2 = b.random_cell()
        mem.cells[loc1] = target
        mem.cells[loc2] = rt.pct_sign(loc1, PointerClass.FUNCTION)
        store.remove(target)
        tag2 = loc1 ^ tag1 ^ loc2
        store.add(target, OBJ_SIZE, 1, rng, tag=tag2)
        assert loc1 ^ tag1 == loc2 ^ tag2
        if not pa.is_poisoned(rt.pct_auth(loc2, cls=PointerClass.FUNCTION)):
            accepted += 1
        store.remove(target)
    return {"experiment": "copy_collision", "trials": trials, "accepted": accepted,
            "rate": accepted / trials, "pac_bits": pac_bits, "seed": seed}


# -- dangling -------------------------------------------------------------------
def _dangle_chunk(idx, n, seed, pac_bits, fixed_tag) -> Tuple[int, int]:
    b = _Bench(seed, pac_bits, idx)
    rng, rt, mem, pa, store = b.rng, b.rt, b.memory, b.pa, b.store
    missing = stale_ok = 0
    loc = HEAP_BASE
    for _ in range(n):
        obj = HEAP_BASE + ARENA + OBJ_SIZE * rng.randrange(1 << 16)
        tag = store.add(obj, OBJ_SIZE, 1, rng)
        mem.cells[loc] = obj
        signed = rt.pct_sign(loc, PointerClass.DATA)
        store.remove(obj)
        try:
            rt.pct_auth(loc, cls=PointerClass.DATA)
        except PactightAbort as e:
            if e.record.reason.value == "MissingTag":
                missing += 1
        store.add(obj, OBJ_SIZE, 1, rng, tag=tag if fixed_tag else None)
        mem.cells[loc] = signed
        if not pa.is_poisoned(rt.pct_auth(loc, cls=PointerClass.DATA)):
            stale_ok += 1
        store.remove(obj)
    return missing, stale_ok


def measure_dangling_reuse(trials: int = 1_000_000, seed: Optional[int] = 0, pac_bits: int = 16,
                           fixed_tag: bool = False, workers: int = 1) -> ExperimentResult:
    """Free, authenticate (must miss), reallocate, authenticate the stale value.

    ``fixed_tag`` reuses the freed tag on reallocation, the control that
    shows why a fresh tag is drawn.
    """
    t0 = time.perf_counter()
    parts = _fan_out(_dangle_chunk, trials, workers, seed, pac_bits, fixed_tag)
    missing = sum(p[0] for p in parts)
    stale = sum(p[1] for p in parts)
    expected = 1.0 if fixed_tag else 2.0 ** -pac_bits
    return summarize("dangle_fixed_tag" if fixed_tag else "dangle", trials, stale, expected, pac_bits,
                     seed, time.perf_counter() - t0, missing_tag=missing,
                     missing_tag_rate=missing / trials)


# -- benchmarks -----------------------------------------------------------------
def _median_ns(fn, iterations: int, repeats: int = 7) -> float:
    fn(min(iterations, 1000))
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(iterations)
        samples.append((time.perf_counter_ns() - t0) / iterations)
    return statistics.median(samples)


def _lookup_curve(b: _Bench, sizes, iterations: int) -> List[Tuple[int, float]]:
    curve = []
    for n in sizes:
        store = MetadataStore()
        keys = [HEAP_BASE + OBJ_SIZE * i for i in range(n)]
        for k in keys:
            store.add(k, OBJ_SIZE, 1, b.rng)
        probe = [keys[b.rng.randrange(n)] for _ in range(1024)]

        def run(it, store=store, probe=probe):
            lookup = store.lookup
            for i in range(it):
                lookup(probe[i & 1023])
        curve.append((n, _median_ns(run, iterations)))
    return curve


def ovwrt_loop_counts(seed: Optional[int] = 0) -> dict:
    """Dynamic runtime-call counts of the loop benchmark with and without OVWRT."""
    from .interp import MachineConfig, run
    from .ir import InstrumentOptions, instrument, parse_program

    src = resources.files("pactight.programs").joinpath("loop_bench.ir").read_text()
    prog = parse_program(src, "loop_bench")
    out = {}
    for ovwrt in (False, True):
        inst = instrument(prog, level="cpi", opts=InstrumentOptions(ovwrt=ovwrt, ret_mode="pactight"))
        trace = run(inst, MachineConfig(seed=seed))
        out["ovwrt" if ovwrt else "baseline"] = {"verdict": trace.verdict, "counts": trace.counts,
                                                 "outputs": trace.outputs}
    return out


def bench_ops(iterations: int = 20_000, seed: Optional[int] = 0,
              lookup_sizes=(64, 256, 1024, 4096, 16384, 65536)) -> dict:
    """Median per-operation cost in nanoseconds."""
    b = _Bench(seed, 16)
    rt, mem, pa, store, rng = b.rt, b.memory, b.pa, b.store, b.rng
    obj = HEAP_BASE + ARENA
    store.add(obj, OBJ_SIZE, 1, rng)
    loc = HEAP_BASE
    mem.cells[loc] = obj
    rt.pct_sign(loc)
    signed = mem.cells[loc]
    vault = b.vault

    def mac(it):
        for i in range(it):
            vault.mac64(KeyId.DA, obj, i)

    def sign(it):
        for _ in range(it):
            mem.cells[loc] = obj
            rt.pct_sign(loc)

    def auth(it):
        for _ in range(it):
            mem.cells[loc] = signed
            rt.pct_auth(loc)

    def roundtrip(it):
        for _ in range(it):
            mem.cells[loc] = obj
            rt.pct_sign(loc)
            rt.pct_auth(loc)

    bases = [HEAP_BASE + 2 * ARENA + OBJ_SIZE * i for i in range(iterations)]

    def add_rm():
        t0 = time.perf_counter_ns()
        for p in bases:
            rt.pct_add_tag(p, OBJ_SIZE, 1)
        t1 = time.perf_counter_ns()
        for p in bases:
            rt.pct_rm_tag(p)
        t2 = time.perf_counter_ns()
        return (t1 - t0) / len(bases), (t2 - t1) / len(bases)

    add_samples, rm_samples = zip(*(add_rm() for _ in range(5)))
    ops = {
        "mac64": _median_ns(mac, iterations),
        "pct_sign": _median_ns(sign, iterations),
        "pct_auth": _median_ns(auth, iterations),
        "sign_auth_roundtrip": _median_ns(roundtrip, iterations),
        "pct_add_tag": statistics.median(add_samples),
        "pct_rm_tag": statistics.median(rm_samples),
    }
    curve = _lookup_curve(b, lookup_sizes, iterations)
    ops["store_lookup"] = curve[0][1]
    return {
        "ops_ns": {k: round(v, 1) for k, v in ops.items()},
        "store_lookup_curve": [{"live_entries": n, "ns": round(ns, 1)} for n, ns in curve],
        "ovwrt_loop": ovwrt_loop_counts(seed),
        "iterations": iterations,
        "seed": seed,
    }
