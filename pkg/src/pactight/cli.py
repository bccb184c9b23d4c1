"""Command-line entry point.

Exit codes: 0 when every verdict is the expected one, 1 when one is not
(an attack got through a protected mode, a clean program aborted, an
experiment left its 4σ band), 2 for usage errors.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import bundled, harness, scenarios
from .interp import MachineConfig, Verdict, run
from .ir import (InstrumentOptions, InstrumentReport, ParseError, Program, emit_stats,
                 format_program, insertion_sites, instrument)
from .ir.types import CycleError

LEVELS = ("cfi", "vtable", "cpi")


class UsageError(Exception):
    pass


_json_out = None  # the real stdout while human text is routed to stderr


def _emit_json(data, path: Optional[str]):
    if not path:
        return
    text = json.dumps(data, indent=2, default=str)
    if path == "-":
        (_json_out or sys.stdout).write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _read_config(path: str) -> Dict[str, object]:
    """``key = value`` lines; ``#`` comments; ints and true/false converted."""
    out: Dict[str, object] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        v = v.strip('"\'')
        if v.lower() in ("true", "false"):
            val: object = v.lower() == "true"
        else:
            try:
                val = int(v, 0)
            except ValueError:
                val = v
        out[k.replace("-", "_")] = val
    return out


def _add_machine_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pac-bits", type=int, default=16)
    p.add_argument("--tag-width", type=int, choices=(64, 32), default=64)
    p.add_argument("--expose-store", action="store_true")
    p.add_argument("--fpac", action="store_true")


def _machine_config(args, mode: str) -> MachineConfig:
    schemes = scenarios.MODES[mode]
    return MachineConfig(seed=args.seed, pac_bits=args.pac_bits, tag_width=args.tag_width,
                         fpac=args.fpac, expose_store=args.expose_store,
                         scheme=schemes[0] if schemes else "pactight", ret_mode=schemes[1] if schemes else "none")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pactight", description="Pointer-integrity defenses on a mini-IR.")
    ap.add_argument("--config", help="key = value file of flag defaults")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("instrument", help="instrument a program and print it")
    p.add_argument("program")
    p.add_argument("--level", choices=LEVELS, default="cpi")
    p.add_argument("--ovwrt", action="store_true")
    p.add_argument("--ret", choices=("none", "pactight", "sp", "zero"), default="pactight")
    p.add_argument("-o", "--output")
    p.add_argument("--json")

    p = sub.add_parser("run", help="run a program, instrumenting it for the mode")
    p.add_argument("program")
    p.add_argument("--mode", choices=list(scenarios.MODES), default="pactight")
    p.add_argument("--level", choices=LEVELS, default="cpi")
    p.add_argument("--ovwrt", action="store_true")
    p.add_argument("--json")
    _add_machine_flags(p)

    p = sub.add_parser("scenarios", help="list or run attack scenarios")
    p.add_argument("names", nargs="*")
    p.add_argument("--mode", choices=list(scenarios.MODES))
    p.add_argument("--all", action="store_true", help="run every scenario in every mode")
    p.add_argument("--json")
    _add_machine_flags(p)

    p = sub.add_parser("experiment", help="statistical experiments")
    p.add_argument("kind", choices=("forge", "copy", "dangle", "bench"))
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pac-bits", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--control", action="store_true", help="copy: destination equals source")
    p.add_argument("--fixed-tag", action="store_true", help="dangle: reuse the freed tag")
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--json")

    p = sub.add_parser("stats", help="instrumentation statistics per level")
    p.add_argument("programs", nargs="*", help="files or bundled names (default: the corpus)")
    p.add_argument("--level", choices=LEVELS + ("all",), default="all")
    p.add_argument("--ovwrt", action="store_true")
    p.add_argument("--json")

    p = sub.add_parser("bench", help="runtime micro-benchmarks")
    p.add_argument("--iterations", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")

    p = sub.add_parser("report", help="experiments + figures + CSV into a directory")
    p.add_argument("--out", default="report")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=5_000)
    p.add_argument("--json")
    return ap


# -- commands ------------------------------------------------------------------
def cmd_instrument(args) -> int:
    prog = bundled.load(args.program)
    report = InstrumentReport()
    out = instrument(prog, level=args.level, opts=InstrumentOptions(args.ovwrt, args.ret), report=report)
    text = format_program(out)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    _emit_json({"program": prog.name, "level": args.level, "stats": emit_stats(out).to_dict(),
                "unresolved_universal": report.unresolved_universal}, args.json)
    return 0


EXPECTED_RUN = {
    True: {Verdict.CLEAN, Verdict.ATTACK_SUCCEEDED, Verdict.ATTACK_FAILED},
    False: {Verdict.CLEAN, Verdict.ATTACK_BLOCKED, Verdict.ATTACK_FAILED},
}


def cmd_run(args) -> int:
    prog = bundled.load(args.program)
    schemes = scenarios.MODES[args.mode]
    if schemes is not None and prog.instrumented is None:
        prog = instrument(prog, level=args.level, opts=InstrumentOptions(args.ovwrt, schemes[1]))
    cfg = _machine_config(args, args.mode)
    if prog.instrumented and schemes is not None:
        cfg.ret_mode = None  # follow the program header
    trace = run(prog, cfg)
    print(f"{prog.name}: {trace.verdict} status={trace.status} outputs={trace.outputs}")
    for a in trace.aborts:
        print(f"  abort {a['reason']} at {a['site']} ({a['address']})")
    _emit_json(trace.to_dict(), args.json)
    return 0 if Verdict(trace.verdict) in EXPECTED_RUN[schemes is None] else 1


def cmd_scenarios(args) -> int:
    if not args.names and not args.all:
        for s in scenarios.REGISTRY.values():
            exp = " ".join(f"{m}={v.value.replace('ATTACK_', '')}" for m, v in s.expected.items())
            print(f"{s.name:14s} {s.level:7s} {s.summary}  [{exp}]")
        return 0
    names = list(scenarios.REGISTRY) if args.all else args.names
    modes = [args.mode] if args.mode else list(scenarios.MODES)
    rows, bad = [], 0
    for name in names:
        scn = scenarios.get(name)
        for mode in modes:
            trace = scenarios.run_scenario_trace(
                name, mode, args.seed, pac_bits=args.pac_bits, tag_width=args.tag_width,
                fpac=args.fpac, expose_store=args.expose_store or scn.expose_store)
            want = scn.expected.get(mode)
            ok = want is None or want.value == trace.verdict
            bad += not ok
            reason = trace.aborts[0]["reason"] if trace.aborts else (trace.trap or {}).get("kind", "")
            rows.append({"scenario": name, "mode": mode, "verdict": trace.verdict, "reason": reason,
                         "expected": want.value if want else None, "ok": ok})
            print(f"{name:14s} {mode:14s} {trace.verdict:17s} {reason:14s} {'' if ok else 'UNEXPECTED'}")
    _emit_json(rows, args.json)
    return 1 if bad else 0


def _experiment(args) -> dict:
    if args.kind == "forge":
        r = harness.measure_forgery_rate(args.trials, args.seed, args.pac_bits, args.workers)
    elif args.kind == "copy":
        r = harness.measure_copy_reuse_rate(args.trials, args.seed, args.pac_bits, args.control,
                                            args.workers)
        out = r.to_dict()
        out["collision_fixture"] = harness.collision_fixture(args.seed, args.pac_bits)
        return out
    elif args.kind == "dangle":
        r = harness.measure_dangling_reuse(args.trials, args.seed, args.pac_bits, args.fixed_tag,
                                           args.workers)
    else:
        return harness.bench_ops(args.iterations, args.seed)
    return r.to_dict()


def cmd_experiment(args) -> int:
    if args.kind != "bench" and args.trials < 1:
        raise UsageError("--trials must be positive")
    res = _experiment(args)
    if args.kind == "bench":
        for k, v in res["ops_ns"].items():
            print(f"{k:22s} {v:10.1f} ns")
        _emit_json(res, args.json)
        return 0
    print(f"{res['experiment']}: {res['accepted']}/{res['trials']} accepted, rate={res['rate']:.3g} "
          f"expected={res['expected']:.3g} z={res['z']:.2f} within 3σ={res['within_3sigma']}")
    if "missing_tag_rate" in res["extra"]:
        print(f"  missing-tag rate {res['extra']['missing_tag_rate']}")
    _emit_json(res, args.json)
    ok = res["within_4sigma"]
    if args.kind == "dangle":
        ok = ok and res["extra"]["missing_tag_rate"] == 1.0
    if args.kind == "copy":
        ok = ok and res["collision_fixture"]["rate"] == 1.0
    return 0 if ok else 1


def stats_table(programs: List[Program], levels, ovwrt: bool = False) -> List[dict]:
    rows = []
    for prog in programs:
        sites = {}
        for lv in levels:
            inst = instrument(prog, level=lv, opts=InstrumentOptions(ovwrt=ovwrt))
            sites[lv] = insertion_sites(inst)
            rows.append({"program": prog.name, "level": lv, **emit_stats(inst).to_dict()})
        mono = all(sites[a] <= sites[b] for a, b in zip(levels, levels[1:]))
        for r in rows[-len(levels):]:
            r["monotone"] = mono
    return rows


def cmd_stats(args) -> int:
    progs = [bundled.load(p) for p in args.programs] if args.programs else list(bundled.load_corpus().values())
    levels = LEVELS if args.level == "all" else (args.level,)
    rows = stats_table(progs, levels, args.ovwrt)
    cols = ["pct_add_tag", "pct_sign", "pct_auth", "pct_rm_tag", "protected_load_pct", "protected_store_pct"]
    print(f"{'program':18s} {'level':7s} " + " ".join(f"{c:>10s}" for c in
                                                    ("add_tag", "sign", "auth", "rm_tag", "ld%", "st%")))
    for r in rows:
        print(f"{r['program']:18s} {r['level']:7s} " + " ".join(f"{r[c]:>10}" for c in cols))
    _emit_json(rows, args.json)
    return 0 if all(r["monotone"] for r in rows) else 1


def cmd_bench(args) -> int:
    res = harness.bench_ops(args.iterations, args.seed)
    for k, v in res["ops_ns"].items():
        print(f"{k:22s} {v:10.1f} ns")
    ov = res["ovwrt_loop"]
    print(f"loop benchmark pct_sign: {ov['baseline']['counts']['pct_sign']} -> "
          f"{ov['ovwrt']['counts']['pct_sign']} with OVWRT")
    _emit_json(res, args.json)
    return 0


def cmd_report(args) -> int:
    from . import plotting

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for bits in (1, 4, 8, 16):
        results.append(harness.measure_forgery_rate(args.trials, args.seed, bits).to_dict())
        results.append(harness.measure_copy_reuse_rate(args.trials, args.seed, bits).to_dict())
        results.append(harness.measure_dangling_reuse(args.trials, args.seed, bits).to_dict())
    fields = ["experiment", "pac_bits", "trials", "accepted", "rate", "expected", "z",
              "within_3sigma", "within_4sigma"]
    with open(out / "experiments.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(results)
    matrix = scenarios.matrix(args.seed)
    with open(out / "scenarios.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        modes = list(scenarios.MODES)
        w.writerow(["scenario"] + modes)
        for name, row in matrix.items():
            w.writerow([name] + [row[m] for m in modes])
    stats = stats_table(list(bundled.load_corpus().values()), LEVELS)
    with open(out / "stats.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(stats[0]))
        w.writeheader()
        w.writerows(stats)
    bench = harness.bench_ops(args.iterations, args.seed)
    figures = [
        plotting.plot_acceptance(results, out / "acceptance.png"),
        plotting.plot_scenario_matrix(matrix, out / "scenarios.png"),
        plotting.plot_lookup_curve(bench["store_lookup_curve"], out / "store_lookup.png"),
        plotting.plot_op_costs(bench["ops_ns"], out / "op_costs.png"),
    ]
    summary = {"experiments": results, "scenarios": matrix, "bench": bench,
               "figures": [str(f) for f in figures]}
    (out / "report.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    for f in sorted(out.iterdir()):
        print(f)
    _emit_json(summary, args.json)
    bad = [r for r in results if not r["within_4sigma"]]
    bad += [1 for n, row in matrix.items() for m, v in scenarios.REGISTRY[n].expected.items()
            if row[m] != v.value]
    return 1 if bad else 0


COMMANDS = {"instrument": cmd_instrument, "run": cmd_run, "scenarios": cmd_scenarios,
            "experiment": cmd_experiment, "stats": cmd_stats, "bench": cmd_bench, "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            cfg = _read_config(args.config)
            sub = parser._subparsers._group_actions[0].choices[args.command]
            known = {a.dest for a in sub._actions}
            unknown = set(cfg) - known
            if unknown:
                raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
            sub.set_defaults(**cfg)
            args = parser.parse_args(argv)
        if getattr(args, "json", None) == "-":
            # keep stdout pure JSON; the human-readable text goes to stderr
            global _json_out
            _json_out = sys.stdout
            try:
                with contextlib.redirect_stdout(sys.stderr):
                    return COMMANDS[args.command](args)
            finally:
                _json_out = None
        return COMMANDS[args.command](args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except (UsageError, ParseError, CycleError, FileNotFoundError, scenarios.UnknownScenario,
            ValueError) as e:
        print(f"pactight: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
