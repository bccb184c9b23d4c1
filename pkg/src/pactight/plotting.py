"""Report figures, rendered with the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

VERDICT_CODES = {"ATTACK_BLOCKED": 0, "CLEAN": 1, "ATTACK_FAILED": 2, "ABORTED": 3, "ATTACK_SUCCEEDED": 4}
VERDICT_COLORS = ["#3b8b3b", "#8fbf8f", "#bbbbbb", "#e0a030", "#c03030"]


def plot_acceptance(results: List[dict], path: Path) -> Path:
    """Measured acceptance against 2^-b, one marker per experiment and PAC width."""
    fig, ax = plt.subplots(figsize=(6, 4))
    names = sorted({r["experiment"] for r in results})
    for name in names:
        rows = sorted((r for r in results if r["experiment"] == name), key=lambda r: r["pac_bits"])
        bits = [r["pac_bits"] for r in rows]
        rate = [max(r["rate"], 1e-9) for r in rows]
        err = [3 * r["sigma"] for r in rows]
        ax.errorbar(bits, rate, yerr=err, fmt="o", capsize=3, label=name)
    all_bits = sorted({r["pac_bits"] for r in results})
    ax.plot(all_bits, [2.0 ** -b for b in all_bits], "k--", lw=1, label="2^-b")
    ax.set_yscale("log")
    ax.set_xlabel("PAC bits")
    ax.set_ylabel("acceptance rate")
    ax.set_title("Accepted forgeries and copies (3σ bars)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_lookup_curve(curve: List[dict], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([c["live_entries"] for c in curve], [c["ns"] for c in curve], "o-")
    ax.set_xscale("log")
    ax.set_ylim(bottom=0)
    ax.set_xlabel("live entries")
    ax.set_ylabel("lookup cost (ns, median)")
    ax.set_title("Metadata store lookup cost")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_op_costs(ops_ns: Dict[str, float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(ops_ns)
    ax.barh(names, [ops_ns[n] for n in names], color="#4a7ab0")
    ax.set_xlabel("ns per call (median)")
    ax.set_title("Runtime operation cost")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_scenario_matrix(matrix: Dict[str, Dict[str, str]], path: Path) -> Path:
    from matplotlib.colors import ListedColormap

    scenarios = list(matrix)
    modes = list(next(iter(matrix.values())))
    grid = [[VERDICT_CODES[matrix[s][m]] for m in modes] for s in scenarios]
    fig, ax = plt.subplots(figsize=(7, 0.45 * len(scenarios) + 1.5))
    ax.imshow(grid, cmap=ListedColormap(VERDICT_COLORS), vmin=0, vmax=len(VERDICT_COLORS) - 1,
              aspect="auto")
    ax.set_xticks(range(len(modes)), modes, rotation=30, ha="right")
    ax.set_yticks(range(len(scenarios)), scenarios)
    for i, s in enumerate(scenarios):
        for j, m in enumerate(modes):
            ax.text(j, i, matrix[s][m].replace("ATTACK_", ""), ha="center", va="center", fontsize=7)
    ax.set_title("Scenario verdict by protection mode")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
