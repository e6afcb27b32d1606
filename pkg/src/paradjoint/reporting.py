"""Result files: delimited CSV output plus rendered figures.

Every report lands as a CSV (the machine-readable record) with a PNG figure
rendered next to it. Timing columns are wall-clock and therefore vary between
runs; all other columns are deterministic for a fixed config and seed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# anything derived from wall-clock measurement, including speedups computed
# from a measured timing profile
TIMING_COLUMNS = frozenset({
    "t_serial_s", "t_parallel_s", "s_measured", "s_predicted", "s_simulated",
    "wallclock_s", "t_start_wall", "t_end_wall",
})


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(
                f"row with {len(row)} fields does not fit the "
                f"{len(header)}-column schema of {path.name}"
            )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def strip_timing_columns(path: str | Path) -> list[list[str]]:
    """Rows with wall-clock columns removed, for determinism comparisons."""
    header, rows = read_csv(path)
    keep = [i for i, name in enumerate(header) if name not in TIMING_COLUMNS]
    return [[header[i] for i in keep]] + [[row[i] for i in keep] for row in rows]


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def plot_speedup_curves(
    path: str | Path,
    series: dict[str, dict[str, list[float]]],
    title: str = "speedup vs workers",
) -> Path:
    """One saturating curve per series; keys: N, s_predicted, s_measured, s_max."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, data in series.items():
        n = np.asarray(data["N"], dtype=float)
        if "s_predicted" in data:
            ax.plot(n, data["s_predicted"], "o-", label=f"{label} predicted")
        if data.get("s_simulated") is not None:
            ax.plot(n, data["s_simulated"], "s--", alpha=0.7,
                    label=f"{label} simulated")
        if data.get("s_measured") is not None:
            ax.plot(n, data["s_measured"], "x:", label=f"{label} measured")
        if data.get("s_max") is not None:
            ax.axhline(data["s_max"], color="grey", lw=0.8, ls=":")
    ax.set_xlabel("workers N")
    ax.set_ylabel("speedup s")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_gradient_errors(
    path: str | Path, rows: list[tuple[int, float]], title: str
) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    n = [r[0] for r in rows]
    err = [r[1] for r in rows]
    ax.semilogy(n, err, "o-")
    ax.set_xlabel("workers N")
    ax.set_ylabel("relative gradient error")
    ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)


def plot_convergence(path: str | Path, J_history: list[float], title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.semilogy(np.arange(len(J_history)), J_history, "o-")
    ax.set_xlabel("descent step")
    ax.set_ylabel("cost J")
    ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)


def plot_gantt(path: str | Path, events, title: str = "worker timeline") -> Path:
    """Overlap chart from (worker, phase, start, end) event records."""
    fig, ax = plt.subplots(figsize=(7.0, 3.8))
    colors = {"direct": "C0", "adjoint_inhom": "C1", "adjoint_hom": "C2"}
    t0 = min(e.wall_start for e in events) if events else 0.0
    seen = set()
    for e in events:
        color = colors.get(e.phase.split("_final")[0], "C3")
        label = e.phase if e.phase not in seen else None
        seen.add(e.phase)
        ax.barh(e.worker, e.wall_end - e.wall_start, left=e.wall_start - t0,
                height=0.6, color=color, label=label, edgecolor="black", lw=0.3)
    ax.set_xlabel("wall time [s]")
    ax.set_ylabel("worker")
    ax.set_title(title)
    if seen:
        ax.legend(fontsize=8)
    return _finish(fig, path)
