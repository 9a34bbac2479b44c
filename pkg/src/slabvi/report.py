"""Delimited output and figure rendering for the command-line reports.

CSV files are the canonical outputs: locale-independent (dot decimal
separator, LF line endings), floats written with shortest round-trip
precision so identical runs produce identical bytes.  Each report path also
renders a matplotlib figure next to its CSV; figures are a convenience view
and carry no contract.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simbench import BenchmarkRecord

GLS_RECORD_COLUMNS = ["replicate", "method", "sigma_e2", "mse", "correlation",
                      "elapsed_ms", "error"]
PPCA_RECORD_COLUMNS = ["replicate", "method", "mse", "correlation",
                       "reconstruction_error", "elapsed_ms", "error"]

#: Line appended when a run is interrupted mid-write.
TRUNCATION_MARKER = "# truncated: interrupted before completion"


def fmt(value) -> str:
    """Render a cell: shortest round-trip float formatting, empty for None."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def gls_record_rows(records: Sequence[BenchmarkRecord]) -> List[list]:
    return [[r.replicate_id, r.method, r.sigma_e2, r.mse, r.correlation,
             r.wall_time_ms, r.error] for r in records]


def ppca_record_rows(records: Sequence[BenchmarkRecord]) -> List[list]:
    return [[r.replicate_id, r.method, r.mse, r.correlation,
             r.reconstruction_error, r.wall_time_ms, r.error] for r in records]


def _quartiles(values: List[float]):
    arr = np.asarray(values)
    return (float(arr.mean()), float(np.quantile(arr, 0.25)),
            float(np.quantile(arr, 0.75)))


def summarize(records: Sequence[BenchmarkRecord],
              metrics: Sequence[str]) -> List[dict]:
    """Per (sigma_e2, method) mean and interquartile range of each metric."""
    groups: Dict[tuple, List[BenchmarkRecord]] = {}
    for r in records:
        groups.setdefault((r.sigma_e2, r.method), []).append(r)
    out = []
    for (se2, method), recs in sorted(groups.items(),
                                      key=lambda kv: (kv[0][0] is not None,
                                                      kv[0][0], kv[0][1])):
        row = {"sigma_e2": se2, "method": method,
               "n": len(recs),
               "n_failed": sum(1 for r in recs if r.error is not None)}
        for metric in metrics:
            vals = [getattr(r, metric) for r in recs
                    if r.error is None and getattr(r, metric) is not None]
            if vals:
                mean, q25, q75 = _quartiles(vals)
            else:
                mean = q25 = q75 = None
            row[f"{metric}_mean"] = mean
            row[f"{metric}_q25"] = q25
            row[f"{metric}_q75"] = q75
        out.append(row)
    return out


def write_summary_csv(path: Path, summary: List[dict]) -> None:
    if not summary:
        write_csv(path, ["sigma_e2", "method", "n", "n_failed"], [])
        return
    header = list(summary[0].keys())
    write_csv(path, header, [[row[k] for k in header] for row in summary])


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def _method_positions(methods: Sequence[str]):
    return {m: i for i, m in enumerate(methods)}


def _strip_panel(ax, records, metric, methods, offsets, log_scale=False):
    pos = _method_positions(methods)
    for r in records:
        if r.error is not None or getattr(r, metric) is None:
            continue
        x = pos[r.method] + offsets.get(r.sigma_e2, 0.0)
        ax.plot(x, getattr(r, metric), "o", ms=2.5, alpha=0.35,
                color=f"C{pos[r.method] % 10}")
    # means and interquartile whiskers per (method, sigma_e2)
    groups: Dict[tuple, List[float]] = {}
    for r in records:
        if r.error is None and getattr(r, metric) is not None:
            groups.setdefault((r.method, r.sigma_e2), []).append(getattr(r, metric))
    for (method, se2), vals in groups.items():
        mean, q25, q75 = _quartiles(vals)
        x = pos[method] + offsets.get(se2, 0.0)
        ax.vlines(x, q25, q75, color="k", lw=1.0)
        ax.hlines(mean, x - 0.08, x + 0.08, color="k", lw=1.8)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods, rotation=30, ha="right", fontsize=8)
    if log_scale:
        ax.set_yscale("log")
    ax.set_ylabel(metric)


def render_gls_benchmark_figure(records: Sequence[BenchmarkRecord],
                                path: Path) -> None:
    """Correlation and MSE per method, point clouds with mean/IQR marks."""
    methods = sorted({r.method for r in records})
    levels = sorted({r.sigma_e2 for r in records if r.sigma_e2 is not None})
    width = 0.6
    offsets = {se2: (-width / 2 + width * (i + 0.5) / max(len(levels), 1))
               for i, se2 in enumerate(levels)}
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    _strip_panel(axes[0], records, "correlation", methods, offsets)
    _strip_panel(axes[1], records, "mse", methods, offsets, log_scale=True)
    axes[0].set_title("correlation with true effects")
    axes[1].set_title("mean squared error")
    fig.suptitle("noise levels are spread left to right within each method")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_ppca_benchmark_figure(records: Sequence[BenchmarkRecord],
                                 path: Path) -> None:
    """Reconstruction error per method with mean/IQR marks."""
    methods = sorted({r.method for r in records})
    pos = _method_positions(methods)
    fig, ax = plt.subplots(figsize=(7, 4.2))
    groups: Dict[str, List[float]] = {}
    for r in records:
        if r.error is None and r.reconstruction_error is not None:
            ax.plot(pos[r.method], r.reconstruction_error, "o", ms=3, alpha=0.4,
                    color=f"C{pos[r.method] % 10}")
            groups.setdefault(r.method, []).append(r.reconstruction_error)
    for method, vals in groups.items():
        mean, q25, q75 = _quartiles(vals)
        ax.vlines(pos[method], q25, q75, color="k", lw=1.0)
        ax.hlines(mean, pos[method] - 0.12, pos[method] + 0.12, color="k", lw=1.8)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods, rotation=30, ha="right", fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("squared Frobenius reconstruction error")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_threshold_figure(curve, path: Path) -> None:
    """The three posterior-mean curves over the observed-effect grid."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    ax.plot(curve.beta_hat, curve.exact_mean, label="exact posterior", lw=2)
    ax.plot(curve.beta_hat, curve.sparse_mean, "--", label="spike-and-slab VI", lw=1.5)
    ax.plot(curve.beta_hat, curve.naive_mean, label="auxiliary-variable VI", lw=1.5)
    ax.set_xlabel("observed marginal effect")
    ax.set_ylabel("posterior mean")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_elbo_trace_figure(trace: np.ndarray, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.plot(np.arange(1, len(trace) + 1), trace, marker=".", ms=3)
    ax.set_xlabel("sweep")
    ax.set_ylabel("ELBO (constants dropped)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
