"""Command-line interface.

Subcommands: ``fit-gls``, ``fit-ppca``, ``bench-gls``, ``bench-ppca`` and
``threshold-curve``.  Every successful run writes a ``manifest.json`` next
to its outputs recording the command, the fully resolved configuration and
its content digest, the seed, the tool version and start/end timestamps;
rerunning with the same manifest inputs reproduces the data files byte for
byte (wall-clock timing columns excepted).

Configuration precedence for the bench commands: built-in defaults, then
``--preset``, then ``--config`` (a YAML file whose keys mirror the config
dataclass fields), then individual flags.

Exit codes: 0 success, 2 malformed input or configuration, 3 numerical
divergence during fitting.  An interrupt while records are streaming leaves
the partial CSV terminated by a truncation marker line.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .errors import (
    AbsoluteContinuityError,
    CorrelationUndefinedError,
    InputFormatError,
    NumericalDivergenceError,
    RankDeficientError,
    SingularMatrixError,
    SlabVIError,
)
from .gls import (
    GLS_ELBO_DROPPED_TERMS,
    GlsProblem,
    fit_gls_naive,
    fit_gls_sparse,
    threshold_curve,
)
from .ppca import PpcaProblem, expected_loadings, fit_ppca_naive, fit_ppca_sparse
from .report import (
    GLS_RECORD_COLUMNS,
    PPCA_RECORD_COLUMNS,
    TRUNCATION_MARKER,
    fmt,
    gls_record_rows,
    ppca_record_rows,
    render_elbo_trace_figure,
    render_gls_benchmark_figure,
    render_ppca_benchmark_figure,
    render_threshold_figure,
    summarize,
    write_csv,
    write_summary_csv,
)
from .simbench import (
    GlsSimConfig,
    PpcaSimConfig,
    iter_gls_benchmark,
    iter_ppca_benchmark,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_INTERRUPT = 130

_INPUT_ERRORS = (InputFormatError, AbsoluteContinuityError, RankDeficientError,
                 SingularMatrixError, CorrelationUndefinedError, ValueError,
                 OSError, KeyError)

GLS_PRESETS = {
    "smoke": dict(p_dim=50, wishart_df=50, replicates=3, p0=0.9,
                  sigma_e2_grid=(0.5,), sigma_0_2_grid=(1.0, 1e-4), sweeps=50),
    "paper": {},
}
PPCA_PRESETS = {
    "smoke": dict(n=80, p=120, cluster_sizes=(30, 30, 10, 10),
                  informative_dims=12, k_fit=2, p0=1.0 - 12.0 / 120.0,
                  replicates=2, sweeps=60),
    "paper": {},
}


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _config_digest(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_manifest(out_dir: Path, command: str, resolved_config: dict,
                   seed: Optional[int], started: str,
                   extra: Optional[dict] = None) -> None:
    resolved = {k: _jsonable(v) for k, v in resolved_config.items()}
    manifest = {
        "command": command,
        "config": resolved,
        "config_digest": _config_digest(resolved),
        "seed": seed,
        "tool_version": __version__,
        "started_at": started,
        "finished_at": _utc_now(),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_vector(path: str) -> np.ndarray:
    try:
        values = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    values.append(float(line))
                except ValueError as exc:
                    raise InputFormatError(
                        f"{path}:{lineno}: not a number: {line!r}") from exc
        if not values:
            raise InputFormatError(f"{path}: empty vector file")
        return np.asarray(values)
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc}") from exc


def _load_matrix(path: str) -> np.ndarray:
    try:
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append([float(tok) for tok in line.split(",")])
                except ValueError as exc:
                    raise InputFormatError(
                        f"{path}:{lineno}: not a CSV row of numbers") from exc
        if not rows:
            raise InputFormatError(f"{path}: empty matrix file")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise InputFormatError(f"{path}: ragged rows (widths {sorted(widths)})")
        return np.asarray(rows)
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc}") from exc


def _resolve_config(cls, preset_table, args, flag_fields) -> object:
    merged = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
    if args.preset:
        merged.update(preset_table[args.preset])
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InputFormatError(f"cannot load config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InputFormatError(f"{args.config}: top level must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(loaded) - known
        if unknown:
            raise InputFormatError(
                f"{args.config}: unknown keys {sorted(unknown)}; valid keys are "
                f"{sorted(known)}")
        merged.update(loaded)
    for field in flag_fields:
        value = getattr(args, field, None)
        if value is not None:
            merged[field] = value
    for key in ("sigma_e2_grid", "sigma_0_2_grid", "cluster_sizes"):
        if key in merged and isinstance(merged[key], list):
            merged[key] = tuple(merged[key])
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise InputFormatError(f"invalid configuration: {exc}") from exc


def _stream_records(path: Path, header, records, to_row):
    """Write records as they arrive; a truncation marker marks interrupts."""
    written = []
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        try:
            for record in records:
                row = to_row([record])[0]
                fh.write(",".join(fmt(v) for v in row) + "\n")
                written.append(record)
        except KeyboardInterrupt:
            fh.write(TRUNCATION_MARKER + "\n")
            raise
    return written


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_fit_gls(args) -> int:
    started = _utc_now()
    beta_hat = _load_vector(args.beta_hat)
    corr = _load_matrix(args.corr)
    try:
        problem = GlsProblem(beta_hat, corr, args.sigma_e2, args.sigma1, args.p0)
    except ValueError as exc:
        raise InputFormatError(str(exc)) from exc
    if args.scheme == "naive":
        if args.sigma0 is None:
            raise InputFormatError("--scheme naive requires --sigma0")
        report = fit_gls_naive(problem, args.sigma0, args.sweeps, args.tol)
    else:
        report = fit_gls_sparse(problem, args.sweeps, args.tol)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    post = report.posterior
    mean = report.posterior_mean
    write_csv(out / "posterior.csv",
              ["index", "psi", "mu", "s2", "post_mean"],
              [[i, post.psi[i], post.mu[i], post.s2[i], mean[i]]
               for i in range(len(mean))])
    write_csv(out / "elbo_trace.csv", ["sweep", "elbo"],
              [[i + 1, v] for i, v in enumerate(report.elbo_trace)])
    render_elbo_trace_figure(report.elbo_trace, out / "elbo_trace.png")
    resolved = dict(scheme=args.scheme, sigma0=args.sigma0, p0=args.p0,
                    sigma_e2=args.sigma_e2, sigma1=args.sigma1,
                    sweeps=args.sweeps, tol=args.tol, p_dim=problem.p_dim,
                    beta_hat=str(args.beta_hat), corr=str(args.corr))
    write_manifest(out, "fit-gls", resolved, None, started,
                   extra={"converged": report.converged,
                          "sweeps_run": report.sweeps,
                          "elbo_constants_dropped": GLS_ELBO_DROPPED_TERMS})
    return EXIT_OK


def cmd_fit_ppca(args) -> int:
    started = _utc_now()
    data = _load_matrix(args.data)
    try:
        problem = PpcaProblem(data, args.k, args.sigma_e2, args.sigma1, args.p0)
    except ValueError as exc:
        raise InputFormatError(str(exc)) from exc
    if args.scheme == "naive":
        if args.sigma0 is None:
            raise InputFormatError("--scheme naive requires --sigma0")
        fit = fit_ppca_naive(problem, args.sigma0, args.sweeps)
    else:
        fit = fit_ppca_sparse(problem, args.sweeps)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    post = fit.posterior
    ew = expected_loadings(post, fit.scheme)
    n, k = post.mu_z.shape
    write_csv(out / "scores.csv",
              ["index"] + [f"score_{j}" for j in range(k)],
              [[i] + list(post.mu_z[i]) for i in range(n)])
    write_csv(out / "loadings.csv",
              ["index", "component", "psi", "mu", "s2", "e_w"],
              [[p, j, post.psi_w[p, j], post.mu_w[p, j], post.s2_w[p, j], ew[p, j]]
               for p in range(post.mu_w.shape[0]) for j in range(k)])
    write_csv(out / "elbo_trace.csv", ["sweep", "elbo"],
              [[i + 1, v] for i, v in enumerate(fit.elbo_trace)])
    render_elbo_trace_figure(fit.elbo_trace, out / "elbo_trace.png")
    resolved = dict(scheme=args.scheme, sigma0=args.sigma0, p0=args.p0,
                    sigma_e2=args.sigma_e2, sigma1=args.sigma1, k=args.k,
                    sweeps=args.sweeps, n_obs=problem.n_obs, p_dim=problem.p_dim,
                    data=str(args.data))
    write_manifest(out, "fit-ppca", resolved, None, started)
    return EXIT_OK


def cmd_bench_gls(args) -> int:
    started = _utc_now()
    config = _resolve_config(GlsSimConfig, GLS_PRESETS, args,
                             ("replicates", "seed"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _stream_records(out / "records.csv", GLS_RECORD_COLUMNS,
                              iter_gls_benchmark(config), gls_record_rows)
    summary = summarize(records, ("mse", "correlation"))
    write_summary_csv(out / "summary.csv", summary)
    render_gls_benchmark_figure(records, out / "benchmark.png")
    write_manifest(out, "bench-gls", dataclasses.asdict(config), config.seed,
                   started, extra={"n_records": len(records)})
    return EXIT_OK


def cmd_bench_ppca(args) -> int:
    started = _utc_now()
    config = _resolve_config(PpcaSimConfig, PPCA_PRESETS, args,
                             ("replicates", "seed"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _stream_records(out / "records.csv", PPCA_RECORD_COLUMNS,
                              iter_ppca_benchmark(config), ppca_record_rows)
    summary = summarize(records, ("mse", "correlation", "reconstruction_error"))
    write_summary_csv(out / "summary.csv", summary)
    render_ppca_benchmark_figure(records, out / "benchmark.png")
    write_manifest(out, "bench-ppca", dataclasses.asdict(config), config.seed,
                   started, extra={"n_records": len(records)})
    return EXIT_OK


def cmd_threshold_curve(args) -> int:
    started = _utc_now()
    if args.grid_step <= 0:
        raise InputFormatError("--grid-step must be positive")
    if args.grid_max < args.grid_min:
        raise InputFormatError("--grid-max must be >= --grid-min")
    if args.sigma0 is None or args.sigma0 <= 0:
        raise InputFormatError(
            "--sigma0 must be a positive spike variance: the naive factor is "
            "not absolutely continuous with respect to a zero-variance "
            "spike, so its KL is undefined")
    grid = np.arange(args.grid_min, args.grid_max + args.grid_step / 2,
                     args.grid_step)
    curve = threshold_curve(args.p0, args.sigma_e2, args.sigma1, args.sigma0,
                            grid, sweeps=args.sweeps, tol=args.tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "curve.csv",
              ["beta_hat", "naive_mean", "sparse_mean", "exact_mean"],
              [[curve.beta_hat[i], curve.naive_mean[i], curve.sparse_mean[i],
                curve.exact_mean[i]] for i in range(len(curve.beta_hat))])
    render_threshold_figure(curve, out / "curve.png")
    resolved = dict(p0=args.p0, sigma_e2=args.sigma_e2, sigma1=args.sigma1,
                    sigma0=args.sigma0, grid_min=args.grid_min,
                    grid_max=args.grid_max, grid_step=args.grid_step,
                    sweeps=args.sweeps, tol=args.tol)
    write_manifest(out, "threshold-curve", resolved, None, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(parser):
    parser.add_argument("--out", required=True, help="output directory")


def _add_fit_hyper(parser, p0_default, sigma1_default):
    parser.add_argument("--p0", type=float, default=p0_default,
                        help="prior spike mass (default %(default)s)")
    parser.add_argument("--sigma-e2", type=float, default=1.0, dest="sigma_e2",
                        help="noise variance (default %(default)s)")
    parser.add_argument("--sigma1", type=float, default=sigma1_default,
                        help="slab variance (default %(default)s)")
    parser.add_argument("--sigma0", type=float, default=None,
                        help="naive-scheme spike variance")
    parser.add_argument("--scheme", choices=("sparse", "naive"),
                        default="sparse")


def _add_bench_flags(parser, presets):
    parser.add_argument("--preset", choices=sorted(presets), default=None,
                        help="named configuration preset")
    parser.add_argument("--config", default=None,
                        help="YAML config file; keys mirror the config fields")
    parser.add_argument("--replicates", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slabvi",
        description="Spike-and-slab mean-field VI: fits, benchmarks and the "
                    "thresholding curve of the auxiliary-variable scheme.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-gls", help="fit the summary-statistics model")
    p.add_argument("--beta-hat", required=True, dest="beta_hat",
                   help="text file, one marginal estimate per line")
    p.add_argument("--corr", required=True,
                   help="dense CSV correlation matrix, no header")
    _add_fit_hyper(p, p0_default=0.99, sigma1_default=1.0)
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    _add_common(p)
    p.set_defaults(func=cmd_fit_gls)

    p = sub.add_parser("fit-ppca", help="fit sparse probabilistic PCA")
    p.add_argument("--data", required=True,
                   help="dense CSV data matrix (rows = observations), no header")
    p.add_argument("-k", "--k", type=int, default=2, help="number of components")
    _add_fit_hyper(p, p0_default=0.99, sigma1_default=0.5)
    p.add_argument("--sweeps", type=int, default=250)
    _add_common(p)
    p.set_defaults(func=cmd_fit_ppca)

    p = sub.add_parser("bench-gls", help="replicate benchmark for the "
                                         "summary-statistics model")
    _add_bench_flags(p, GLS_PRESETS)
    _add_common(p)
    p.set_defaults(func=cmd_bench_gls)

    p = sub.add_parser("bench-ppca", help="replicate benchmark for sparse PCA")
    _add_bench_flags(p, PPCA_PRESETS)
    _add_common(p)
    p.set_defaults(func=cmd_bench_ppca)

    p = sub.add_parser("threshold-curve",
                       help="posterior-mean curves of both schemes at P=1")
    p.add_argument("--p0", type=float, default=0.99)
    p.add_argument("--sigma-e2", type=float, default=1.0, dest="sigma_e2")
    p.add_argument("--sigma1", type=float, default=1.0)
    p.add_argument("--sigma0", type=float, default=1e-10)
    p.add_argument("--grid-min", type=float, default=0.0)
    p.add_argument("--grid-max", type=float, default=6.0)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-8)
    _add_common(p)
    p.set_defaults(func=cmd_threshold_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalDivergenceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SlabVIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPT


if __name__ == "__main__":
    sys.exit(main())
