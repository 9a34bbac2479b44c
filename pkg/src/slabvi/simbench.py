"""Seeded simulation, baseline estimators, metrics, and replicate runners.

Reproduces the two quantitative comparisons: spike-and-slab regression from
summary statistics on correlation matrices drawn from a scaled Wishart, and
sparse probabilistic PCA on high-dimensional clustered data.

Randomness is counter-based (Philox) with one substream per
(kind, replicate, grid index), derived from the master seed through a
``SeedSequence`` spawn key.  Fits never consume randomness, so adding
methods can never perturb the data draws, and identical configs replay
byte-identical record streams.  Replicates are embarrassingly parallel in
principle; the runners here are sequential and emit records sorted by
(grid value, replicate, method) so any future parallel driver has a
canonical order to match.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import CorrelationUndefinedError, SingularMatrixError, SlabVIError
from .gls import GlsProblem, fit_gls_naive, fit_gls_sparse
from .ppca import (
    PpcaProblem,
    fit_ppca_naive,
    fit_ppca_sparse,
    reconstruct,
    svd_sign_fixed,
)

__all__ = [
    "GlsSimConfig",
    "PpcaSimConfig",
    "BenchmarkRecord",
    "simulate_gls",
    "simulate_ppca",
    "center_and_scale",
    "baseline_raw",
    "baseline_mle",
    "classical_pca",
    "oracle_pca",
    "metric_mse",
    "metric_corr",
    "metric_reconstruction",
    "iter_gls_benchmark",
    "iter_ppca_benchmark",
    "run_gls_benchmark",
    "run_ppca_benchmark",
]


# ---------------------------------------------------------------------------
# configs and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlsSimConfig:
    """Protocol for the summary-statistics experiment.

    Defaults encode the full-scale protocol: P = 1000, correlation matrices
    from a Wishart with identity scale and P degrees of freedom divided by
    the degrees of freedom, prior spike mass 0.99, slab variance 1, noise
    variances spanning 0.05 to 1.0, 100 replicates per noise level, and the
    naive scheme run at spike variances {1, 1e-2, 1e-4, 1e-10}.
    """

    p_dim: int = 1000
    p0: float = 0.99
    sigma_1_2: float = 1.0
    sigma_e2_grid: Tuple[float, ...] = (0.05, 0.25, 0.5, 1.0)
    wishart_df: int = 1000
    replicates: int = 100
    seed: int = 0
    sigma_0_2_grid: Tuple[float, ...] = (1.0, 1e-2, 1e-4, 1e-10)
    sweeps: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        if self.wishart_df < self.p_dim:
            raise ValueError("wishart_df must be >= p_dim for almost-sure "
                             "positive definiteness")
        if self.replicates < 1 or self.p_dim < 1:
            raise ValueError("replicates and p_dim must be positive")
        object.__setattr__(self, "sigma_e2_grid", tuple(float(v) for v in self.sigma_e2_grid))
        object.__setattr__(self, "sigma_0_2_grid", tuple(float(v) for v in self.sigma_0_2_grid))


@dataclass(frozen=True)
class PpcaSimConfig:
    """Protocol for the sparse-PCA experiment.

    Defaults encode the full-scale protocol: 500 observations in 10000
    dimensions split into clusters of 200/200/50/50, 100 informative
    dimensions with cluster means drawn from a standard normal, slab
    variance 0.5, unit noise variance, spike mass 1 - 100/10000, K = 2,
    250 sweeps, five replicates.  The naive spike-variance grid default
    (0.05, 1e-8) covers the best-performing naive setting and the
    collapse-to-PCA regime.
    """

    n: int = 500
    p: int = 10000
    cluster_sizes: Tuple[int, ...] = (200, 200, 50, 50)
    informative_dims: int = 100
    k_fit: int = 2
    sigma_1_2: float = 0.5
    sigma_e2: float = 1.0
    p0: float = 1.0 - 100.0 / 10000.0
    sigma_0_2_grid: Tuple[float, ...] = (0.05, 1e-8)
    replicates: int = 5
    seed: int = 0
    sweeps: int = 250

    def __post_init__(self):
        sizes = tuple(int(c) for c in self.cluster_sizes)
        if sum(sizes) != self.n:
            raise ValueError(f"cluster sizes {sizes} must sum to n={self.n}")
        if not 0 <= self.informative_dims <= self.p:
            raise ValueError("informative_dims must lie in [0, p]")
        if not 1 <= self.k_fit <= min(self.n, self.p):
            raise ValueError("k_fit must lie in [1, min(n, p)]")
        object.__setattr__(self, "cluster_sizes", sizes)
        object.__setattr__(self, "sigma_0_2_grid", tuple(float(v) for v in self.sigma_0_2_grid))


@dataclass(frozen=True)
class BenchmarkRecord:
    """One (replicate, method) outcome; failures land in ``error``."""

    replicate_id: int
    method: str
    mse: Optional[float] = None
    correlation: Optional[float] = None
    reconstruction_error: Optional[float] = None
    elbo_final: Optional[float] = None
    wall_time_ms: int = 0
    sigma_e2: Optional[float] = None
    error: Optional[str] = None

    def __post_init__(self):
        if self.mse is not None and self.mse < 0.0:
            raise ValueError("mse must be nonnegative")
        if self.correlation is not None and not -1.0 <= self.correlation <= 1.0 + 1e-12:
            raise ValueError("correlation must lie in [-1, 1]")


# ---------------------------------------------------------------------------
# substreams and simulators
# ---------------------------------------------------------------------------

_KIND_GLS = 1
_KIND_PPCA = 2


def _substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def simulate_gls(config: GlsSimConfig, replicate: int,
                 sigma_e2_index: int = 0) -> Tuple[GlsProblem, np.ndarray]:
    """Draw one summary-statistics dataset.

    The correlation matrix is ``G'G / df`` for a df x P standard-normal
    ``G`` (a Wishart draw with identity scale divided by its degrees of
    freedom), the effects are iid spike-and-slab, and the marginal
    estimates are ``X beta + sqrt(sigma_e2) * L z`` with ``X = L L'``.
    Fully determined by ``(seed, replicate, sigma_e2_index)``.
    """
    se2 = config.sigma_e2_grid[sigma_e2_index]
    rng = _substream(config.seed, _KIND_GLS, replicate, sigma_e2_index)
    p = config.p_dim
    g = rng.standard_normal((config.wishart_df, p))
    x = g.T @ g / config.wishart_df
    x = 0.5 * (x + x.T)
    spiked = rng.random(p) < config.p0
    beta = np.where(spiked, 0.0, rng.normal(0.0, np.sqrt(config.sigma_1_2), p))
    chol = np.linalg.cholesky(x)
    beta_hat = x @ beta + np.sqrt(se2) * (chol @ rng.standard_normal(p))
    problem = GlsProblem(beta_hat, x, se2, config.sigma_1_2, config.p0)
    return problem, beta


def center_and_scale(matrix: np.ndarray,
                     scale: Optional[np.ndarray] = None
                     ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise centering and unit scaling.

    Returns ``(transformed, used_scale, zero_variance_mask)``.  Columns with
    zero variance are left centered with scale 1 and flagged (that can only
    happen with a degenerate draw; the mask exists for audit).  When
    ``scale`` is given it is used instead of the empirical one.
    """
    m = np.asarray(matrix, dtype=np.float64)
    centered = m - m.mean(axis=0)
    if scale is None:
        sd = centered.std(axis=0)
    else:
        sd = np.asarray(scale, dtype=np.float64)
    zero = sd == 0.0
    safe = np.where(zero, 1.0, sd)
    return centered / safe, safe, zero


def simulate_ppca(config: PpcaSimConfig, replicate: int
                  ) -> Tuple[PpcaProblem, np.ndarray, np.ndarray]:
    """Draw one clustered high-dimensional dataset.

    The first ``informative_dims`` columns get cluster means drawn once per
    (cluster, dimension) from a standard normal; every entry then receives
    unit Gaussian noise, and the matrix is centered and scaled to unit
    column standard deviation.

    Returns ``(problem, signal, active_dims)`` where ``signal`` is the
    noiseless cluster-mean matrix expressed in the data's units: centered by
    its own column means and divided by the data's empirical column scale.
    (Scaling the signal by its *own* standard deviation would inflate it
    relative to the data's actual noiseless content, which is attenuated by
    the noise's contribution to the column scale.)
    """
    rng = _substream(config.seed, _KIND_PPCA, replicate)
    n, p, m = config.n, config.p, config.informative_dims
    labels = np.repeat(np.arange(len(config.cluster_sizes)), config.cluster_sizes)
    cluster_means = rng.standard_normal((len(config.cluster_sizes), m))
    raw = rng.standard_normal((n, p))
    raw[:, :m] += cluster_means[labels, :]
    data, data_scale, zero = center_and_scale(raw)
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-variance data columns left unscaled",
                      RuntimeWarning)
    mean_matrix = np.zeros((n, p))
    mean_matrix[:, :m] = cluster_means[labels, :]
    signal = (mean_matrix - mean_matrix.mean(axis=0)) / data_scale
    problem = PpcaProblem(data, config.k_fit, config.sigma_e2,
                          config.sigma_1_2, config.p0)
    return problem, signal, np.arange(m)


# ---------------------------------------------------------------------------
# baselines and metrics
# ---------------------------------------------------------------------------

def baseline_raw(problem: GlsProblem) -> np.ndarray:
    """The raw marginal estimates, unchanged."""
    return problem.beta_hat.copy()


def baseline_mle(problem: GlsProblem) -> np.ndarray:
    """Maximum-likelihood estimate: solve ``X b = beta_hat`` (no explicit inverse)."""
    try:
        return np.linalg.solve(problem.corr, problem.beta_hat)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("correlation matrix is singular") from exc


def classical_pca(data: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Rank-k SVD principal components with the shared sign convention.

    Returns ``(scores, loadings)``: scores are the projections ``U * S``,
    loadings the unit right singular vectors as columns.
    """
    data = np.asarray(data, dtype=np.float64)
    if not 1 <= k <= min(data.shape):
        raise ValueError("k must lie in [1, min(N, P)]")
    u, s, vt = svd_sign_fixed(data, k)
    return u * s, vt.T


def oracle_pca(data: np.ndarray, k: int,
               active_dims: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Classical PCA restricted to the truly active columns, zero-padded back."""
    data = np.asarray(data, dtype=np.float64)
    active = np.asarray(active_dims, dtype=np.intp)
    scores, sub_loadings = classical_pca(data[:, active], k)
    loadings = np.zeros((data.shape[1], k))
    loadings[active] = sub_loadings
    return scores, loadings


def metric_mse(est: np.ndarray, truth: np.ndarray) -> float:
    """Mean squared difference."""
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError("shapes differ")
    return float(np.mean((est - truth) ** 2))


def metric_corr(est: np.ndarray, truth: np.ndarray) -> float:
    """Pearson correlation; undefined when either input has zero variance."""
    est = np.asarray(est, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if est.shape != truth.shape:
        raise ValueError("shapes differ")
    ec = est - est.mean()
    tc = truth - truth.mean()
    denom = float(np.sqrt((ec ** 2).sum() * (tc ** 2).sum()))
    if denom == 0.0:
        raise CorrelationUndefinedError("an input has zero variance")
    return float(np.clip((ec @ tc) / denom, -1.0, 1.0))


def metric_reconstruction(reconstruction: np.ndarray, signal: np.ndarray) -> float:
    """Squared Frobenius norm of the difference."""
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    if reconstruction.shape != signal.shape:
        raise ValueError("shapes differ")
    return float(np.sum((reconstruction - signal) ** 2))


# ---------------------------------------------------------------------------
# benchmark runners
# ---------------------------------------------------------------------------

def _sigma0_tag(sigma_0_2: float) -> str:
    return f"naive-{sigma_0_2:g}"


def round_ms(seconds: float) -> int:
    return int(round(seconds * 1000.0))


def _gls_methods(config: GlsSimConfig):
    methods = [("sparse", lambda pr: _vi_estimate_gls(pr, "sparse", None, config))]
    for s02 in config.sigma_0_2_grid:
        methods.append((_sigma0_tag(s02),
                        lambda pr, s=s02: _vi_estimate_gls(pr, "naive", s, config)))
    methods.append(("raw", lambda pr: (baseline_raw(pr), None)))
    methods.append(("mle", lambda pr: (baseline_mle(pr), None)))
    return methods


def _vi_estimate_gls(problem, scheme, sigma_0_2, config):
    if scheme == "sparse":
        report = fit_gls_sparse(problem, config.sweeps, config.tol)
    else:
        report = fit_gls_naive(problem, sigma_0_2, config.sweeps, config.tol)
    return report.posterior_mean, float(report.elbo_trace[-1])


def iter_gls_benchmark(config: GlsSimConfig):
    """Yield records in canonical order: grid index, replicate, method name.

    VI methods are scored by their posterior mean.  Per-record failures
    (for example an undefined correlation) are captured in the record's
    ``error`` field without aborting the run.  Deterministic given the
    config.
    """
    methods = sorted(_gls_methods(config), key=lambda kv: kv[0])
    for sigma_idx, se2 in enumerate(config.sigma_e2_grid):
        for rep in range(config.replicates):
            problem, beta = simulate_gls(config, rep, sigma_idx)
            for method, estimator in methods:
                start = time.perf_counter()
                mse = corr = elbo = None
                err = None
                try:
                    est, elbo = estimator(problem)
                    mse = metric_mse(est, beta)
                    corr = metric_corr(est, beta)
                except SlabVIError as exc:
                    err = f"{type(exc).__name__}: {exc}"
                wall = round_ms(time.perf_counter() - start)
                yield BenchmarkRecord(
                    replicate_id=rep, method=method, mse=mse, correlation=corr,
                    elbo_final=elbo, wall_time_ms=wall, sigma_e2=se2, error=err)


def run_gls_benchmark(config: GlsSimConfig) -> List[BenchmarkRecord]:
    """Materialized :func:`iter_gls_benchmark`."""
    return list(iter_gls_benchmark(config))


def _score_correlation(scores: np.ndarray, reference: np.ndarray) -> float:
    # smallest |per-component correlation| against the reference scores,
    # after sign alignment (absolute value)
    vals = []
    for j in range(scores.shape[1]):
        vals.append(abs(metric_corr(scores[:, j], reference[:, j])))
    return float(min(vals))


def iter_ppca_benchmark(config: PpcaSimConfig):
    """Yield records in canonical order: replicate, method name.

    ``reconstruction_error`` is against the noiseless signal;
    ``correlation`` is the smallest absolute per-component score correlation
    with classical PCA (sign-aligned), and ``mse`` the per-entry mean of the
    reconstruction error.
    """
    for rep in range(config.replicates):
        problem, signal, active = simulate_ppca(config, rep)
        ref_scores, _ = classical_pca(problem.data, config.k_fit)
        cells = problem.data.size

        def run_classical():
            scores, loadings = classical_pca(problem.data, config.k_fit)
            return scores @ loadings.T, scores, None

        def run_oracle():
            scores, loadings = oracle_pca(problem.data, config.k_fit, active)
            return scores @ loadings.T, scores, None

        def run_sparse():
            fit = fit_ppca_sparse(problem, config.sweeps)
            return (reconstruct(fit.posterior, "sparse"), fit.posterior.mu_z,
                    float(fit.elbo_trace[-1]))

        def make_naive(s02):
            def run_naive():
                fit = fit_ppca_naive(problem, s02, config.sweeps)
                return (reconstruct(fit.posterior, "naive"), fit.posterior.mu_z,
                        float(fit.elbo_trace[-1]))
            return run_naive

        runners = [("classical", run_classical), ("oracle", run_oracle),
                   ("sparse", run_sparse)]
        runners += [(_sigma0_tag(s02), make_naive(s02))
                    for s02 in config.sigma_0_2_grid]
        for method, runner in sorted(runners, key=lambda kv: kv[0]):
            start = time.perf_counter()
            mse = corr = rec_err = elbo = None
            err = None
            try:
                recon, scores, elbo = runner()
                rec_err = metric_reconstruction(recon, signal)
                mse = rec_err / cells
                corr = _score_correlation(scores, ref_scores)
            except SlabVIError as exc:
                err = f"{type(exc).__name__}: {exc}"
            wall = round_ms(time.perf_counter() - start)
            yield BenchmarkRecord(
                replicate_id=rep, method=method, mse=mse, correlation=corr,
                reconstruction_error=rec_err, elbo_final=elbo,
                wall_time_ms=wall, error=err)


def run_ppca_benchmark(config: PpcaSimConfig) -> List[BenchmarkRecord]:
    """Materialized :func:`iter_ppca_benchmark`."""
    return list(iter_ppca_benchmark(config))
