"""Sparse probabilistic PCA via mean-field coordinate ascent.

Model: rows ``X_n`` of an N x P data matrix are generated from K latent
scores with a loading matrix ``W`` carrying a spike-and-slab prior::

    W_pk ~ p0 * delta_0 + (1 - p0) * N(0, sigma_1_2)
    Z_n ~ N(0, I_K)
    X_n | Z_n, W ~ N(W Z_n, sigma_e2 * I_P)

``fit_ppca_sparse`` keeps the prior intact with spike-and-slab factors on
the loadings; ``fit_ppca_naive`` is the auxiliary-indicator scheme with a
small spike variance ``sigma_0_2`` (for small values it collapses onto
plain Gaussian-prior probabilistic PCA, dense loadings and all).

Each sweep first refreshes the loading moments and updates the score
posterior (one shared covariance; the per-row means are independent given
the loading moments, so the matrix form equals the sequential update), then
walks the loading entries column by column.  Entry ``(p, k)`` touches only
row ``p`` and the frozen score moments, so updating a whole column at once
is arithmetically identical to the sequential (p-major) visit order.  The
per-sweep cost is dominated by the two N x P matrix products.

The score second moments enter the loading updates through
``M = mu_z' mu_z + N * cov_z`` (the summed E[Z Z']), and the loading second
moments enter the score update through the exact spike-and-slab rule
``E[W_pk^2] = (1 - psi)(mu^2 + s2)``; both are required for the coordinate
updates to be exact maximizers, which is what makes the ELBO trace
monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, xlogy

from .errors import (
    AbsoluteContinuityError,
    NumericalDivergenceError,
    RankDeficientError,
)

__all__ = [
    "PpcaProblem",
    "PpcaPosterior",
    "PpcaFitResult",
    "ppca_init",
    "fit_ppca_sparse",
    "fit_ppca_naive",
    "elbo_ppca",
    "expected_loadings",
    "reconstruct",
]

_INIT_SPIKE_PROB = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PpcaProblem:
    """Data matrix plus fixed hyperparameters (none are learned)."""

    data: np.ndarray
    k: int
    sigma_e2: float
    sigma_1_2: float
    p0: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError("data must be a 2-D array")
        if not np.all(np.isfinite(data)):
            raise ValueError("data entries must be finite")
        if not 1 <= self.k <= min(data.shape):
            raise ValueError(f"k={self.k} must lie in [1, min(N, P)={min(data.shape)}]")
        if self.sigma_e2 <= 0.0 or self.sigma_1_2 <= 0.0:
            raise ValueError("sigma_e2 and sigma_1_2 must be positive")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    @property
    def p_dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PpcaPosterior:
    """Factorized posterior over scores and loadings.

    ``cov_z`` is shared across rows because the score-covariance update has
    no row dependence.  ``psi_w`` is the spike probability of the
    spike-and-slab factors in the sparse scheme and q(indicator = spike) in
    the naive scheme; the naive scheme's loading factor is a plain Gaussian,
    so its loading mean is ``mu_w`` with no psi weighting.
    """

    mu_z: np.ndarray
    cov_z: np.ndarray
    mu_w: np.ndarray
    s2_w: np.ndarray
    psi_w: np.ndarray

    def __post_init__(self):
        mu_z = np.asarray(self.mu_z, dtype=np.float64)
        cov_z = np.asarray(self.cov_z, dtype=np.float64)
        mu_w = np.asarray(self.mu_w, dtype=np.float64)
        s2_w = np.asarray(self.s2_w, dtype=np.float64)
        psi_w = np.asarray(self.psi_w, dtype=np.float64)
        k = mu_z.shape[1] if mu_z.ndim == 2 else -1
        if k < 1 or cov_z.shape != (k, k):
            raise ValueError("mu_z must be (N, K) with cov_z (K, K)")
        if mu_w.shape != s2_w.shape or mu_w.shape != psi_w.shape \
                or mu_w.ndim != 2 or mu_w.shape[1] != k:
            raise ValueError("mu_w, s2_w, psi_w must share shape (P, K)")
        if not np.allclose(cov_z, cov_z.T, atol=1e-10, rtol=0.0):
            raise ValueError("cov_z must be symmetric")
        try:
            np.linalg.cholesky(cov_z)
        except np.linalg.LinAlgError as exc:
            raise ValueError("cov_z must be positive definite") from exc
        if np.any(s2_w <= 0.0):
            raise ValueError("s2_w entries must be positive")
        if np.any(psi_w < 0.0) or np.any(psi_w > 1.0):
            raise ValueError("psi_w entries must lie in [0, 1]")
        for name, arr in (("mu_z", mu_z), ("cov_z", cov_z), ("mu_w", mu_w),
                          ("s2_w", s2_w), ("psi_w", psi_w)):
            object.__setattr__(self, name, _readonly(arr))


@dataclass(frozen=True)
class PpcaFitResult:
    """A posterior together with its per-sweep ELBO trace."""

    posterior: PpcaPosterior
    elbo_trace: np.ndarray
    scheme: str
    sigma_0_2: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "elbo_trace",
                           _readonly(np.asarray(self.elbo_trace, dtype=np.float64)))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def svd_sign_fixed(data: np.ndarray, k: int):
    """Thin SVD with a deterministic sign convention.

    For each of the first ``k`` singular triplets the left vector's
    largest-magnitude entry is made positive (the right vector is co-flipped
    to preserve the product), which makes runs comparable across platforms.

    Raises
    ------
    RankDeficientError
        If the numerical rank of ``data`` is below ``k``.
    """
    u, s, vt = np.linalg.svd(np.asarray(data, dtype=np.float64), full_matrices=False)
    tol = max(data.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    if s.size < k or s[k - 1] <= tol:
        raise RankDeficientError(
            f"data has numerical rank < {k} (singular values {s[:k]})")
    u = u[:, :k].copy()
    vt = vt[:k].copy()
    for j in range(k):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            vt[j] = -vt[j]
    return u, s[:k].copy(), vt


def ppca_init(problem: PpcaProblem) -> PpcaPosterior:
    """SVD-based starting point shared by both schemes.

    Scores start at the left singular vectors, loadings at the right
    singular vectors scaled by the singular values, the score covariance at
    the identity, the loading variances at 1 and every spike probability at
    1e-10.
    """
    u, s, vt = svd_sign_fixed(problem.data, problem.k)
    p = problem.p_dim
    return PpcaPosterior(
        mu_z=u,
        cov_z=np.eye(problem.k),
        mu_w=vt.T * s,
        s2_w=np.ones((p, problem.k)),
        psi_w=np.full((p, problem.k), _INIT_SPIKE_PROB),
    )


# ---------------------------------------------------------------------------
# moments, ELBO, reconstruction
# ---------------------------------------------------------------------------

def _loading_moments(mu_w, s2_w, psi_w, scheme):
    if scheme == "sparse":
        keep = 1.0 - psi_w
        return keep * mu_w, keep * (mu_w ** 2 + s2_w)
    return mu_w, mu_w ** 2 + s2_w


def expected_loadings(posterior: PpcaPosterior, scheme: str = "sparse") -> np.ndarray:
    """Posterior-mean loading matrix E[W] under the scheme's moment rule."""
    if scheme not in ("sparse", "naive"):
        raise ValueError(f"unknown scheme {scheme!r}")
    ew, _ = _loading_moments(posterior.mu_w, posterior.s2_w, posterior.psi_w, scheme)
    return ew


def reconstruct(posterior: PpcaPosterior, scheme: str = "sparse") -> np.ndarray:
    """Posterior-mean reconstruction ``E[Z] E[W]'`` (mean-field independence)."""
    return posterior.mu_z @ expected_loadings(posterior, scheme).T


def elbo_ppca(problem: PpcaProblem, posterior: PpcaPosterior, scheme: str,
              sigma_0_2: Optional[float] = None) -> float:
    """Evidence lower bound; no constants are dropped for this model.

    Raises
    ------
    AbsoluteContinuityError
        For the naive scheme with ``sigma_0_2 <= 0``.
    """
    x = problem.data
    n, p = x.shape
    k = problem.k
    se2 = problem.sigma_e2
    mu_z, cov_z = posterior.mu_z, posterior.cov_z
    mu_w, s2_w, psi_w = posterior.mu_w, posterior.s2_w, posterior.psi_w
    if mu_z.shape != (n, k) or mu_w.shape != (p, k):
        raise ValueError("posterior shapes do not match problem")
    if scheme == "naive" and (sigma_0_2 is None or sigma_0_2 <= 0.0):
        raise AbsoluteContinuityError(
            "naive ELBO needs sigma_0_2 > 0: the Gaussian factor is not "
            "absolutely continuous with respect to a zero-variance spike")
    if scheme not in ("sparse", "naive"):
        raise ValueError(f"unknown scheme {scheme!r}")

    ew, ew2 = _loading_moments(mu_w, s2_w, psi_w, scheme)
    ewtw = ew.T @ ew
    np.fill_diagonal(ewtw, ew2.sum(axis=0))
    m = mu_z.T @ mu_z + n * cov_z
    resid = float((x * x).sum() - 2.0 * ((x.T @ mu_z) * ew).sum() + (ewtw * m).sum())
    log_lik = -0.5 * n * p * math.log(2.0 * math.pi * se2) - resid / (2.0 * se2)

    sign, logdet = np.linalg.slogdet(cov_z)
    kl_z = 0.5 * (n * float(np.trace(cov_z)) + float((mu_z ** 2).sum())
                  - n * k - n * logdet)

    p0, s12 = problem.p0, problem.sigma_1_2
    bern = xlogy(psi_w, psi_w) - xlogy(psi_w, p0) \
        + xlogy(1.0 - psi_w, 1.0 - psi_w) - xlogy(1.0 - psi_w, 1.0 - p0)
    if scheme == "sparse":
        gauss = 0.5 * (np.log(s12 / s2_w) + (s2_w + mu_w ** 2) / s12 - 1.0)
        kl_w = float(np.sum(bern + (1.0 - psi_w) * gauss))
    else:
        m2 = mu_w ** 2 + s2_w
        cond = -0.5 * np.log(s2_w) - 0.5 \
            + psi_w * (0.5 * math.log(sigma_0_2) + m2 / (2.0 * sigma_0_2)) \
            + (1.0 - psi_w) * (0.5 * math.log(s12) + m2 / (2.0 * s12))
        kl_w = float(np.sum(bern + cond))
    return log_lik - kl_z - kl_w


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _check_finite_wk(mu_w, psi_w):
    bad = ~(np.isfinite(mu_w) & np.isfinite(psi_w))
    if bad.any():
        loc = np.argwhere(bad)[0]
        raise NumericalDivergenceError("non-finite loading update",
                                       location=(int(loc[0]), int(loc[1])))


def _fit_ppca(problem: PpcaProblem, scheme: str, sigma_0_2: Optional[float],
              sweeps: int, elbo_rtol: Optional[float]) -> PpcaFitResult:
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    x = problem.data
    n, p = x.shape
    k = problem.k
    se2, s12, p0 = problem.sigma_e2, problem.sigma_1_2, problem.p0
    logit_p0 = math.log(p0) - math.log1p(-p0)
    if scheme == "naive":
        dlog = math.log(sigma_0_2) - math.log(s12)
        dprec = 1.0 / sigma_0_2 - 1.0 / s12

    start = ppca_init(problem)
    mu_z = np.array(start.mu_z)
    cov_z = np.array(start.cov_z)
    mu_w = np.array(start.mu_w)
    s2_w = np.array(start.s2_w)
    psi_w = np.array(start.psi_w)
    eye = np.eye(k)

    trace = []
    for sweep in range(1, sweeps + 1):
        ew, ew2 = _loading_moments(mu_w, s2_w, psi_w, scheme)
        ew = np.ascontiguousarray(ew)
        ewtw = ew.T @ ew
        np.fill_diagonal(ewtw, ew2.sum(axis=0))
        cov_z = np.linalg.inv(eye + ewtw / se2)
        cov_z = 0.5 * (cov_z + cov_z.T)
        mu_z = x @ ew @ cov_z / se2

        m = mu_z.T @ mu_z + n * cov_z
        c = x.T @ mu_z
        for j in range(k):
            # within the column, other columns' E[W] are read fresh
            cross = ew @ m[:, j] - ew[:, j] * m[j, j]
            b = (c[:, j] - cross) / se2
            if scheme == "sparse":
                s2_col = 1.0 / (m[j, j] / se2 + 1.0 / s12)
                mu_col = s2_col * b
                psi_col = expit(logit_p0 + 0.5 * math.log(s12 / s2_col)
                                - mu_col ** 2 / (2.0 * s2_col))
                ew[:, j] = (1.0 - psi_col) * mu_col
            else:
                # indicator first (from the current Gaussian factor), then W
                m2_old = mu_w[:, j] ** 2 + s2_w[:, j]
                psi_col = expit(logit_p0 - 0.5 * dlog - 0.5 * m2_old * dprec)
                s2_col = 1.0 / (m[j, j] / se2 + psi_col / sigma_0_2
                                + (1.0 - psi_col) / s12)
                mu_col = s2_col * b
                ew[:, j] = mu_col
            mu_w[:, j] = mu_col
            s2_w[:, j] = s2_col
            psi_w[:, j] = psi_col
        _check_finite_wk(mu_w, psi_w)

        posterior = PpcaPosterior(mu_z, cov_z, mu_w, s2_w, psi_w)
        trace.append(elbo_ppca(problem, posterior, scheme, sigma_0_2))
        if elbo_rtol is not None and sweep > 1:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) <= elbo_rtol * max(1.0, abs(prev)):
                break
    return PpcaFitResult(posterior, np.asarray(trace), scheme, sigma_0_2)


def fit_ppca_sparse(problem: PpcaProblem, sweeps: int = 250,
                    elbo_rtol: Optional[float] = None) -> PpcaFitResult:
    """Spike-and-slab loadings fitted for a fixed number of sweeps.

    Per sweep: recompute E[W] and E[W'W], update the shared score
    covariance and every score mean, then per loading entry set the slab
    variance, the slab mean and the spike probability in that order (the
    conjugate posterior given everything else).  O(N P K^2) per sweep.
    ``elbo_rtol`` enables an optional relative-ELBO early exit, off by
    default to match the fixed-sweep protocol.
    """
    return _fit_ppca(problem, "sparse", None, sweeps, elbo_rtol)


def fit_ppca_naive(problem: PpcaProblem, sigma_0_2: float, sweeps: int = 250,
                   elbo_rtol: Optional[float] = None) -> PpcaFitResult:
    """Auxiliary-indicator loadings with spike variance ``sigma_0_2``.

    Same sweep structure as the sparse scheme except that per entry the
    indicator probability is updated first (from the current Gaussian
    factor's second moment, in log space) and the Gaussian factor second,
    and the loading mean carries no psi weighting.

    Raises
    ------
    AbsoluteContinuityError
        If ``sigma_0_2 <= 0``.
    """
    if sigma_0_2 <= 0.0:
        raise AbsoluteContinuityError(
            "sigma_0_2 must be positive: the Gaussian loading factor is not "
            "absolutely continuous with respect to a zero-variance spike, "
            "so its KL term is undefined")
    return _fit_ppca(problem, "naive", sigma_0_2, sweeps, elbo_rtol)
