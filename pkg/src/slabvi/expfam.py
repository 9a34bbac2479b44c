"""Spike-and-slab distributions and their exponential-family mixture form.

A mixture of exponential-family components whose supports are pairwise
disjoint is itself an exponential family, and when each component's
sufficient statistics agree with those of a conjugate prior (up to an affine
map) on its own support, the mixture stays conjugate.  The practically
important instance is the spike-and-slab: a point mass at zero plus a
Gaussian restricted to the nonzero reals.  This module provides

* value types for the spike-and-slab and for general disjoint-support
  mixtures in natural-parameter form,
* moments, log densities and the natural-form conversion,
* the closed-form conjugate update of a spike-and-slab prior under a
  Gaussian-form log-likelihood ``a*x**2 + b*x + const``, and
* KL divergences used by the ELBO computations downstream.

All types are immutable values; all operations are pure functions, so
everything here is safe to call concurrently without synchronization.

Densities involving the spike are taken with respect to the mixed base
measure "atom at 0 plus Lebesgue elsewhere": at ``x == 0`` the log density
is the log of the spike mass, elsewhere it is an ordinary Gaussian log pdf
weighted by the slab mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.special import expit, xlogy

from .errors import (
    AbsoluteContinuityError,
    DegenerateMixtureError,
    OverlappingSupportError,
)

_LOG_2PI = math.log(2.0 * math.pi)

__all__ = [
    "GaussianComponent",
    "SpikeSlabGaussian",
    "GaussianLikelihoodEvidence",
    "MixtureComponent",
    "NonOverlappingMixture",
    "spike_slab_moments",
    "spike_slab_log_density",
    "spike_slab_to_natural",
    "mixture_log_density",
    "conjugate_update_spike_slab",
    "kl_spike_slab",
    "gaussian_kl",
    "point_mass_component",
    "gaussian_slab_component",
    "uniform_component",
]


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianComponent:
    """A univariate Gaussian, the diffuse part of a spike-and-slab.

    Parameters
    ----------
    mean : float
    variance : float
        Must be strictly positive.
    """

    mean: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0.0 and math.isfinite(self.variance)):
            raise ValueError(f"slab variance must be positive and finite, got {self.variance}")
        if not math.isfinite(self.mean):
            raise ValueError(f"slab mean must be finite, got {self.mean}")

    def log_pdf(self, x: float) -> float:
        """Gaussian log density at ``x``."""
        return -0.5 * (_LOG_2PI + math.log(self.variance)) \
            - (x - self.mean) ** 2 / (2.0 * self.variance)


@dataclass(frozen=True)
class SpikeSlabGaussian:
    """Mixture of a point mass at zero and a Gaussian slab.

    ``spike_prob`` is the mass placed on the atom at 0; the remaining
    ``1 - spike_prob`` is spread over the slab.  Degenerate weights 0 and 1
    are allowed (moments and log densities stay total); only the conversion
    to the two-component natural form rejects them.
    """

    spike_prob: float
    slab: GaussianComponent

    def __post_init__(self):
        if not (0.0 <= self.spike_prob <= 1.0):
            raise ValueError(f"spike_prob must lie in [0, 1], got {self.spike_prob}")


@dataclass(frozen=True)
class GaussianLikelihoodEvidence:
    """Coefficients of a Gaussian-form log-likelihood ``a*x**2 + b*x + const``.

    ``precision_coeff`` is ``a`` (negative for a proper Gaussian likelihood
    contribution; zero encodes a flat likelihood) and ``linear_coeff`` is
    ``b``.  Evidence from independent observations adds coefficientwise.
    """

    precision_coeff: float
    linear_coeff: float

    def __add__(self, other: "GaussianLikelihoodEvidence") -> "GaussianLikelihoodEvidence":
        return GaussianLikelihoodEvidence(
            self.precision_coeff + other.precision_coeff,
            self.linear_coeff + other.linear_coeff,
        )


@dataclass(frozen=True)
class MixtureComponent:
    """One exponential-family component of a disjoint-support mixture.

    ``sufficient_stats`` and ``log_base_density`` map a support point to a
    vector / scalar; ``support_indicator`` is an opaque predicate.  The point
    mass has an empty sufficient-statistic vector and zero log partition.
    """

    log_weight: float
    natural_params: Tuple[float, ...]
    sufficient_stats: Callable[[float], Tuple[float, ...]]
    log_partition: float
    log_base_density: Callable[[float], float]
    support_indicator: Callable[[float], bool]


@dataclass(frozen=True)
class NonOverlappingMixture:
    """A K-component mixture of exponential families with disjoint supports.

    Invariants checked at construction: the weights exponentiate and sum to
    one (tolerance 1e-12) and every log partition is finite.  Disjointness of
    the supports is a contract on the caller; it is probed by tests rather
    than proven here because the indicators are opaque predicates.
    """

    components: Tuple[MixtureComponent, ...]

    def __post_init__(self):
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        total = math.fsum(math.exp(c.log_weight) for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"component weights sum to {total}, expected 1")
        for i, c in enumerate(self.components):
            if not math.isfinite(c.log_partition):
                raise ValueError(f"log partition of component {i} is not finite")

    @property
    def k(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# component factories
# ---------------------------------------------------------------------------

def point_mass_component(location: float, log_weight: float) -> MixtureComponent:
    """Point mass at ``location``: a one-member family with no sufficient stats."""
    return MixtureComponent(
        log_weight=log_weight,
        natural_params=(),
        sufficient_stats=lambda x: (),
        log_partition=0.0,
        log_base_density=lambda x: 0.0,
        support_indicator=lambda x, loc=location: x == loc,
    )


def gaussian_slab_component(mean: float, variance: float, log_weight: float,
                            excluded_atoms: Sequence[float] = (0.0,)) -> MixtureComponent:
    """Gaussian in natural form ``(mean/var, -1/(2 var))``, restricted off the atoms.

    Removing the atoms is a measure-zero restriction, so the natural
    parameters, sufficient statistics ``(x, x**2)`` and log partition are
    those of the unrestricted Gaussian.
    """
    atoms = tuple(excluded_atoms)
    return MixtureComponent(
        log_weight=log_weight,
        natural_params=(mean / variance, -0.5 / variance),
        sufficient_stats=lambda x: (x, x * x),
        log_partition=mean * mean / (2.0 * variance) + 0.5 * math.log(variance),
        log_base_density=lambda x: -0.5 * _LOG_2PI,
        support_indicator=lambda x, a=atoms: all(x != loc for loc in a),
    )


def uniform_component(low: float, high: float, log_weight: float) -> MixtureComponent:
    """Uniform on ``[low, high)``: a single-member family carried by its base density."""
    if not high > low:
        raise ValueError("uniform component needs high > low")
    return MixtureComponent(
        log_weight=log_weight,
        natural_params=(),
        sufficient_stats=lambda x: (),
        log_partition=0.0,
        log_base_density=lambda x, w=high - low: -math.log(w),
        support_indicator=lambda x, lo=low, hi=high: lo <= x < hi,
    )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def spike_slab_moments(d: SpikeSlabGaussian) -> Tuple[float, float]:
    """First and second moments of a spike-and-slab.

    Returns
    -------
    (mean, second_moment)
        ``(1-psi)*mu`` and ``(1-psi)*(mu**2 + s2)``; total on all valid
        inputs including the degenerate weights.
    """
    keep = 1.0 - d.spike_prob
    mean = keep * d.slab.mean
    second = keep * (d.slab.mean ** 2 + d.slab.variance)
    return mean, second


def spike_slab_log_density(d: SpikeSlabGaussian, x: float) -> float:
    """Log density against the atom-plus-Lebesgue base measure.

    ``log(spike_prob)`` at ``x == 0``, otherwise ``log(1-spike_prob)`` plus
    the slab's Gaussian log pdf.  Returns ``-inf`` where the relevant weight
    vanishes.
    """
    if x == 0.0:
        return math.log(d.spike_prob) if d.spike_prob > 0.0 else -math.inf
    if d.spike_prob >= 1.0:
        return -math.inf
    return math.log1p(-d.spike_prob) + d.slab.log_pdf(x)


def spike_slab_to_natural(d: SpikeSlabGaussian) -> NonOverlappingMixture:
    """Two-component natural form: point mass at 0 plus the restricted slab.

    Raises
    ------
    DegenerateMixtureError
        If ``spike_prob`` is exactly 0 or 1; the weight coordinate of the
        natural parameterization (a log odds) is infinite there and the
        family collapses to a single component.
    """
    if d.spike_prob <= 0.0 or d.spike_prob >= 1.0:
        raise DegenerateMixtureError(
            f"spike_prob={d.spike_prob} has no two-component natural form")
    return NonOverlappingMixture(components=(
        point_mass_component(0.0, math.log(d.spike_prob)),
        gaussian_slab_component(d.slab.mean, d.slab.variance,
                                math.log1p(-d.spike_prob)),
    ))


def mixture_log_density(m: NonOverlappingMixture, x: float) -> float:
    """Log density of a disjoint-support mixture at ``x``.

    Exactly one component may accept ``x``; its contribution is
    ``log_weight + <eta, T(x)> - A + log_base_density(x)``.  No accepting
    component gives ``-inf``.

    Raises
    ------
    OverlappingSupportError
        If more than one support indicator accepts ``x``.
    """
    hit = None
    for i, c in enumerate(m.components):
        if c.support_indicator(x):
            if hit is not None:
                raise OverlappingSupportError(
                    f"components {hit} and {i} both accept x={x}")
            hit = i
    if hit is None:
        return -math.inf
    c = m.components[hit]
    dot = math.fsum(e * t for e, t in zip(c.natural_params, c.sufficient_stats(x)))
    return c.log_weight + dot - c.log_partition + c.log_base_density(x)


def _gaussian_log_partition(mean: float, variance: float) -> float:
    # A(eta) for natural params (mean/var, -1/(2 var)) with base 1/sqrt(2 pi)
    return mean * mean / (2.0 * variance) + 0.5 * math.log(variance)


def conjugate_update_spike_slab(prior: SpikeSlabGaussian,
                                evidence: GaussianLikelihoodEvidence
                                ) -> SpikeSlabGaussian:
    """Exact posterior of a spike-and-slab prior under Gaussian-form evidence.

    The evidence is a log-likelihood ``a*x**2 + b*x + const``.  The slab
    updates by adding ``(b, a)`` to its natural parameters; the spike odds
    update by the ratio of the likelihood at the atom (1 in unnormalized
    form) to the slab's marginal normalizer, i.e. in log space by
    ``A(prior) - A(posterior)``.  Closure: the result is again a
    spike-and-slab.

    Evidence is additive in its coefficients, so two sequential updates with
    ``(a1, b1)`` then ``(a2, b2)`` equal one update with the sums.

    Raises
    ------
    ValueError
        If the posterior slab precision ``1/s2 - 2a`` is not positive.
    """
    a = evidence.precision_coeff
    b = evidence.linear_coeff
    s2_prior = prior.slab.variance
    post_prec = 1.0 / s2_prior - 2.0 * a
    if not post_prec > 0.0:
        raise ValueError(
            f"evidence precision_coeff={a} does not yield a proper posterior slab")
    s2 = 1.0 / post_prec
    mu = s2 * (prior.slab.mean / s2_prior + b)
    if prior.spike_prob <= 0.0:
        psi = 0.0
    elif prior.spike_prob >= 1.0:
        psi = 1.0
    else:
        log_odds = (math.log(prior.spike_prob) - math.log1p(-prior.spike_prob)
                    + _gaussian_log_partition(prior.slab.mean, s2_prior)
                    - _gaussian_log_partition(mu, s2))
        psi = float(expit(log_odds))
    return SpikeSlabGaussian(spike_prob=psi, slab=GaussianComponent(mu, s2))


def gaussian_kl(q: GaussianComponent, p: GaussianComponent) -> float:
    """KL(N(mu_q, s2_q) || N(mu_p, s2_p)) in closed form."""
    return 0.5 * (math.log(p.variance / q.variance)
                  + (q.variance + (q.mean - p.mean) ** 2) / p.variance
                  - 1.0)


def _bernoulli_kl(q: float, p: float) -> float:
    # xlogy handles the 0*log0 = 0 conventions; infinite when q puts mass
    # where p has none.
    return float(xlogy(q, q) - xlogy(q, p) + xlogy(1.0 - q, 1.0 - q) - xlogy(1.0 - q, 1.0 - p))


def kl_spike_slab(q: SpikeSlabGaussian, p: SpikeSlabGaussian) -> float:
    """KL divergence between two spike-and-slabs sharing the atom at 0.

    Because the supports align, the divergence splits into a Bernoulli term
    on the spike mass plus the slab-conditional Gaussian KL weighted by
    ``1 - psi_q``.  Nonnegative, zero iff ``q == p``.

    Raises
    ------
    AbsoluteContinuityError
        If ``p`` is degenerate (spike mass 0 or 1) while ``q`` places mass
        on the part ``p`` lacks; the divergence is undefined there, exactly
        the failure mode that makes zero-variance "point mass" priors
        unusable in a mean-field ELBO.
    """
    if p.spike_prob <= 0.0 and q.spike_prob > 0.0:
        raise AbsoluteContinuityError("q has spike mass but p has none")
    if p.spike_prob >= 1.0 and q.spike_prob < 1.0:
        raise AbsoluteContinuityError("q has slab mass but p is a pure spike")
    bern = _bernoulli_kl(q.spike_prob, p.spike_prob)
    keep = 1.0 - q.spike_prob
    if keep == 0.0:
        return bern
    return bern + keep * gaussian_kl(q.slab, p.slab)
