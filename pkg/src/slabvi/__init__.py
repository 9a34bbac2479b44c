"""Mean-field VI with exact spike-and-slab variational families.

Subpackages by concern:

* :mod:`slabvi.expfam` -- spike-and-slab distributions, disjoint-support
  mixtures in natural form, conjugate updates, KL divergences.
* :mod:`slabvi.gls` -- coordinate ascent for the summary-statistics
  regression model (sparse and auxiliary-variable schemes, exact 1-D
  posterior, thresholding curve).
* :mod:`slabvi.ppca` -- sparse probabilistic PCA (both schemes).
* :mod:`slabvi.simbench` -- seeded simulation, baselines, metrics and
  replicate benchmark runners.
* :mod:`slabvi.cli` -- the ``slabvi`` command.
"""

__version__ = "0.1.0"

from .errors import (
    AbsoluteContinuityError,
    CorrelationUndefinedError,
    DegenerateMixtureError,
    InputFormatError,
    NumericalDivergenceError,
    OverlappingSupportError,
    RankDeficientError,
    SingularMatrixError,
    SlabVIError,
)
from .expfam import (
    GaussianComponent,
    GaussianLikelihoodEvidence,
    NonOverlappingMixture,
    SpikeSlabGaussian,
    conjugate_update_spike_slab,
    kl_spike_slab,
    mixture_log_density,
    spike_slab_log_density,
    spike_slab_moments,
    spike_slab_to_natural,
)
from .gls import (
    FitReport,
    GlsPosterior,
    GlsProblem,
    elbo_gls,
    exact_posterior_1d,
    fit_gls_naive,
    fit_gls_sparse,
    threshold_curve,
)
from .ppca import (
    PpcaFitResult,
    PpcaPosterior,
    PpcaProblem,
    elbo_ppca,
    fit_ppca_naive,
    fit_ppca_sparse,
    ppca_init,
    reconstruct,
)
from .simbench import (
    BenchmarkRecord,
    GlsSimConfig,
    PpcaSimConfig,
    run_gls_benchmark,
    run_ppca_benchmark,
    simulate_gls,
    simulate_ppca,
)
