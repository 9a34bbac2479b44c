"""Acceptance suite: every shipping criterion at its stated tolerance.

Each criterion prints one ``ACCEPTANCE`` line (run with ``pytest -s`` to see
them all; failing criteria surface theirs in the failure output).  The heavy
protocols run once in module-scoped fixtures and are shared across
criteria; every variational fit executed here registers its ELBO trace for
the monotonicity criterion.

Two sub-criteria are known not to hold and are asserted faithfully anyway;
see the repository notes for the analysis:

* the exact/sparse posterior-mean curve's steepest adjacent-grid step on
  the 0.05 grid is about 0.08, above the stated 0.05 bound (the bound is
  violated by the exact posterior itself, not by the fit);
* the sparse-scheme fraction of |E[W]| below 1e-5 on the full-size
  protocol settles near 0.24 at the coordinate-ascent fixed point, below
  the stated 0.8.
"""

import time

import numpy as np
import pytest

from slabvi.expfam import (
    GaussianComponent,
    GaussianLikelihoodEvidence,
    SpikeSlabGaussian,
    conjugate_update_spike_slab,
    mixture_log_density,
    spike_slab_log_density,
    spike_slab_to_natural,
)
from slabvi.gls import (
    GlsProblem,
    fit_gls_naive,
    fit_gls_sparse,
    threshold_curve,
)
from slabvi.ppca import expected_loadings, fit_ppca_naive, fit_ppca_sparse, reconstruct
from slabvi.simbench import (
    GlsSimConfig,
    PpcaSimConfig,
    classical_pca,
    metric_corr,
    metric_mse,
    metric_reconstruction,
    oracle_pca,
    simulate_gls,
    simulate_ppca,
)
from slabvi.cli import main as cli_main
from tests.oracles import quadrature_posterior_1d
from tests.test_cli import _masked_records_bytes

GLS_SLACK = 1e-8
PPCA_SLACK = 1e-6

#: (label, trace, relative slack) for every fit run by the fixtures below.
ELBO_TRACES = []


def _register_trace(label, trace, slack):
    ELBO_TRACES.append((label, np.asarray(trace), slack))


def _report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {status}" + (f" - {detail}" if detail else ""))


def _problem_1d(beta_hat):
    return GlsProblem(np.array([float(beta_hat)]), np.eye(1), 1.0, 1.0, 0.99)


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # compile the numba sweeps before anything is timed
    fit_gls_sparse(_problem_1d(1.0), sweeps=2)
    fit_gls_naive(_problem_1d(1.0), 1e-4, sweeps=2)


# ---------------------------------------------------------------------------
# criterion 1: single-coordinate exactness against the quadrature oracle
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def one_d_fits(warm_kernels):
    start = time.perf_counter()
    rows = []
    for bh in (0.0, 0.5, 1.0, 2.0, 5.0):
        report = fit_gls_sparse(_problem_1d(bh))
        _register_trace(f"gls sparse 1d bh={bh}", report.elbo_trace, GLS_SLACK)
        rows.append((bh, report))
    elapsed = time.perf_counter() - start
    return rows, elapsed


def test_criterion_1_one_dimensional_exactness(one_d_fits):
    rows, elapsed = one_d_fits
    worst_psi = worst_mean = 0.0
    for bh, report in rows:
        psi_q, slab_mean_q, _ = quadrature_posterior_1d(bh, 0.99, 1.0, 1.0)
        mean_q = (1.0 - psi_q) * slab_mean_q
        worst_psi = max(worst_psi, abs(report.posterior.psi[0] - psi_q))
        worst_mean = max(worst_mean, abs(report.posterior_mean[0] - mean_q))
    ok = worst_psi < 1e-6 and worst_mean < 1e-6 and elapsed < 1.0
    _report("1 (1-D exactness)", ok,
            f"|dpsi|={worst_psi:.2e} |dmean|={worst_mean:.2e} time={elapsed:.2f}s")
    assert worst_psi < 1e-6
    assert worst_mean < 1e-6
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# criterion 2: thresholding of the auxiliary-variable scheme at P=1
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def threshold_fits(warm_kernels):
    grid = np.round(np.arange(0.0, 6.0001, 0.05), 10)
    start = time.perf_counter()
    naive_means = np.empty_like(grid)
    naive_psis = np.empty_like(grid)
    for i, bh in enumerate(grid):
        report = fit_gls_naive(_problem_1d(bh), 1e-10)
        naive_means[i] = report.posterior_mean[0]
        naive_psis[i] = report.posterior.psi[0]
        if i % 20 == 0:
            _register_trace(f"gls naive 1d bh={bh}", report.elbo_trace, GLS_SLACK)
    curve = threshold_curve(0.99, 1.0, 1.0, 1e-10, grid)
    elapsed = time.perf_counter() - start
    assert np.array_equal(curve.naive_mean, naive_means)
    return curve, naive_psis, elapsed


def test_criterion_2_thresholding_jump(threshold_fits):
    curve, naive_psis, elapsed = threshold_fits
    grid = curve.beta_hat
    # the fitted indicator saturates on the whole grid (the scheme's
    # bimodal end state)
    assert np.all(np.minimum(naive_psis, 1.0 - naive_psis) < 1e-3)
    slab = (grid > 0.01) & (np.abs(curve.naive_mean - grid / 2.0)
                            <= 0.01 * grid / 2.0)
    if not slab.any():
        _report("2 (naive threshold)", False, "no under-shrinking branch found")
        assert slab.any()
    t = float(grid[int(np.argmax(slab))])
    below = grid < t - 0.1
    above = grid > t + 0.1
    ok_below = bool(np.all(np.abs(curve.naive_mean[below]) < 0.01))
    ok_above = bool(np.all(np.abs(curve.naive_mean[above] - grid[above] / 2.0)
                           <= 0.01 * grid[above] / 2.0))
    ok_time = elapsed < 10.0
    ok = ok_below and ok_above and ok_time and 0.2 < t < 5.8
    _report("2 (naive threshold)", ok,
            f"t={t:.2f} below-ok={ok_below} above-ok={ok_above} "
            f"time={elapsed:.2f}s")
    assert ok_below and ok_above
    assert 0.2 < t < 5.8
    assert ok_time


def test_criterion_2_exact_curve_smoothness(threshold_fits):
    curve, _, _ = threshold_fits
    monotone = bool(np.all(np.diff(curve.exact_mean) >= 0.0))
    sparse_matches = float(np.max(np.abs(curve.sparse_mean - curve.exact_mean)))
    max_jump = float(np.max(np.abs(np.diff(curve.exact_mean))))
    ok = monotone and sparse_matches < 1e-6 and max_jump <= 0.05
    _report("2 (exact-curve smoothness)", ok,
            f"monotone={monotone} max-jump={max_jump:.4f} (bound 0.05) "
            f"sparse-vs-exact={sparse_matches:.1e}")
    assert monotone
    assert sparse_matches < 1e-6
    # Known-failing bound: the exact posterior mean's steepest slope near
    # the transition is about 1.5, so a 0.05 grid steps by about 0.08.
    assert max_jump <= 0.05, (
        f"exact-curve adjacent-grid jump {max_jump:.4f} exceeds the stated "
        "0.05 bound; the bound is unattainable (see notes)")


# ---------------------------------------------------------------------------
# criterion 3: full-scale benchmark orderings
# ---------------------------------------------------------------------------

GLS_BENCH_CFG = GlsSimConfig(p_dim=1000, wishart_df=1000, p0=0.99,
                             sigma_1_2=1.0, sigma_e2_grid=(0.05, 0.5, 1.0),
                             replicates=20, seed=2026,
                             sigma_0_2_grid=(1.0, 1e-2, 1e-4, 1e-10))


@pytest.fixture(scope="module")
def gls_bench(warm_kernels):
    start = time.perf_counter()
    rows = []
    for sigma_idx, se2 in enumerate(GLS_BENCH_CFG.sigma_e2_grid):
        for rep in range(GLS_BENCH_CFG.replicates):
            problem, beta = simulate_gls(GLS_BENCH_CFG, rep, sigma_idx)
            assert np.any(beta != 0.0), "degenerate all-null draw"
            estimates = {}
            sparse = fit_gls_sparse(problem, GLS_BENCH_CFG.sweeps,
                                    GLS_BENCH_CFG.tol)
            _register_trace(f"gls sparse se2={se2} rep={rep}",
                            sparse.elbo_trace, GLS_SLACK)
            estimates["sparse"] = sparse.posterior_mean
            for s02 in GLS_BENCH_CFG.sigma_0_2_grid:
                naive = fit_gls_naive(problem, s02, GLS_BENCH_CFG.sweeps,
                                      GLS_BENCH_CFG.tol)
                _register_trace(f"gls naive-{s02:g} se2={se2} rep={rep}",
                                naive.elbo_trace, GLS_SLACK)
                estimates[f"naive-{s02:g}"] = naive.posterior_mean
            estimates["raw"] = problem.beta_hat
            estimates["mle"] = np.linalg.solve(problem.corr, problem.beta_hat)
            for method, est in estimates.items():
                rows.append(dict(sigma_e2=se2, replicate=rep, method=method,
                                 mse=metric_mse(est, beta),
                                 corr=metric_corr(est, beta)))
    elapsed = time.perf_counter() - start
    return rows, elapsed


def _mean_by(rows, metric, se2):
    out = {}
    for row in rows:
        if row["sigma_e2"] == se2:
            out.setdefault(row["method"], []).append(row[metric])
    return {m: float(np.mean(v)) for m, v in out.items()}


def test_criterion_3_benchmark_orderings(gls_bench):
    rows, elapsed = gls_bench
    problems = []
    tuned_naive = ("naive-0.01", "naive-0.0001", "naive-1e-10")
    for se2 in (0.5, 1.0):
        mse = _mean_by(rows, "mse", se2)
        best_naive = min(mse[m] for m in tuned_naive)
        if not mse["sparse"] < best_naive:
            problems.append(f"mse sparse !< best naive at se2={se2}")
        if not best_naive < mse["raw"]:
            problems.append(f"best naive mse !< raw at se2={se2}")
    for se2 in GLS_BENCH_CFG.sigma_e2_grid:
        corr = _mean_by(rows, "corr", se2)
        mse = _mean_by(rows, "mse", se2)
        others = [m for m in corr if m != "sparse"]
        if not all(corr["sparse"] >= corr[m] for m in others):
            problems.append(f"correlation ordering fails at se2={se2}: {corr}")
        if not mse["mle"] > 100.0 * mse["raw"]:
            problems.append(f"mle/raw mse ratio below 100 at se2={se2}")
    ok = not problems and elapsed < 600.0
    detail = "; ".join(problems) if problems else (
        f"time={elapsed:.0f}s, mse@0.5: " + ", ".join(
            f"{m}={v:.4g}" for m, v in sorted(_mean_by(rows, 'mse', 0.5).items())))
    _report("3 (benchmark orderings)", ok, detail)
    assert not problems, problems
    assert elapsed < 600.0


# ---------------------------------------------------------------------------
# criterion 6-8 fixture: the full-size sparse-PCA protocol
# ---------------------------------------------------------------------------

PPCA_CFG = PpcaSimConfig(seed=414)  # full-scale defaults: 500 x 10000, K=2


@pytest.fixture(scope="module")
def ppca_bench():
    start = time.perf_counter()
    per_rep = []
    for rep in range(PPCA_CFG.replicates):
        problem, signal, active = simulate_ppca(PPCA_CFG, rep)
        pca_scores, pca_loadings = classical_pca(problem.data, PPCA_CFG.k_fit)
        orc_scores, orc_loadings = oracle_pca(problem.data, PPCA_CFG.k_fit, active)

        sparse = fit_ppca_sparse(problem, PPCA_CFG.sweeps)
        _register_trace(f"ppca sparse rep={rep}", sparse.elbo_trace, PPCA_SLACK)
        naive_best = fit_ppca_naive(problem, 0.05, PPCA_CFG.sweeps)
        _register_trace(f"ppca naive-0.05 rep={rep}", naive_best.elbo_trace,
                        PPCA_SLACK)
        naive_tiny = fit_ppca_naive(problem, 1e-8, PPCA_CFG.sweeps)
        _register_trace(f"ppca naive-1e-8 rep={rep}", naive_tiny.elbo_trace,
                        PPCA_SLACK)

        sparse_ew = expected_loadings(sparse.posterior, "sparse")
        per_rep.append(dict(
            rec_classical=metric_reconstruction(pca_scores @ pca_loadings.T, signal),
            rec_oracle=metric_reconstruction(orc_scores @ orc_loadings.T, signal),
            rec_sparse=metric_reconstruction(reconstruct(sparse.posterior, "sparse"),
                                             signal),
            rec_naive=metric_reconstruction(reconstruct(naive_best.posterior, "naive"),
                                            signal),
            sparse_fraction=float((np.abs(sparse_ew) < 1e-5).mean()),
            classical_fraction=float((np.abs(pca_loadings) < 1e-5).mean()),
            collapse_corrs=[abs(metric_corr(naive_tiny.posterior.mu_z[:, j],
                                            pca_scores[:, j]))
                            for j in range(PPCA_CFG.k_fit)],
        ))
    elapsed = time.perf_counter() - start
    return per_rep, elapsed


def test_criterion_6_reconstruction_orderings(ppca_bench):
    per_rep, elapsed = ppca_bench
    mean = lambda key: float(np.mean([r[key] for r in per_rep]))
    sparse, classical = mean("rec_sparse"), mean("rec_classical")
    oracle, naive = mean("rec_oracle"), mean("rec_naive")
    ratio_classical = sparse / classical
    ratio_oracle = sparse / oracle
    ok = (ratio_classical < 0.25 and ratio_oracle < 1.3
          and sparse < naive < classical and elapsed < 3000.0)
    _report("6 (reconstruction orderings)", ok,
            f"sparse={sparse:.0f} oracle={oracle:.0f} naive(0.05)={naive:.0f} "
            f"classical={classical:.0f} time={elapsed:.0f}s")
    assert ratio_classical < 0.25
    assert ratio_oracle < 1.3
    assert sparse < naive < classical
    assert elapsed < 3000.0


def test_criterion_7_sparse_loading_fraction(ppca_bench):
    per_rep, _ = ppca_bench
    fracs = [r["sparse_fraction"] for r in per_rep]
    ok = all(f >= 0.8 for f in fracs)
    _report("7 (sparse loading fraction)", ok,
            "fractions=" + ", ".join(f"{f:.3f}" for f in fracs) + " (bound 0.8)")
    # Known-failing bound: exact coordinate ascent settles near 0.24 on this
    # protocol; see notes.
    assert ok, (f"per-replicate fractions of |E[W]| < 1e-5 are {fracs}; the "
                "0.8 bound is unattainable at the fit's fixed point (see notes)")


def test_criterion_7_classical_loading_fraction(ppca_bench):
    per_rep, _ = ppca_bench
    fracs = [r["classical_fraction"] for r in per_rep]
    ok = all(f < 0.1 for f in fracs)
    _report("7 (classical loading fraction)", ok,
            "fractions=" + ", ".join(f"{f:.4f}" for f in fracs))
    assert ok


def test_criterion_8_naive_collapse_to_pca(ppca_bench):
    per_rep, _ = ppca_bench
    worst = min(min(r["collapse_corrs"]) for r in per_rep)
    ok = worst >= 0.95
    _report("8 (naive collapse to classical PCA)", ok,
            f"min |score correlation| over replicates/components = {worst:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# criterion 4: every ELBO trace collected above is monotone
# ---------------------------------------------------------------------------

def test_criterion_4_elbo_monotonicity(one_d_fits, threshold_fits, gls_bench,
                                       ppca_bench):
    assert ELBO_TRACES, "no traces were registered"
    worst_label, worst_violation = None, 0.0
    for label, trace, slack in ELBO_TRACES:
        if len(trace) < 2:
            continue
        dips = -(np.diff(trace) + slack * np.maximum(1.0, np.abs(trace[:-1])))
        violation = float(dips.max())
        if violation > worst_violation:
            worst_label, worst_violation = label, violation
    ok = worst_violation <= 0.0
    _report("4 (ELBO monotonicity)", ok,
            f"{len(ELBO_TRACES)} traces; worst residual dip "
            f"{worst_violation:.2e} ({worst_label})")
    assert ok, f"trace {worst_label} dips by {worst_violation}"


# ---------------------------------------------------------------------------
# criterion 5: exponential-family identities on randomized instances
# ---------------------------------------------------------------------------

def test_criterion_5_exponential_family_identities():
    rng = np.random.default_rng(99)
    density_err = 0.0
    for _ in range(120):
        d = SpikeSlabGaussian(rng.uniform(0.02, 0.98),
                              GaussianComponent(rng.normal(0, 2),
                                                rng.uniform(0.05, 4.0)))
        mix = spike_slab_to_natural(d)
        for x in (0.0, float(rng.normal(0, 3)), float(rng.normal(0, 3))):
            density_err = max(density_err,
                              abs(mixture_log_density(mix, x)
                                  - spike_slab_log_density(d, x)))
    from tests.oracles import quadrature_conjugate_update
    psi_err = mean_err = var_err = 0.0
    for _ in range(120):
        prior = SpikeSlabGaussian(rng.uniform(0.05, 0.95),
                                  GaussianComponent(rng.uniform(-2, 2),
                                                    rng.uniform(0.2, 2.0)))
        a = -rng.uniform(0.05, 2.0)
        b = rng.uniform(-3.0, 3.0)
        post = conjugate_update_spike_slab(prior, GaussianLikelihoodEvidence(a, b))
        psi_q, mean_q, var_q = quadrature_conjugate_update(prior, a, b)
        psi_err = max(psi_err, abs(post.spike_prob - psi_q))
        mean_err = max(mean_err, abs(post.slab.mean - mean_q)
                       / max(1e-8, abs(mean_q)))
        var_err = max(var_err, abs(post.slab.variance - var_q) / var_q)
    ok = density_err < 1e-10 and psi_err < 1e-6 and mean_err < 1e-4 \
        and var_err < 1e-5
    _report("5 (exponential-family identities)", ok,
            f"density={density_err:.1e} psi={psi_err:.1e} "
            f"mean_rel={mean_err:.1e} var_rel={var_err:.1e}")
    assert density_err < 1e-10
    assert psi_err < 1e-6
    assert var_err < 1e-5
    assert mean_err < 1e-4


# ---------------------------------------------------------------------------
# criterion 9: byte-identical benchmark reruns
# ---------------------------------------------------------------------------

def test_criterion_9_deterministic_reruns(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"gls-{tag}"
        assert cli_main(["bench-gls", "--preset", "smoke", "--seed", "7",
                         "--out", str(out)]) == 0
        outs.append(_masked_records_bytes(out / "records.csv", "elapsed_ms"))
    gls_ok = outs[0] == outs[1]
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"ppca-{tag}"
        assert cli_main(["bench-ppca", "--preset", "smoke", "--seed", "7",
                         "--out", str(out)]) == 0
        outs.append(_masked_records_bytes(out / "records.csv", "elapsed_ms"))
    ppca_ok = outs[0] == outs[1]
    ok = gls_ok and ppca_ok
    _report("9 (deterministic reruns)", ok,
            f"gls identical={gls_ok}, ppca identical={ppca_ok} "
            "(wall-clock column masked)")
    assert ok
