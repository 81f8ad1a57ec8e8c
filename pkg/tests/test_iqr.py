"""Profiled Wald scan: profile, estimate, variance, and the tau process."""

import numpy as np
import pytest
from scipy import stats

from ivqreg.data import Dataset
from ivqreg.exceptions import (
    ConfigurationError,
    DomainError,
    SingularityError,
    SolverError,
    WeakIdentificationError,
)
from ivqreg.iqr import (
    asymptotic_variance,
    coefficient_process,
    estimate,
    first_stage_strength,
    profile,
    profile_table_rows,
)
from ivqreg.quantreg import fit_qr
from ivqreg.simulate import DgpDesign, generate

GRID = np.linspace(0.5, 1.5, 101)


def _constant_outcome_dataset(seed=3, n=150):
    # y - d'a0 is exactly constant, so the interpolating fit is unique and
    # the instrument coefficients come out exactly zero
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 2))
    z = rng.standard_normal((n, 2))
    a0 = np.array([0.6, -0.2])
    y = d @ a0 + 2.5
    return Dataset(y=y, d=d, x=np.ones((n, 1)), z=z), a0


def _collinear_dataset(seed=42, n=200):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    d = rng.standard_normal((n, 1))
    y = 0.4 * d[:, 0] + x @ np.array([0.7, -0.3]) + rng.standard_normal(n)
    return Dataset(y=y, d=d, x=x, z=x[:, 1:2].copy())


def test_profile_zero_instrument_coefficients_exact():
    ds, a0 = _constant_outcome_dataset()
    prof = profile(ds, 0.5, a0)
    assert (prof.gamma_a == 0.0).all()
    assert prof.wald == 0.0
    assert np.allclose(prof.beta_a, [2.5])


def test_profile_collinear_instrument_raises():
    ds = _collinear_dataset()
    with pytest.raises(SingularityError):
        profile(ds, 0.5, [0.4])


def test_profile_dimension_guard():
    ds, _ = _constant_outcome_dataset()
    with pytest.raises(ConfigurationError):
        profile(ds, 0.5, [0.1, 0.2, 0.3])


def test_profile_wald_nonnegative_and_omega_psd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = 120
        d = rng.standard_normal((n, 1))
        z = rng.standard_normal((n, 2))
        x = np.ones((n, 1))
        y = 0.3 * d[:, 0] + rng.standard_normal(n)
        prof = profile(Dataset(y=y, d=d, x=x, z=z), 0.35, rng.uniform(-1, 1, 1))
        assert prof.wald >= 0.0
        assert np.allclose(prof.omega_a, prof.omega_a.T)
        assert np.linalg.eigvalsh(prof.omega_a).min() >= -1e-10


def test_wald_size_at_truth():
    # share of W_N(alpha0) below the chi-square 99th percentile
    crit = stats.chi2.ppf(0.99, 1)
    below = 0
    for r in range(200):
        ds, rec = generate(DgpDesign(name="A", n=2000, seed=6000 + r))
        below += profile(ds, 0.5, rec.theta(0.5)[:1]).wald <= crit
    assert below / 200 >= 0.95


def test_wald_distribution_matches_chi_square():
    walds = np.empty(500)
    for r in range(500):
        ds, rec = generate(DgpDesign(name="A", n=2000, seed=7000 + r))
        walds[r] = profile(ds, 0.5, rec.theta(0.5)[:1]).wald
    ks = stats.ks_1samp(walds, stats.chi2(1).cdf).statistic
    assert ks <= 0.08


def test_estimate_exogenous_matches_quantile_regression():
    # with z = d and no endogeneity the scan should land within one grid
    # step of the plain check-loss fit
    rng = np.random.default_rng(42)
    n = 4000
    d = rng.standard_normal((n, 1))
    y = 1.0 + 0.8 * d[:, 0] + rng.standard_normal(n)
    ds = Dataset(y=y, d=d, x=np.ones((n, 1)), z=d.copy())
    res, _ = estimate(ds, 0.5, np.linspace(0.0, 2.0, 201))
    ref = fit_qr(y, np.hstack([d, np.ones((n, 1))]), 0.5)
    assert abs(res.alpha[0] - ref.coef[0]) <= 0.01 + 1e-12


def test_estimate_single_point_grid():
    ds, _ = _constant_outcome_dataset(seed=8)
    res, profs = estimate(ds, 0.5, [np.array([0.1]), np.array([0.2])])
    assert np.allclose(res.alpha, [0.1, 0.2])
    assert len(profs) == 1


def test_estimate_all_nodes_failing_aggregates():
    ds = _collinear_dataset()
    with pytest.raises(SolverError, match="2 nodes"):
        estimate(ds, 0.5, np.array([0.0, 0.4]))


def test_estimate_tie_takes_smallest_node():
    # a zero treatment column makes every node profile identically
    rng = np.random.default_rng(12)
    n = 80
    ds = Dataset(
        y=rng.standard_normal(n),
        d=np.zeros((n, 1)),
        x=np.ones((n, 1)),
        z=rng.standard_normal((n, 1)),
    )
    res, _ = estimate(ds, 0.5, np.array([0.7, -0.3, 1.1]))
    assert res.alpha[0] == -0.3


def test_estimate_grid_guards():
    ds, _ = _constant_outcome_dataset()
    with pytest.raises(DomainError):
        estimate(ds, 0.5, [np.array([]), np.array([0.1])])
    with pytest.raises(ConfigurationError):
        estimate(ds, 0.5, np.array([0.1]))  # one axis for two slopes
    rng = np.random.default_rng(1)
    wide = Dataset(
        y=rng.standard_normal(60),
        d=rng.standard_normal((60, 4)),
        x=np.ones((60, 1)),
        z=rng.standard_normal((60, 4)),
    )
    with pytest.raises(ConfigurationError):
        estimate(wide, 0.5, [np.array([0.0])] * 4)


def test_estimate_scale_equivariance_exact():
    ds, _ = generate(DgpDesign(name="A", n=500, seed=9))
    grid = np.linspace(0.0, 2.0, 81)
    base, _ = estimate(ds, 0.5, grid)
    doubled, _ = estimate(
        Dataset(y=2.0 * ds.y, d=ds.d, x=ds.x, z=ds.z), 0.5, 2.0 * grid
    )
    assert doubled.alpha[0] == 2.0 * base.alpha[0]


def test_wald_invariant_to_x_reparameterization():
    rng = np.random.default_rng(42)
    n = 500
    x = np.column_stack([np.ones(n), rng.standard_normal(n)])
    z = rng.standard_normal((n, 1))
    d = rng.standard_normal((n, 1))
    y = 0.5 * d[:, 0] + x @ np.array([1.0, 0.4]) + rng.standard_normal(n)
    tmat = np.array([[2.0, 0.5], [0.0, -1.5]])
    w1 = profile(Dataset(y=y, d=d, x=x, z=z), 0.5, [0.5]).wald
    w2 = profile(Dataset(y=y, d=d, x=x @ tmat, z=z), 0.5, [0.5]).wald
    assert abs(w1 - w2) <= 1e-6


def test_profile_table_rows_header_and_roundtrip():
    ds, _ = _constant_outcome_dataset()
    _, profs = estimate(ds, 0.5, [np.array([0.5, 0.6]), np.array([-0.2])])
    rows = profile_table_rows(profs)
    assert rows[0] == ["a_1", "a_2", "wald", "gamma_1", "gamma_2",
                       "beta_1"]
    for prof, row in zip(profs, rows[1:]):
        assert float(row[0]) == prof.a[0]
        assert float(row[2]) == prof.wald


@pytest.fixture(scope="module")
def design_a_scan():
    # shared 200-replication scan at n=8000 for the accuracy and standard
    # error checks
    alphas = np.empty(200)
    ses = np.empty(200)
    for r in range(200):
        ds, _ = generate(DgpDesign(name="A", n=8000, seed=1000 + r))
        res, _ = estimate(ds, 0.5, GRID)
        alphas[r] = res.alpha[0]
        v = asymptotic_variance(ds, 0.5, res.alpha, res.beta)
        ses[r] = np.sqrt(v[0, 0])
    return alphas, ses


@pytest.mark.slow
def test_estimate_accuracy_median(design_a_scan):
    alphas, _ = design_a_scan
    assert np.median(np.abs(alphas - 1.0)) <= 0.05


@pytest.mark.slow
def test_standard_error_tracks_monte_carlo_spread(design_a_scan):
    alphas, ses = design_a_scan
    ratio = np.median(ses) / alphas.std(ddof=1)
    assert abs(ratio - 1.0) <= 0.3


def test_variance_symmetric_psd_and_metadata():
    ds, rec = generate(DgpDesign(name="A", n=2000, seed=11))
    th = rec.theta(0.5)
    v = asymptotic_variance(ds, 0.5, th[:1], th[1:])
    assert np.allclose(v, v.T)
    assert np.linalg.eigvalsh(v).min() >= 0.0
    assert v.shape == (2, 2)


def test_variance_larger_under_weak_instruments():
    # same draw seed, instrument strength dialed down: both designs pass
    # the first-stage guard, the weak one reports a strictly larger variance
    out = {}
    for tag, pi1 in (("strong", 1.0), ("weak", 0.4)):
        ds, rec = generate(DgpDesign(name="A", n=2000, seed=11, pi1=pi1))
        th = rec.theta(0.5)
        out[tag] = asymptotic_variance(ds, 0.5, th[:1], th[1:])[0, 0]
    assert out["weak"] > out["strong"]


def test_irrelevant_instrument_raises():
    rng = np.random.default_rng(7)
    n = 2000
    z = rng.standard_normal((n, 1))
    d = rng.standard_normal((n, 1))
    y = 1.0 + d[:, 0] + rng.standard_normal(n)
    ds = Dataset(y=y, d=d, x=np.ones((n, 1)), z=z)
    assert first_stage_strength(ds) < 1.0
    with pytest.raises(WeakIdentificationError):
        asymptotic_variance(ds, 0.5, np.array([1.0]), np.array([1.0]))


def test_first_stage_strength_scales():
    ds, _ = generate(DgpDesign(name="A", n=2000, seed=11))
    assert first_stage_strength(ds) > 100.0
    weak, _ = generate(DgpDesign(name="A", n=2000, seed=11, pi1=0.1))
    assert first_stage_strength(weak) < 10.0
    with pytest.raises(WeakIdentificationError):
        rec = generate(DgpDesign(name="A", n=2000, seed=11, pi1=0.1))[1]
        th = rec.theta(0.5)
        asymptotic_variance(weak, 0.5, th[:1], th[1:])


def test_variance_bandwidth_guard():
    ds, rec = generate(DgpDesign(name="A", n=500, seed=2))
    th = rec.theta(0.5)
    with pytest.raises(DomainError):
        asymptotic_variance(ds, 0.5, th[:1], th[1:], h=0.0)


def test_process_singleton_matches_estimate():
    ds, _ = generate(DgpDesign(name="A", n=500, seed=4))
    grid = np.linspace(0.0, 2.0, 41)
    rows = coefficient_process(ds, [0.5], grid)
    direct, _ = estimate(ds, 0.5, grid)
    assert len(rows) == 1
    assert rows[0].error is None
    assert rows[0].result.alpha[0] == direct.alpha[0]
    assert rows[0].result.objective == direct.objective


def test_process_validation_and_error_collection():
    ds, _ = generate(DgpDesign(name="A", n=300, seed=4))
    grid = np.linspace(0.0, 2.0, 11)
    with pytest.raises(ConfigurationError):
        coefficient_process(ds, [0.5, 0.25], grid)
    with pytest.raises(DomainError):
        coefficient_process(ds, [0.0, 0.5], grid)
    rows = coefficient_process(_collinear_dataset(), [0.25, 0.75], grid)
    assert all(row.result is None and row.error for row in rows)


@pytest.mark.slow
def test_process_constant_effect_median():
    maxerr = np.empty(200)
    for r in range(200):
        ds, _ = generate(DgpDesign(name="A", n=8000, seed=3000 + r))
        rows = coefficient_process(ds, (0.25, 0.5, 0.75), GRID)
        maxerr[r] = max(abs(row.result.alpha[0] - 1.0) for row in rows)
    # the grid nodes themselves carry float error (1.1 is 1.1000...01), so
    # the bound gets the same headroom
    assert np.median(maxerr) <= 0.1 + 1e-9


@pytest.mark.slow
def test_process_heterogeneous_ordering():
    grid = np.linspace(-0.5, 1.5, 201)
    wins = 0
    for r in range(60):
        des = DgpDesign(name="A", n=8000, seed=4000 + r, alpha_fn=lambda u: u)
        ds, _ = generate(des)
        rows = coefficient_process(ds, (0.25, 0.75), grid)
        wins += rows[0].result.alpha[0] < rows[1].result.alpha[0]
    assert wins / 60 >= 0.9
