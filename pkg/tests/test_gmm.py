"""Moment functions, weighting, objective, and minimization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from ivqreg.data import Dataset, ModelSpec, ParameterBox
from ivqreg.exceptions import ConfigurationError, DomainError, SingularityError
from ivqreg.gmm import (
    GmmObjective,
    default_smoothing_bandwidth,
    default_weight,
    minimize_gmm,
    moment_vector,
    sample_moments,
    smoothed_moment_jacobian,
    smoothed_sample_moments,
    survival_kernel,
)
from ivqreg.oracles import oracle_gmm_grid
from ivqreg.quantreg import fit_qr
from ivqreg.rng import spawn_rng


def _dataset(seed=0, n=200, endogenous=False):
    rng = spawn_rng(seed, 11)
    z = rng.normal(size=n)
    v = rng.normal(size=n)
    d = 0.8 * z + v
    e = 0.5 * v + np.sqrt(1 - 0.25) * rng.normal(size=n) if endogenous else rng.normal(size=n)
    y = 1.0 + 0.5 * d + e
    x = np.ones((n, 1))
    return Dataset(y=y, d=d, x=x, z=z)


def _design_a(rng, n):
    # binary-instrument location model: the tau-quantile of y given (d, z)
    # is phiinv(tau) + d, so the truth at tau is alpha=1, beta=phiinv(tau)
    from scipy.special import ndtri

    u = rng.random(n)
    v = 0.3 * ndtri(u) + np.sqrt(1 - 0.09) * rng.normal(size=n)
    z = (rng.random(n) < 0.5).astype(float)
    d = (0.0 + 1.0 * z + v > 0).astype(float)
    y = ndtri(u) + d
    return Dataset(y=y, d=d, x=np.ones((n, 1)), z=z)


def test_moment_vector_sign_cases():
    # residual +1 and -1 with tau = 0.5
    got = moment_vector(1.0, [0.0], [0.0], [1.0, 2.0], [0.0, 0.0], 0.5)
    assert np.allclose(got, [0.5, 1.0])
    got = moment_vector(-1.0, [0.0], [0.0], [1.0, 2.0], [0.0, 0.0], 0.5)
    assert np.allclose(got, [-0.5, -1.0])
    # zero residual counts as an exceedance
    got = moment_vector(0.0, [0.0], [0.0], [1.0], [0.0, 0.0], 0.3)
    assert np.allclose(got, [-0.7])


def test_moment_vector_dimension_guard():
    with pytest.raises(ConfigurationError):
        moment_vector(1.0, [1.0], [1.0], [1.0], [0.0], 0.5)


@given(
    resid=st.floats(-50, 50, allow_nan=False),
    tau=st.floats(0.05, 0.95),
    psi=st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=4),
)
@settings(max_examples=60, deadline=None)
def test_moment_vector_bound(resid, tau, psi):
    got = moment_vector(resid, [], [0.0], psi, [0.0], tau)
    bound = max(tau, 1 - tau) * np.abs(np.asarray(psi))
    assert np.all(np.abs(got) <= bound + 1e-12)


def test_sample_moments_all_positive_residuals():
    ds = _dataset(1)
    theta = np.array([0.0, ds.y.min() - 1.0])
    psi = np.hstack([ds.z, ds.x])
    got = sample_moments(ds, theta, 0.25)
    assert np.allclose(got, 0.25 * psi.mean(axis=0))


def test_sample_moments_at_qr_fit():
    # first-order condition of the check-loss fit bounds the own moments
    rng = spawn_rng(2, 11)
    n = 300
    x = np.column_stack([np.ones(n), rng.uniform(-1, 1, size=(n, 2))])
    y = x @ np.array([1.0, 0.5, -0.3]) + rng.normal(size=n)
    ds = Dataset(y=y, d=np.empty((n, 0)), x=x, z=np.empty((n, 0)))
    fit = fit_qr(ds.y, ds.x, 0.5)
    got = sample_moments(ds, fit.coef, 0.5, psi_rule=lambda d: d.x)
    assert np.all(np.abs(got) <= (x.shape[1] + 1) / n)


def test_sample_moments_clt_band():
    # at the truth the moment components are centered with variance
    # tau(1-tau) E[psi_j^2] / n, so a 3-sigma band should hold essentially
    # always over seeds
    tau, n = 0.5, 10000
    from scipy.special import ndtri

    truth = np.array([1.0, ndtri(tau)])
    hits = 0
    for seed in range(100):
        ds = _design_a(spawn_rng(seed, 23), n)
        psi = np.hstack([ds.z, ds.x])
        band = 3.0 * np.sqrt(tau * (1 - tau) / n) * np.sqrt((psi**2).mean(axis=0))
        g = sample_moments(ds, truth, tau)
        hits += bool(np.all(np.abs(g) <= band))
    assert hits >= 99


def test_default_weight_scalar_cases():
    n = 7
    ones = np.ones(n)
    ds = Dataset(y=ones, d=ones, x=np.empty((n, 0)), z=np.empty((n, 0)))
    rule = lambda d: np.ones((d.n, 1))
    assert np.allclose(default_weight(ds, 0.5, rule), [[4.0]])
    assert np.allclose(default_weight(ds, 0.1, rule), [[1.0 / 0.09]])


def test_default_weight_duplicate_column():
    ds = _dataset(3)
    rule = lambda d: np.column_stack([d.z, d.z, d.x])
    with pytest.raises(SingularityError) as err:
        default_weight(ds, 0.5, rule)
    assert "psi" in str(err.value)


def test_default_weight_reports_labels():
    ds = _dataset(4)
    dup = Dataset(y=ds.y, d=ds.d, x=ds.x, z=np.column_stack([ds.z, ds.z]),
                  z_labels=("za", "zb"))
    with pytest.raises(SingularityError) as err:
        default_weight(dup, 0.5, "zx")
    msg = str(err.value)
    assert "za" in msg or "zb" in msg


def test_survival_kernel_values():
    assert survival_kernel(0.0, 0.7) == pytest.approx(0.5)
    assert survival_kernel(-7.0, 0.7) >= 1 - 1e-15
    assert survival_kernel(0.1, 0.001) <= 1e-12
    assert abs(survival_kernel(-0.1, 0.001) - 1.0) <= 1e-12
    with pytest.raises(DomainError):
        survival_kernel(0.0, 0.0)
    with pytest.raises(DomainError):
        survival_kernel(0.0, -1.0)


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.01, 5.0))
@settings(max_examples=60, deadline=None)
def test_survival_kernel_monotone(u1, u2, h):
    lo, hi = min(u1, u2), max(u1, u2)
    a, b = survival_kernel(lo, h), survival_kernel(hi, h)
    assert 0.0 <= b <= a <= 1.0


def test_smoothed_moments_limit():
    ds = _dataset(5)
    theta = np.array([0.4, 0.9])
    resid = ds.y - ds.d[:, 0] * theta[0] - theta[1]
    assert np.abs(resid).min() > 1e-4
    g0 = sample_moments(ds, theta, 0.5)
    gh = smoothed_sample_moments(ds, theta, 0.5, h=1e-8)
    assert np.allclose(g0, gh, atol=1e-10)


def test_smoothed_moments_zero_residuals():
    n = 6
    ones = np.ones(n)
    ds = Dataset(y=ones, d=ones, x=np.empty((n, 0)), z=ones)
    got = smoothed_sample_moments(ds, np.array([1.0]), 0.5, psi_rule="z", h=0.3)
    assert np.allclose(got, 0.0)


def test_smoothed_jacobian_matches_finite_differences():
    ds = _dataset(6, n=150)
    theta = np.array([0.3, 1.1])
    h = 0.25
    jac = smoothed_moment_jacobian(ds, theta, 0.5, h=h)
    eps = 1e-6
    for j in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[j] += eps
        dn[j] -= eps
        fd = (smoothed_sample_moments(ds, up, 0.5, h=h)
              - smoothed_sample_moments(ds, dn, 0.5, h=h)) / (2 * eps)
        scale = max(np.linalg.norm(jac[:, j]), 1e-8)
        assert np.all(np.abs(fd - jac[:, j]) <= 1e-5 * scale)


def test_objective_perfect_fit_and_nonnegative():
    # one residual on each side of zero at tau = 0.5 zeroes a scalar moment
    y = np.array([1.0, -1.0])
    ds = Dataset(y=y, d=np.zeros((2, 1)), x=np.zeros((2, 0)), z=np.zeros((2, 0)))
    spec = ModelSpec(tau=0.5, instrument_rule=lambda d: np.ones((d.n, 1)))
    obj = GmmObjective(ds, spec, weight=np.eye(1))
    assert obj.value(np.array([0.0])) == 0.0
    rng = spawn_rng(7, 11)
    for _ in range(25):
        assert obj.value(rng.normal(size=1)) >= 0.0


def test_objective_weight_validation():
    ds = _dataset(8)
    spec = ModelSpec(tau=0.5)
    with pytest.raises(ConfigurationError):
        GmmObjective(ds, spec, weight=np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ConfigurationError):
        GmmObjective(ds, spec, weight=-np.eye(2))
    with pytest.raises(DomainError):
        GmmObjective(ds, spec, h=-0.1)


def test_objective_matches_grid_oracle():
    ds = _dataset(9, n=250, endogenous=True)
    obj = GmmObjective(ds, ModelSpec(tau=0.5))
    axes = [np.linspace(-0.5, 1.5, 200), np.linspace(0.0, 2.0, 200)]
    node, val = oracle_gmm_grid(obj.value, axes)
    res = minimize_gmm(obj, axes, strategy="grid")
    assert np.array_equal(res.theta, node)
    assert res.objective == pytest.approx(val, rel=1e-12, abs=1e-12)
    assert res.metadata["points_examined"] == 200 * 200


def test_minimize_single_node_grid():
    ds = _dataset(10)
    obj = GmmObjective(ds, ModelSpec(tau=0.5))
    res = minimize_gmm(obj, [np.array([0.7]), np.array([1.2])], strategy="grid")
    assert np.allclose(res.theta, [0.7, 1.2])
    assert res.alpha.shape == (1,) and res.beta.shape == (1,)


def test_minimize_empty_space_errors():
    ds = _dataset(10)
    obj = GmmObjective(ds, ModelSpec(tau=0.5))
    with pytest.raises(DomainError):
        minimize_gmm(obj, [np.array([]), np.array([1.0])], strategy="grid")
    with pytest.raises(DomainError):
        minimize_gmm(obj, None, strategy="grid")
    with pytest.raises(ConfigurationError):
        minimize_gmm(obj, ParameterBox(np.zeros(2), np.ones(2)), strategy="newton")


def test_minimize_exogenous_matches_qr():
    # with d exogenous and psi = [d, x] the criterion minimum sits at the
    # plain check-loss fit, up to grid resolution
    ds = _dataset(11, n=500, endogenous=False)
    w = np.hstack([ds.d, ds.x])
    qr = fit_qr(ds.y, w, 0.5)
    spec = ModelSpec(tau=0.5, instrument_rule=lambda d: np.hstack([d.d, d.x]))
    obj = GmmObjective(ds, spec)
    step = 0.01
    axes = [np.arange(qr.coef[0] - 0.3, qr.coef[0] + 0.3, step),
            np.arange(qr.coef[1] - 0.3, qr.coef[1] + 0.3, step)]
    res = minimize_gmm(obj, axes, strategy="grid")
    assert abs(res.alpha[0] - qr.coef[0]) <= 2 * step + 1e-12


def test_multistart_reaches_grid_minimum():
    ds = _dataset(12, n=400, endogenous=True)
    spec = ModelSpec(tau=0.5)
    obj = GmmObjective(ds, spec, h=default_smoothing_bandwidth(ds, 0.5))
    box = ParameterBox(np.array([-1.0, -1.0]), np.array([2.0, 3.0]))
    ms = minimize_gmm(obj, box, strategy="multistart", starts=6)
    grid = minimize_gmm(obj, box, strategy="grid", grid_points=25)
    assert ms.objective <= grid.objective + 1e-8
    again = minimize_gmm(obj, box, strategy="multistart", starts=6)
    assert np.array_equal(ms.theta, again.theta)


def test_scale_invariance_of_default_weighted_objective():
    ds = _dataset(13, n=300, endogenous=True)
    theta_list = [np.array([0.2, 0.9]), np.array([0.7, 1.1]), np.array([-0.3, 0.4])]
    plain = GmmObjective(ds, ModelSpec(tau=0.3))
    c = 7.3
    scaled_rule = lambda d: c * np.hstack([d.z, d.x])
    scaled = GmmObjective(ds, ModelSpec(tau=0.3, instrument_rule=scaled_rule))
    for theta in theta_list:
        a, b = plain.value(theta), scaled.value(theta)
        assert abs(a - b) <= 1e-8 * (1.0 + abs(a))


def test_unsmoothed_piecewise_constant_smoothed_continuous():
    ds = _dataset(14, n=80)
    spec = ModelSpec(tau=0.5)
    rough = GmmObjective(ds, spec)
    smooth = GmmObjective(ds, spec, h=0.2)
    theta = np.array([0.45, 1.05])
    direction = np.array([1.0, -0.5])
    resid = ds.y - np.hstack([ds.d, ds.x]) @ theta
    slack = np.abs(resid).min() / (np.abs(np.hstack([ds.d, ds.x]) @ direction).max() + 1e-12)
    ts = np.linspace(-0.9 * slack, 0.9 * slack, 9)
    rough_vals = [rough.value(theta + t * direction) for t in ts]
    assert np.ptp(rough_vals) == 0.0
    smooth_vals = np.array([smooth.value(theta + t * direction) for t in ts])
    lips = np.abs(np.diff(smooth_vals)) / (np.diff(ts) * np.linalg.norm(direction))
    assert np.all(np.isfinite(lips))
    assert np.ptp(smooth_vals) > 0.0


def test_overidentification_bounded_at_truth():
    # irrelevant-but-valid extra instrument makes the problem overidentified
    from scipy.special import ndtri

    tau, n = 0.5, 2000
    truth = np.array([1.0, ndtri(tau)])
    stats = []
    for seed in range(200):
        rng = spawn_rng(seed, 29)
        base = _design_a(rng, n)
        z2 = rng.normal(size=n)
        ds = Dataset(y=base.y, d=base.d, x=base.x,
                     z=np.column_stack([base.z[:, 0], z2]))
        obj = GmmObjective(ds, ModelSpec(tau=tau))
        stats.append(obj.value(truth))
    df = 3 - 2
    assert np.median(stats) <= chi2.ppf(0.99, df)
