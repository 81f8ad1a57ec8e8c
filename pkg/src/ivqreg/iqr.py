"""Inverse quantile regression: profile, scan, and invert.

Under the model the instruments carry no explanatory power for the
outcome once the endogenous regressors enter with their true structural
slope. So for each hypothesized slope a, regress y - d'a on the included
controls and the instruments with a check-loss fit, and measure how far
the instrument coefficients sit from zero with a Wald form. The slope
estimate is the grid point where that statistic bottoms out; the same
scan inverts directly into confidence regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .data import Dataset, EstimateResult
from .exceptions import (
    ConfigurationError,
    DomainError,
    IvqrError,
    SingularityError,
    SolverError,
    WeakIdentificationError,
)
from .quantreg import _check_tau, _phi, default_qr_bandwidth, fit_qr, qr_covariance


@dataclass(frozen=True)
class IqrProfile:
    """One profiled grid point: fit of y - d'a on [x, z] plus the Wald form."""

    a: np.ndarray
    beta_a: np.ndarray
    gamma_a: np.ndarray
    omega_a: np.ndarray   # covariance of sqrt(n) (gamma_hat - gamma)
    wald: float
    metadata: dict = field(default_factory=dict)


def profile(ds: Dataset, tau: float, a, h: float | None = None, _init=None) -> IqrProfile:
    """Check-loss fit of y - d'a on [x, z] and the Wald statistic for gamma = 0."""
    tau = _check_tau(tau)
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size != ds.s:
        raise ConfigurationError(f"slope has {a.size} entries, needs {ds.s}")
    yt = ds.y - ds.d @ a
    wmat = np.hstack([ds.x, ds.z])
    fit = fit_qr(yt, wmat, tau, _init=_init)
    cov = qr_covariance(yt, wmat, tau, fit.coef, h=h)
    beta_a = fit.coef[: ds.k]
    gamma_a = fit.coef[ds.k :]
    omega_a = cov[ds.k :, ds.k :]
    try:
        solved = np.linalg.solve(omega_a, gamma_a)
    except np.linalg.LinAlgError as err:
        raise SingularityError(f"instrument-coefficient covariance is singular: {err}")
    wald = max(float(ds.n * gamma_a @ solved), 0.0)
    return IqrProfile(a=a, beta_a=beta_a, gamma_a=gamma_a, omega_a=omega_a,
                      wald=wald, metadata={"coef": fit.coef, "certified": fit.certified})


def _alpha_nodes(alpha_grid, s: int) -> list[np.ndarray]:
    if isinstance(alpha_grid, np.ndarray) and alpha_grid.ndim == 1:
        axes = [alpha_grid]
    else:
        axes = [np.asarray(g, dtype=float).reshape(-1) for g in alpha_grid]
    # ascending axes make the first strict winner the lexicographically
    # smallest tied node
    axes = [np.sort(ax) for ax in axes]
    if any(ax.size == 0 for ax in axes):
        raise DomainError("slope grid is empty")
    if len(axes) != s:
        raise ConfigurationError(f"grid has {len(axes)} axes, needs {s}")
    if s > 3:
        raise ConfigurationError(
            "grid search is limited to 3 endogenous coordinates; "
            "use the smoothed multistart GMM path instead"
        )
    return [np.asarray(node, dtype=float) for node in product(*axes)]


def estimate(ds: Dataset, tau: float, alpha_grid,
             h: float | None = None) -> tuple[EstimateResult, tuple[IqrProfile, ...]]:
    """Scan the slope grid for the smallest Wald statistic.

    Ties go to the lexicographically smallest node. Grid points where the
    profile fails are skipped and counted; if every point fails the last
    error is re-raised inside an aggregate solver error.
    """
    nodes = _alpha_nodes(alpha_grid, ds.s)
    profiles = []
    best = None
    failures = 0
    last_error = None
    init = None
    for node in nodes:
        try:
            prof = profile(ds, tau, node, h=h, _init=init)
        except IvqrError as err:
            failures += 1
            last_error = err
            continue
        init = prof.metadata["coef"]
        profiles.append(prof)
        if best is None or prof.wald < best.wald:
            best = prof
    if best is None:
        raise SolverError(
            f"every slope grid point failed ({failures} nodes); last: {last_error}"
        )
    result = EstimateResult(
        tau=tau,
        alpha=best.a,
        beta=best.beta_a,
        method="iqr",
        objective=best.wald,
        metadata={"failures": failures, "nodes": len(nodes),
                  "gamma": best.gamma_a},
    )
    return result, tuple(profiles)


def profile_table_rows(profiles) -> list[list]:
    """CSV-ready rows: slope entries, wald, instrument and control coefficients."""
    rows = []
    for prof in profiles:
        cells = [*prof.a, prof.wald, *prof.gamma_a, *prof.beta_a]
        rows.append([repr(float(c)) for c in cells])
    header = (
        [f"a_{i + 1}" for i in range(len(profiles[0].a))]
        + ["wald"]
        + [f"gamma_{i + 1}" for i in range(len(profiles[0].gamma_a))]
        + [f"beta_{i + 1}" for i in range(len(profiles[0].beta_a))]
    )
    return [header] + rows


def asymptotic_variance(ds: Dataset, tau: float, alpha_hat, beta_hat,
                        h: float | None = None) -> np.ndarray:
    """Sandwich variance of (alpha_hat, beta_hat) through the moment route.

    (G' Sigma^-1 G)^-1 / n with G the kernel-weighted derivative of the
    stacked-instrument moments and Sigma their uncentered outer product.
    A nearly flat criterion raises the weak-identification error rather
    than reporting a meaningless matrix; metadata is in the exception.
    """
    tau = _check_tau(tau)
    alpha_hat = np.asarray(alpha_hat, dtype=float).reshape(-1)
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    eps = ds.y - ds.d @ alpha_hat - ds.x @ beta_hat
    if h is None:
        h = default_qr_bandwidth(eps)
    h = float(h)
    if h <= 0.0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    psi = np.hstack([ds.z, ds.x])
    wmat = np.hstack([ds.d, ds.x])
    kw = _phi(eps / h) / (ds.n * h)
    gmat = (psi * kw[:, None]).T @ wmat
    s = tau - (eps <= 0.0)
    scores = psi * s[:, None]
    sigma = scores.T @ scores / ds.n
    eig = np.linalg.eigvalsh(sigma)
    if eig.min() <= 1e-12 * max(eig.max(), 1e-300):
        raise SingularityError("score covariance is singular; check instrument collinearity")
    bread = gmat.T @ np.linalg.solve(sigma, gmat)
    bread = 0.5 * (bread + bread.T)
    fstat = first_stage_strength(ds)
    cond = float(np.linalg.cond(bread))
    if fstat < 10.0 or not np.isfinite(cond) or cond > 1e10:
        raise WeakIdentificationError(
            f"weak identification (first-stage F {fstat:.2f}, Jacobian condition "
            f"{cond:.2e}); use the robust confidence regions instead",
            condition_number=cond,
        )
    cov = np.linalg.inv(bread) / ds.n
    return 0.5 * (cov + cov.T)


def first_stage_strength(ds: Dataset) -> float:
    """Smallest first-stage F statistic of the instruments across d columns.

    Below the rule-of-thumb line of 10 a Wald-type variance is
    untrustworthy and the scan-based regions should be used.
    """
    full = np.hstack([ds.x, ds.z])
    fmin = np.inf
    dof = ds.n - full.shape[1]
    if dof <= 0:
        return 0.0
    for j in range(ds.s):
        dj = ds.d[:, j]
        if ds.k:
            r0 = dj - ds.x @ np.linalg.lstsq(ds.x, dj, rcond=None)[0]
        else:
            r0 = dj
        rss0 = float(r0 @ r0)
        r1 = dj - full @ np.linalg.lstsq(full, dj, rcond=None)[0]
        rss1 = float(r1 @ r1)
        if rss1 <= 0.0:
            return np.inf
        fmin = min(fmin, ((rss0 - rss1) / ds.m) / (rss1 / dof))
    return float(fmin)


@dataclass(frozen=True)
class ProcessRow:
    tau: float
    result: EstimateResult | None
    error: str | None


def coefficient_process(ds: Dataset, tau_list, alpha_grid,
                        h: float | None = None) -> tuple[ProcessRow, ...]:
    """Independent estimates across quantile levels; failures stay local."""
    taus = [float(t) for t in tau_list]
    if any(not 0.0 < t < 1.0 for t in taus):
        raise DomainError("every quantile level must lie in (0, 1)")
    if sorted(taus) != taus or len(set(taus)) != len(taus):
        raise ConfigurationError("quantile levels must be strictly increasing")
    rows = []
    for t in taus:
        try:
            res, _ = estimate(ds, t, alpha_grid, h=h)
            rows.append(ProcessRow(tau=t, result=res, error=None))
        except IvqrError as err:
            rows.append(ProcessRow(tau=t, result=None, error=str(err)))
    return tuple(rows)
