"""Synthetic designs for the instrumental quantile model.

Three named designs. A: binary instrument, binary treatment, common rank
for both potential outcomes. B: the same with one-sided noncompliance, so
nobody with z = 0 is treated. C: log-linear demand and supply with a
market-clearing price, where the price is endogenous because clearing
ties it to the demand rank. Every design draws the rank independently of
the instrument, so the conditional quantile restriction holds at the true
coefficients; a rank-slippage knob breaks it on purpose for power checks.

All randomness flows through counter-based streams split from the design
seed, so replications are reproducible and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .data import Dataset
from .exceptions import ConfigurationError, DomainError, IvqrError
from .oracles import oracle_bernoulli_exact, oracle_gmm_grid, oracle_qr  # noqa: F401
from .rng import spawn_rng

_DESIGNS = ("A", "B", "C")


def _unit_slope(u):
    return np.ones_like(np.asarray(u, dtype=float))


def _demand_elasticity(u):
    # mildly state-dependent and everywhere negative
    return -1.0 + 0.25 * (np.asarray(u, dtype=float) - 0.5)


@dataclass(frozen=True)
class DgpDesign:
    """One fully parameterized data-generating process.

    alpha_fn and beta_fn map the rank in (0, 1) to the structural slope
    and intercept; defaults are a unit slope (elasticity curve for design
    C) and a standard normal quantile intercept. rank_slip > 0 adds
    treated-state rank noise with that standard deviation, violating rank
    similarity. extra_x appends irrelevant standard normal controls.
    """

    name: str
    n: int
    seed: int = 0
    rho: float = 0.5
    pi0: float = 0.0
    pi1: float = 1.0
    alpha_fn: Callable | None = None
    beta_fn: Callable | None = None
    rank_slip: float = 0.0
    extra_x: int = 0
    supply_elasticity: float = 1.0
    supply_shift: float = 0.5
    supply_noise: float = 0.5

    def __post_init__(self):
        if self.name not in _DESIGNS:
            raise DomainError(f"unknown design {self.name!r}; use one of {_DESIGNS}")
        if not int(self.n) >= 1:
            raise DomainError(f"sample size must be at least 1, got {self.n}")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"endogeneity strength must lie in [-1, 1], got {self.rho}")
        if self.rank_slip < 0.0:
            raise DomainError(f"rank_slip must be nonnegative, got {self.rank_slip}")
        if self.extra_x < 0:
            raise DomainError(f"extra_x must be nonnegative, got {self.extra_x}")
        for fn in (self.alpha_fn, self.beta_fn):
            if fn is None:
                continue
            with np.errstate(all="ignore"):
                probe = np.asarray(fn(np.array([0.01, 0.5, 0.99])), dtype=float)
            if not np.all(np.isfinite(probe)):
                raise DomainError("structural function is not finite on (0, 1)")

    @property
    def slope(self) -> Callable:
        if self.alpha_fn is not None:
            return self.alpha_fn
        return _demand_elasticity if self.name == "C" else _unit_slope

    @property
    def intercept(self) -> Callable:
        return self.beta_fn if self.beta_fn is not None else ndtri


@dataclass(frozen=True)
class OracleRecord:
    """Ground truth attached to one generated sample.

    rank0/rank1 are the ranks used for the two potential-outcome states;
    they are the same array unless the design slips ranks. For design C
    the stored potential outcomes are log-demand at log-price 0 and 1.
    """

    design: DgpDesign
    rank0: np.ndarray
    rank1: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    extras: dict = field(default_factory=dict)

    def theta(self, tau: float) -> np.ndarray:
        if not 0.0 < tau < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {tau}")
        alpha = float(self.design.slope(tau))
        beta = float(self.design.intercept(tau))
        return np.concatenate([[alpha], [beta], np.zeros(self.design.extra_x)])


def _binary_treatment(design: DgpDesign, rng, n: int):
    u = rng.random(n)
    nu = ndtri(u)
    xi = rng.normal(size=n)
    z = (rng.random(n) < 0.5).astype(float)
    v = design.rho * nu + np.sqrt(1.0 - design.rho**2) * xi
    if design.name == "A":
        d = (design.pi0 + design.pi1 * z + v > 0.0).astype(float)
    else:
        d = z * (v > 0.0)
    if design.rank_slip > 0.0:
        # treated-state slippage: the rank renormalizes to uniform but is
        # no longer degenerate given the selection disturbance
        m = design.rank_slip * rng.normal(size=n)
        u1 = ndtr((nu + m) / np.sqrt(1.0 + design.rank_slip**2))
    else:
        u1 = u
    return u, u1, z, d


def _clear_market(design: DgpDesign, u, z, shock):
    """Bisection on log-price for demand = supply, tolerance 1e-10."""
    beta = design.intercept(u)
    alpha = design.slope(u)
    if np.any(alpha >= design.supply_elasticity):
        raise DomainError("demand slope reaches the supply slope; clearing price not unique")
    supply_base = design.supply_shift * z + design.supply_noise * shock

    def excess(lp):
        return beta + alpha * lp - supply_base - design.supply_elasticity * lp

    lo = np.full(u.shape, -1.0)
    hi = np.full(u.shape, 1.0)
    for _ in range(90):
        bad_lo = excess(lo) < 0.0
        if not bad_lo.any():
            break
        lo[bad_lo] *= 2.0
    for _ in range(90):
        bad_hi = excess(hi) > 0.0
        if not bad_hi.any():
            break
        hi[bad_hi] *= 2.0
    if excess(lo).min() < 0.0 or excess(hi).max() > 0.0:
        raise DomainError("failed to bracket the market-clearing price")
    while np.max(hi - lo) > 1e-10:
        mid = 0.5 * (lo + hi)
        pos = excess(mid) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    return 0.5 * (lo + hi)


def generate(design: DgpDesign, subkey: tuple[int, ...] = ()) -> tuple[Dataset, OracleRecord]:
    """Draw one sample plus its oracle record."""
    n = int(design.n)
    rng = spawn_rng(design.seed, 3, *subkey)
    if design.name in ("A", "B"):
        u, u1, z, d = _binary_treatment(design, rng, n)
        y0 = design.intercept(u)
        y1 = design.intercept(u1) + design.slope(u1)
        y = np.where(d > 0.0, y1, y0)
        extras = {}
    else:
        if design.rank_slip > 0.0:
            raise ConfigurationError("rank slippage is only wired to the binary designs")
        u = rng.random(n)
        raw = rng.normal(size=n)
        z = rng.normal(size=n)
        shock = design.rho * ndtri(u) + np.sqrt(1.0 - design.rho**2) * raw
        lp = _clear_market(design, u, z, shock)
        d = lp
        y = design.intercept(u) + design.slope(u) * lp
        u1 = u
        y0 = design.intercept(u)
        y1 = design.intercept(u) + design.slope(u)
        extras = {"log_price": lp, "supply_shock": shock}
    x = np.ones((n, 1))
    if design.extra_x > 0:
        x = np.column_stack([x, rng.normal(size=(n, design.extra_x))])
    labels = ("const",) + tuple(f"x{j + 1}" for j in range(design.extra_x))
    ds = Dataset(y=y, d=d, x=x, z=z, d_labels=("d",), x_labels=labels, z_labels=("z",))
    rec = OracleRecord(design=design, rank0=u, rank1=u1, y0=y0, y1=y1, extras=extras)
    return ds, rec


def _cell_codes(column: np.ndarray, max_bins: int) -> np.ndarray:
    vals = np.unique(column)
    if vals.size <= max_bins:
        return np.searchsorted(vals, column)
    edges = np.quantile(column, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.searchsorted(edges, column)


@dataclass(frozen=True)
class RestrictionReport:
    """Per-cell frequency audit of the conditional quantile restriction."""

    tau: float
    cells: tuple  # (label, count, frequency) triples
    max_deviation: float
    band_share: float  # share of cells within 3 binomial standard errors

    def as_text(self) -> str:
        lines = [f"tau={self.tau:g} max|freq - tau|={self.max_deviation:.4f} "
                 f"within-band share={self.band_share:.3f}"]
        for label, count, freq in self.cells:
            lines.append(f"  cell {label}: n={count} freq={freq:.4f}")
        return "\n".join(lines)


def verify_model_restriction(design: DgpDesign, theta_true, tau: float,
                             subkey: tuple[int, ...] = (), max_cells: int = 64) -> RestrictionReport:
    """Check that {y below the structural quantile} has frequency tau per (x, z) cell."""
    ds, _ = generate(design, subkey)
    theta = np.asarray(theta_true, dtype=float).reshape(-1)
    w = np.hstack([ds.d, ds.x])
    if theta.size != w.shape[1]:
        raise ConfigurationError(f"theta has {theta.size} entries, needs {w.shape[1]}")
    event = (ds.y <= w @ theta).astype(float)
    columns = [ds.z[:, j] for j in range(ds.m)]
    columns += [ds.x[:, j] for j in range(ds.k) if np.ptp(ds.x[:, j]) > 0.0]
    # cap the cell count: instruments bin first, excess covariates drop
    columns = columns[: max(1, int(np.log2(max_cells)))]
    per_col = max(2, int(max_cells ** (1.0 / max(len(columns), 1))))
    code = np.zeros(ds.n, dtype=np.int64)
    for col in columns:
        c = _cell_codes(col, per_col)
        code = code * (c.max() + 1) + c
    cells = []
    max_dev = 0.0
    within = 0
    for cell_id in np.unique(code):
        mask = code == cell_id
        n_cell = int(mask.sum())
        freq = float(event[mask].mean())
        dev = abs(freq - tau)
        max_dev = max(max_dev, dev)
        within += dev <= 3.0 * np.sqrt(tau * (1.0 - tau) / n_cell)
        cells.append((int(cell_id), n_cell, freq))
    return RestrictionReport(tau=float(tau), cells=tuple(cells),
                             max_deviation=max_dev,
                             band_share=within / max(len(cells), 1))


@dataclass(frozen=True)
class McRow:
    method: str
    reps_ok: int
    failures: int
    bias: float
    sd: float
    rmse: float
    mcse: float
    coverage: float | None
    degenerate: bool  # single usable replication, sd = 0 by convention


@dataclass(frozen=True)
class McTable:
    design: DgpDesign
    truth: float
    replications: int
    rows: tuple[McRow, ...]

    def row(self, method: str) -> McRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def as_text(self) -> str:
        lines = [f"design {self.design.name} n={self.design.n} R={self.replications} "
                 f"truth={self.truth:g}"]
        for r in self.rows:
            cov = "" if r.coverage is None else f" coverage={r.coverage:.3f}"
            flag = " (degenerate sd)" if r.degenerate else ""
            lines.append(f"  {r.method}: bias={r.bias:+.4f} sd={r.sd:.4f} "
                         f"rmse={r.rmse:.4f} mcse={r.mcse:.4f} "
                         f"ok={r.reps_ok} fail={r.failures}{cov}{flag}")
        return "\n".join(lines)

    def csv_rows(self):
        head = ["method", "reps_ok", "failures", "bias", "sd", "rmse", "mcse", "coverage"]
        out = [head]
        for r in self.rows:
            out.append([r.method, r.reps_ok, r.failures, repr(r.bias), repr(r.sd),
                        repr(r.rmse), repr(r.mcse),
                        "" if r.coverage is None else repr(r.coverage)])
        return out


def mc_study(design: DgpDesign, estimators: dict, truth: float, replications: int,
             seed: int = 0) -> McTable:
    """Replicated study of point estimators, with optional interval coverage.

    estimators maps a method name to a callable on a Dataset returning
    either a point estimate or (estimate, (lower, upper)). Package errors
    in a replication are counted as failures and excluded; seeds are split
    per replication from the study seed.
    """
    if replications < 1:
        raise DomainError(f"replications must be at least 1, got {replications}")
    root = replace(design, seed=seed)
    draws = {name: [] for name in estimators}
    covers = {name: [] for name in estimators}
    failures = {name: 0 for name in estimators}
    for rep in range(replications):
        ds, _ = generate(root, subkey=(rep,))
        for name, fn in estimators.items():
            try:
                out = fn(ds)
            except IvqrError:
                failures[name] += 1
                continue
            if isinstance(out, tuple):
                est, (lo, hi) = out
                covers[name].append(float(lo) <= truth <= float(hi))
            else:
                est = out
            draws[name].append(float(est))
    rows = []
    for name in estimators:
        vals = np.asarray(draws[name], dtype=float)
        ok = vals.size
        if ok == 0:
            rows.append(McRow(name, 0, failures[name], np.nan, np.nan, np.nan,
                              np.nan, None, True))
            continue
        bias = float(vals.mean() - truth)
        sd = float(vals.std(ddof=1)) if ok > 1 else 0.0
        rmse = float(np.sqrt(np.mean((vals - truth) ** 2)))
        mcse = sd / np.sqrt(ok)
        cov = float(np.mean(covers[name])) if covers[name] else None
        rows.append(McRow(name, ok, failures[name], bias, sd, rmse, mcse,
                          cov, ok == 1))
    return McTable(design=root, truth=float(truth), replications=replications,
                   rows=tuple(rows))
