"""Identification-robust and exact finite-sample confidence regions.

Three inversions of increasing strictness about what they assume. The
instrument-coefficient Wald scan accepts slope values whose profiled
statistic sits below a chi-square quantile; it needs no identification
strength at all. The conditional simulation method recenters the moment
process around a sufficient statistic at each null and simulates the
criterion gap, buying back power when identification is strong. The
Bernoulli pivot needs no asymptotics: holding the instruments fixed, the
indicator events at the true parameter are coin flips, so the criterion
distribution can be simulated exactly at any sample size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from math import ceil

import numpy as np
from scipy import stats as _stats
from scipy.linalg import cho_solve, cholesky

from .data import Dataset, ModelSpec, instrument_matrix
from .exceptions import ConfigurationError, DomainError
from .gmm import GmmObjective
from .iqr import _alpha_nodes, profile
from .orthogonal import ortho_score
from .rng import spawn_rng


def chi2_quantile(df: int, level: float) -> float:
    """Inverse chi-square CDF, the acceptance cutoff for Wald-type scans."""
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df}")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    return float(_stats.chi2.ppf(level, int(df)))


@dataclass(frozen=True)
class ConfidenceRegion:
    """Grid inversion of a test: accepted nodes form the region.

    Empty, disjoint, and whole-grid outcomes are all legitimate and are
    reported as-is; emptiness in particular signals model misfit rather
    than a failure of the procedure.
    """

    method: str
    level: float
    grid: tuple
    statistic: np.ndarray
    critical: np.ndarray
    accept: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise DomainError(f"level must lie in (0, 1), got {self.level}")

    @property
    def empty(self) -> bool:
        return not bool(self.accept.any())

    def contains(self, point) -> bool:
        """Accept flag of the grid node matching point (must be on the grid)."""
        point = np.asarray(point, dtype=float).reshape(-1)
        for node, ok in zip(self.grid, self.accept):
            if np.allclose(node, point, rtol=0.0, atol=1e-9):
                return bool(ok)
        raise DomainError(f"{point} is not a grid node")

    def interval(self, coord: int = 0):
        """Projected (min, max) of the accepted nodes along one coordinate."""
        if self.empty:
            return None
        vals = np.array([node[coord] for node, ok in zip(self.grid, self.accept) if ok])
        return float(vals.min()), float(vals.max())

    def width(self, coord: int = 0) -> float:
        iv = self.interval(coord)
        return 0.0 if iv is None else iv[1] - iv[0]

    def as_text(self) -> str:
        n_acc = int(self.accept.sum())
        lines = [f"{self.method} region, level {self.level:g}: "
                 f"{n_acc}/{len(self.grid)} grid points accepted"]
        if n_acc:
            dim = len(self.grid[0])
            for c in range(dim):
                lo, hi = self.interval(c)
                lines.append(f"  coordinate {c + 1}: [{lo:g}, {hi:g}]")
        else:
            lines.append("  empty region: no grid point is compatible with the model")
        return "\n".join(lines)


def region_table_rows(region: ConfidenceRegion) -> list[list]:
    """CSV-ready rows: grid coordinates, statistic, critical value, accept."""
    dim = len(region.grid[0])
    header = [f"a_{i + 1}" for i in range(dim)] + ["statistic", "critical", "accept"]
    rows = [header]
    for node, stat, crit, ok in zip(region.grid, region.statistic,
                                    region.critical, region.accept):
        rows.append([repr(float(v)) for v in node]
                    + [repr(float(stat)), repr(float(crit)), str(int(ok))])
    return rows


def ar_region(ds: Dataset, tau: float, alpha_grid, p: float = 0.05,
              h: float | None = None) -> ConfidenceRegion:
    """Accept slope nodes whose instrument-coefficient Wald statistic is small.

    Validity does not depend on instrument strength: under the null the
    profiled instrument coefficients are asymptotically centered at zero
    no matter how flat the criterion is.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    nodes = _alpha_nodes(alpha_grid, ds.s)
    crit = chi2_quantile(ds.m, 1.0 - p)
    walds = np.empty(len(nodes))
    init = None
    for j, node in enumerate(nodes):
        prof = profile(ds, tau, node, h=h, _init=init)
        init = prof.metadata["coef"]
        walds[j] = prof.wald
    critical = np.full(len(nodes), crit)
    return ConfidenceRegion(
        method="ar",
        level=1.0 - p,
        grid=tuple(nodes),
        statistic=walds,
        critical=critical,
        accept=walds <= critical,
        metadata={"p": p, "df": ds.m},
    )


@dataclass(frozen=True)
class QlrDraws:
    """Conditional simulation record: recentered process and draw quantiles."""

    centered: np.ndarray      # S(a) per node at each null, (G, G, m)
    simulated: np.ndarray     # criterion-gap draws per null, (G, B)
    critical: np.ndarray      # per-null order statistic
    metadata: dict = field(default_factory=dict)


def _order_statistic(draws: np.ndarray, level: float) -> float:
    idx = ceil(level * draws.shape[0])
    return float(np.sort(draws)[idx - 1])


def _inv_factor(sigma: np.ndarray) -> tuple[np.ndarray, bool]:
    """Cholesky factor of sigma, ridged when numerically singular."""
    m = sigma.shape[0]
    eig = np.linalg.eigvalsh(sigma)
    ridged = eig.min() <= 1e-10 * max(eig.max(), 1e-300)
    if ridged:
        tr = np.trace(sigma)
        sigma = sigma + (1e-8 * tr / m if tr > 0 else 1e-8) * np.eye(m)
    return cholesky(sigma, lower=True), ridged


def conditional_qlr_scan(nodes, scores_list, p: float, B: int, seed: int,
                         method: str) -> ConfidenceRegion:
    """Invert the conditional criterion-gap test given per-node score matrices.

    The moment process enters only through the per-observation scores, so
    low-dimensional and orthogonalized high-dimensional callers share the
    mechanics. Works throughout in scaled moments h = sqrt(n) * mean score,
    keeping sample and simulated statistics on one scale.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if int(B) != B or B < 1:
        raise DomainError(f"draw count must be a positive integer, got {B}")
    B = int(B)
    scores = np.stack([np.asarray(s, dtype=float) for s in scores_list])
    gcount, n, m = scores.shape
    if gcount != len(nodes):
        raise ConfigurationError(f"{len(nodes)} nodes but {gcount} score matrices")
    hmat = np.sqrt(n) * scores.mean(axis=1)                      # (G, m)
    cross = np.einsum("anj,bnk->abjk", scores, scores) / n       # (G, G, m, m)
    ridged_nodes = 0
    diag_chol = []
    for a in range(gcount):
        fac, ridged = _inv_factor(cross[a, a])
        diag_chol.append(fac)
        ridged_nodes += ridged
    mstat = np.array([
        hmat[a] @ cho_solve((diag_chol[a], True), hmat[a]) for a in range(gcount)
    ])
    qlr = mstat - mstat.min()

    critical = np.empty(gcount)
    centered = np.empty((gcount, gcount, m))
    simulated = np.empty((gcount, B))
    for j0 in range(gcount):
        chol0 = diag_chol[j0]
        # P(a) = Sigma(a, a0) Sigma(a0, a0)^-1, the projection that carries
        # the null draw into every other node's moment
        proj = np.stack([
            cho_solve((chol0, True), cross[a, j0].T).T for a in range(gcount)
        ])                                                        # (G, m, m)
        smat = hmat - np.einsum("aij,j->ai", proj, hmat[j0])      # (G, m)
        centered[j0] = smat
        rng = spawn_rng(seed, 23, j0)
        zeta = rng.normal(size=(B, m)) @ chol0.T                  # N(0, Sigma00)
        hstar = smat[:, None, :] + np.einsum("bj,aij->abi", zeta, proj)
        mstar = np.empty((gcount, B))
        for a in range(gcount):
            solved = cho_solve((diag_chol[a], True), hstar[a].T)  # (m, B)
            mstar[a] = np.einsum("bi,ib->b", hstar[a], solved)
        draws = mstar[j0] - mstar.min(axis=0)
        simulated[j0] = draws
        critical[j0] = _order_statistic(draws, 1.0 - p)

    record = QlrDraws(
        centered=centered,
        simulated=simulated,
        critical=critical,
        metadata={"scaling": "scaled-moments", "B": B, "seed": seed},
    )
    return ConfidenceRegion(
        method=method,
        level=1.0 - p,
        grid=tuple(np.asarray(node, dtype=float).reshape(-1) for node in nodes),
        statistic=qlr,
        critical=critical,
        accept=qlr <= critical,
        metadata={"p": p, "B": B, "seed": seed, "ridged_nodes": ridged_nodes,
                  "draws": record, "scaling": "scaled-moments"},
    )


def qlr_region(ds: Dataset, tau: float, alpha_grid, p: float = 0.05,
               B: int = 500, seed: int = 0,
               h: float | None = None) -> ConfidenceRegion:
    """Conditional criterion-gap region on the concentrated moment process.

    Profiles the controls at every node with a plain check-loss fit and
    orthogonalizes the instruments with the unpenalized correction, then
    hands the per-node scores to the shared simulation engine.
    """
    nodes = _alpha_nodes(alpha_grid, ds.s)
    scores = []
    init = None
    for node in nodes:
        sc = ortho_score(ds, tau, node, profiling="plain", h=h, vartheta=0.0,
                         _beta_init=init)
        init = sc.beta_a
        scores.append(sc.scores)
    return conditional_qlr_scan(nodes, scores, p=p, B=B, seed=seed, method="qlr")


@dataclass(frozen=True)
class FiniteSampleDistribution:
    """Simulated law of the pivot criterion, instruments held fixed."""

    draws: np.ndarray          # sorted criterion draws
    moment_draws: np.ndarray   # (B, r) pre-weighting scaled moment vectors
    tau: float

    def critical(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise DomainError(f"p must lie in (0, 1), got {p}")
        return _order_statistic(self.draws, 1.0 - p)


def finite_sample_distribution(psi_matrix, tau: float, omega, B: int = 1000,
                               seed: int = 0) -> FiniteSampleDistribution:
    """Exact-pivot simulation: indicator events at truth are Bernoulli(tau).

    Conditional on the instrument rows, the criterion at the true
    parameter is a fixed quadratic form in centered Bernoulli sums, which
    this draws directly. No appeal to sample size anywhere.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if int(B) != B or B < 1:
        raise DomainError(f"draw count must be a positive integer, got {B}")
    B = int(B)
    psi = np.atleast_2d(np.asarray(psi_matrix, dtype=float))
    n, r = psi.shape
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    if omega.shape != (r, r):
        raise ConfigurationError(f"weight must be {r}x{r}, got {omega.shape}")
    if not np.allclose(omega, omega.T):
        raise ConfigurationError("weight matrix must be symmetric")
    if np.linalg.eigvalsh(omega).min() < -1e-10 * max(abs(omega).max(), 1e-300):
        raise ConfigurationError("weight matrix must be positive semidefinite")
    rng = spawn_rng(seed, 29)
    coins = rng.random(size=(B, n)) < tau
    moments = (tau - coins) @ psi / np.sqrt(n)                    # (B, r)
    draws = np.einsum("bi,ij,bj->b", moments, omega, moments)
    return FiniteSampleDistribution(
        draws=np.sort(draws), moment_draws=moments, tau=tau,
    )


def finite_sample_region(ds: Dataset, tau: float, theta_grid, p: float = 0.05,
                         B: int = 1000, seed: int = 0,
                         spec: ModelSpec | None = None):
    """Joint exact region over the full parameter grid, plus projections.

    The joint inversion is exact (up to simulation error in the critical
    value); the per-coordinate intervals are projections of the joint set
    and may be conservative.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    axes = [np.sort(np.asarray(g, dtype=float).reshape(-1)) for g in theta_grid]
    if any(ax.size == 0 for ax in axes):
        raise DomainError("parameter grid is empty")
    dim = ds.s + ds.k
    if len(axes) != dim:
        raise ConfigurationError(f"grid has {len(axes)} axes, needs {dim}")
    total = int(np.prod([ax.size for ax in axes]))
    if total > 10_000_000:
        raise ConfigurationError(
            f"parameter grid has {total} nodes (limit 1e7); coarsen the grid "
            "or fix some coordinates and project"
        )
    spec = spec if spec is not None else ModelSpec(tau=tau)
    obj = GmmObjective(ds, spec)
    psi = instrument_matrix(ds, spec.instrument_rule)
    dist = finite_sample_distribution(psi, tau, obj.weight, B=B, seed=seed)
    crit = dist.critical(p)
    nodes = np.stack([np.asarray(node, dtype=float) for node in product(*axes)])
    stats_arr = np.empty(total)
    block = max(1, 6_000_000 // ds.n)
    for start in range(0, total, block):
        stats_arr[start:start + block] = obj.values(nodes[start:start + block])
    accept = stats_arr <= crit
    region = ConfidenceRegion(
        method="finite-sample",
        level=1.0 - p,
        grid=tuple(nodes),
        statistic=stats_arr,
        critical=np.full(total, crit),
        accept=accept,
        metadata={"p": p, "B": B, "seed": seed, "projection": "conservative"},
    )
    intervals = [region.interval(c) for c in range(dim)]
    return region, intervals
