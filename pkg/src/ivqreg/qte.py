"""Quantile processes, plug-in outcome distributions, and treatment effects.

A fitted coefficient path tau -> (alpha, beta) defines the linear
structural quantile d'alpha(tau) + x'beta(tau). Integrating the
indicator of that curve over tau gives the conditional outcome
distribution of each treatment arm, averaging over the sample rows
gives the marginal one, and inverting the marginal distributions at a
common level gives the unconditional effect.

Crossing repair is a rearrangement applied to the evaluated curve, not
to the coefficients: sorting in tau at each evaluation point is exactly
monotone repair for the scalar curve, whereas monotone coefficients are
not even well-defined once x varies. Processes therefore carry a
`monotonized` flag and sort lazily at evaluation time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .exceptions import ConfigurationError, DomainError

BISECTION_STEPS = 80


def default_tau_grid() -> np.ndarray:
    """99 equispaced interior levels; beyond 0.01/0.99 is extrapolation."""
    return np.linspace(0.01, 0.99, 99)


@dataclass(frozen=True)
class QuantileProcess:
    """Coefficient path of the linear structural quantile."""

    tau_grid: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    monotonized: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        taus = np.asarray(self.tau_grid, dtype=float).reshape(-1)
        if taus.size == 0:
            raise ConfigurationError("tau grid must be nonempty")
        if np.any(taus <= 0.0) or np.any(taus >= 1.0):
            raise DomainError("quantile levels must lie in (0, 1)")
        if taus.size > 1 and not np.all(np.diff(taus) > 0.0):
            raise ConfigurationError("tau grid must be strictly increasing")
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if alpha.shape[0] != taus.size or beta.shape[0] != taus.size:
            raise ConfigurationError(
                f"need one coefficient row per level: {taus.size} levels, "
                f"alpha {alpha.shape}, beta {beta.shape}"
            )
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise DomainError("coefficient paths must be finite")
        object.__setattr__(self, "tau_grid", taus)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def s(self) -> int:
        return self.alpha.shape[1]

    @property
    def k(self) -> int:
        return self.beta.shape[1]

    def node_index(self, tau: float) -> int:
        """Grid index of tau; nearest node with a warning when off-grid."""
        tau = float(tau)
        if not 0.0 < tau < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {tau}")
        j = int(np.argmin(np.abs(self.tau_grid - tau)))
        if abs(self.tau_grid[j] - tau) > 1e-12:
            warnings.warn(
                f"tau {tau} is not a grid level; using nearest node "
                f"{self.tau_grid[j]}",
                stacklevel=3,
            )
        return j


def quantile_process(rows) -> QuantileProcess:
    """Assemble a process from per-level estimation rows.

    Accepts the rows produced by the per-level estimator; any row that
    carries an error aborts the assembly, naming the failed levels.
    """
    rows = list(rows)
    bad = [f"{r.tau}: {r.error}" for r in rows if r.error is not None]
    if bad:
        raise ConfigurationError(
            "cannot assemble a quantile process with failed levels: "
            + "; ".join(bad)
        )
    if not rows:
        raise ConfigurationError("no estimation rows given")
    return QuantileProcess(
        tau_grid=np.array([r.tau for r in rows]),
        alpha=np.vstack([r.result.alpha for r in rows]),
        beta=np.vstack([r.result.beta for r in rows]),
        metadata={"method": rows[0].result.method},
    )


def _evaluate_curves(proc: QuantileProcess, d, x) -> np.ndarray:
    """Quantile curve over the grid; columns follow the rows of x."""
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size != proc.s:
        raise ConfigurationError(f"d has {d.size} entries, process carries {proc.s}")
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    if x2.shape[1] != proc.k:
        raise ConfigurationError(f"x has {x2.shape[1]} columns, process carries {proc.k}")
    curves = (proc.alpha @ d)[:, None] + proc.beta @ x2.T
    if proc.monotonized:
        curves = np.sort(curves, axis=0)
    return curves


def structural_quantile(proc: QuantileProcess, tau: float, d, x) -> float:
    """Linear quantile evaluation at one level and one covariate point."""
    j = proc.node_index(tau)
    return float(_evaluate_curves(proc, d, x)[j, 0])


def monotonize(proc: QuantileProcess) -> QuantileProcess:
    """Mark the process for rearrangement at evaluation points.

    Sorting the evaluated curve in tau is idempotent and leaves
    already-monotone curves untouched, so repeated calls are harmless.
    """
    if proc.monotonized:
        return proc
    return replace(proc, monotonized=True)


def _trapezoid_weights(taus: np.ndarray) -> np.ndarray:
    """Nearest-level cell lengths on [0, 1].

    Interior weights match the trapezoid rule; the first and last cells
    run to 0 and 1 so the truncated tails are attributed to the extreme
    nodes and the weights sum to one. Keeps the level-integral inverse
    consistent with the quantile evaluation to within one grid step.
    """
    if taus.size == 1:
        return np.ones(1)
    mids = (taus[1:] + taus[:-1]) / 2.0
    return np.diff(np.concatenate([[0.0], mids, [1.0]]))


def _require_monotonized(proc: QuantileProcess, op: str):
    if not proc.monotonized:
        raise ConfigurationError(f"{op} needs a monotonized process; call monotonize first")


def _mean_cdf(curves: np.ndarray, w: np.ndarray, y: float) -> float:
    return float((w @ (curves <= y)).mean())


def conditional_cdf(proc: QuantileProcess, y: float, d, x) -> float:
    """Cell-weighted share of grid levels whose quantile lies at or below y."""
    _require_monotonized(proc, "conditional_cdf")
    curve = _evaluate_curves(proc, d, x)[:, :1]
    return _mean_cdf(curve, _trapezoid_weights(proc.tau_grid), float(y))


def unconditional_cdf(proc: QuantileProcess, ds: Dataset, y: float, d) -> float:
    """Conditional distribution averaged over the sample covariate rows."""
    _require_monotonized(proc, "unconditional_cdf")
    curves = _evaluate_curves(proc, d, ds.x)
    return _mean_cdf(curves, _trapezoid_weights(proc.tau_grid), float(y))


def _invert_cdf(curves, w, tau, lo, hi) -> float:
    if _mean_cdf(curves, w, lo) > tau or _mean_cdf(curves, w, hi) < tau:
        raise DomainError(
            f"level {tau} is not bracketed by the outcome range extended 10%; "
            "the fitted quantile curve leaves the observed outcome span"
        )
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _mean_cdf(curves, w, mid) >= tau:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _outcome_bracket(ds: Dataset) -> tuple[float, float]:
    span = float(ds.y.max() - ds.y.min())
    pad = 0.1 * span if span > 0.0 else 1.0
    return float(ds.y.min()) - pad, float(ds.y.max()) + pad


def marginal_quantile(proc: QuantileProcess, ds: Dataset, tau: float, d) -> float:
    """Invert the marginal outcome distribution of one treatment arm."""
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    _require_monotonized(proc, "marginal_quantile")
    lo, hi = _outcome_bracket(ds)
    return _invert_cdf(
        _evaluate_curves(proc, d, ds.x), _trapezoid_weights(proc.tau_grid), tau, lo, hi
    )


def unconditional_qte(proc: QuantileProcess, ds: Dataset, tau: float, d1, d0) -> float:
    """Difference of marginal outcome quantiles across two treatment arms."""
    return marginal_quantile(proc, ds, tau, d1) - marginal_quantile(proc, ds, tau, d0)


def qte_table_rows(proc: QuantileProcess, ds: Dataset, d1, d0, x_ref,
                   taus=None) -> list[list]:
    """Header plus one row per level: conditional at x_ref, unconditional."""
    _require_monotonized(proc, "qte_table_rows")
    if taus is None:
        taus = proc.tau_grid
    w = _trapezoid_weights(proc.tau_grid)
    lo, hi = _outcome_bracket(ds)
    curves1 = _evaluate_curves(proc, d1, ds.x)
    curves0 = _evaluate_curves(proc, d0, ds.x)
    rows = [["tau", "conditional_qte", "unconditional_qte"]]
    for t in taus:
        t = float(t)
        if not 0.0 < t < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {t}")
        cond = structural_quantile(proc, t, d1, x_ref) - structural_quantile(
            proc, t, d0, x_ref
        )
        q1 = _invert_cdf(curves1, w, t, lo, hi)
        q0 = _invert_cdf(curves0, w, t, lo, hi)
        rows.append([repr(t), repr(cond), repr(q1 - q0)])
    return rows
