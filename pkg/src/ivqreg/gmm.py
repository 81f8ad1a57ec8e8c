"""Direct GMM for the instrumental quantile model.

The moment contribution of one row is (tau - 1{y - d'alpha - x'beta <= 0})
times the instrument vector; a zero residual counts as an exceedance. The
quadratic objective is the sample size times g' Omega g, with a default
weighting that inverts the Bernoulli-scaled instrument second moment, so
the objective is scale-free in the instruments. An optional Gaussian
survival smoother replaces the indicator to make the objective
differentiable; `minimize_gmm` runs either an exhaustive grid scan or
multistart local search on the smoothed surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import islice, product

import numpy as np
from scipy.linalg import qr as pivoted_qr
from scipy.optimize import minimize as scipy_minimize
from scipy.special import ndtr

from .data import Dataset, EstimateResult, ModelSpec, ParameterBox, instrument_matrix
from .exceptions import ConfigurationError, DomainError, SingularityError
from .quantreg import _check_tau, _phi, default_qr_bandwidth, fit_qr


def _regressors(ds: Dataset) -> np.ndarray:
    return np.hstack([ds.d, ds.x])


def _psi_labels(ds: Dataset, rule, r: int) -> tuple[str, ...]:
    if rule == "zx":
        return ds.z_labels + ds.x_labels
    if rule == "z":
        return ds.z_labels
    return tuple(f"psi{j + 1}" for j in range(r))


def moment_vector(y_i, d_i, x_i, psi_i, theta, tau: float) -> np.ndarray:
    """Moment contribution of a single row.

    Returns (tau - 1{y - d'alpha - x'beta <= 0}) * psi with theta the
    stacked (alpha, beta). Every component is bounded by
    max(tau, 1 - tau) * |psi|.
    """
    tau = _check_tau(tau)
    d_i = np.asarray(d_i, dtype=float).reshape(-1)
    x_i = np.asarray(x_i, dtype=float).reshape(-1)
    psi_i = np.asarray(psi_i, dtype=float).reshape(-1)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != d_i.size + x_i.size:
        raise ConfigurationError(
            f"theta has {theta.size} components, regressors have {d_i.size + x_i.size}"
        )
    resid = float(y_i) - d_i @ theta[: d_i.size] - x_i @ theta[d_i.size :]
    return (tau - (resid <= 0.0)) * psi_i


def sample_moments(ds: Dataset, theta, tau: float, psi_rule="zx") -> np.ndarray:
    """Sample mean of the row moments at theta."""
    tau = _check_tau(tau)
    psi = instrument_matrix(ds, psi_rule)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    resid = ds.y - _regressors(ds) @ theta
    return psi.T @ (tau - (resid <= 0.0)) / ds.n


def default_weight(ds: Dataset, tau: float, psi_rule="zx") -> np.ndarray:
    """Inverse of tau*(1-tau) times the instrument second-moment matrix."""
    tau = _check_tau(tau)
    psi = instrument_matrix(ds, psi_rule)
    r = psi.shape[1]
    _, rmat, piv = pivoted_qr(psi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rmat))
    tol = (diag.max() if diag.size else 0.0) * max(psi.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < r:
        labels = _psi_labels(ds, psi_rule, r)
        bad = sorted(labels[j] for j in piv[rank:])
        raise SingularityError(
            f"instrument second-moment matrix is singular; dependent columns: {bad}"
        )
    second = tau * (1.0 - tau) * (psi.T @ psi) / ds.n
    omega = np.linalg.inv(second)
    return 0.5 * (omega + omega.T)


def survival_kernel(u, h: float):
    """Gaussian survival weight, the probability that kernel noise exceeds u.

    Monotone nonincreasing in u, equal to 1/2 at u = 0, and converging to
    the indicator 1{u < 0} as h shrinks.
    """
    h = float(h)
    if h <= 0.0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    return ndtr(-np.asarray(u, dtype=float) / h)


def smoothed_sample_moments(ds: Dataset, theta, tau: float, psi_rule="zx", h: float = 1.0) -> np.ndarray:
    """Sample moments with the indicator replaced by the survival smoother."""
    tau = _check_tau(tau)
    psi = instrument_matrix(ds, psi_rule)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    resid = ds.y - _regressors(ds) @ theta
    return psi.T @ (tau - survival_kernel(resid, h)) / ds.n


def smoothed_moment_jacobian(ds: Dataset, theta, tau: float, psi_rule="zx", h: float = 1.0) -> np.ndarray:
    """Derivative of the smoothed sample moments in theta, r x (s + k)."""
    _check_tau(tau)
    h = float(h)
    if h <= 0.0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    psi = instrument_matrix(ds, psi_rule)
    wmat = _regressors(ds)
    theta = np.asarray(theta, dtype=float).reshape(-1)
    kw = _phi((ds.y - wmat @ theta) / h)
    return -(psi * kw[:, None]).T @ wmat / (ds.n * h)


def default_smoothing_bandwidth(ds: Dataset, tau: float) -> float:
    """Rate-n^(-1/3) plug-in bandwidth from a pilot quantile fit on [D, X]."""
    pilot = fit_qr(ds.y, _regressors(ds), tau)
    return default_qr_bandwidth(pilot.residuals)


@dataclass
class GmmObjective:
    """Quadratic moment criterion n * g(theta)' Omega g(theta).

    weight defaults to `default_weight`; a positive bandwidth h switches
    every evaluation to the smoothed moments.
    """

    ds: Dataset
    spec: ModelSpec
    weight: np.ndarray | None = None
    h: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._psi = instrument_matrix(self.ds, self.spec.instrument_rule)
        self._wmat = _regressors(self.ds)
        if self.weight is None:
            self.weight = default_weight(self.ds, self.spec.tau, self.spec.instrument_rule)
        omega = np.atleast_2d(np.asarray(self.weight, dtype=float))
        r = self._psi.shape[1]
        if omega.shape != (r, r):
            raise ConfigurationError(f"weight must be {r}x{r}, got {omega.shape}")
        if not np.allclose(omega, omega.T, atol=1e-8 * max(1.0, np.abs(omega).max())):
            raise ConfigurationError("weight matrix must be symmetric")
        if np.linalg.eigvalsh(0.5 * (omega + omega.T)).min() < -1e-8 * max(1.0, np.abs(omega).max()):
            raise ConfigurationError("weight matrix must be positive semidefinite")
        self.weight = 0.5 * (omega + omega.T)
        if self.h is not None:
            self.h = float(self.h)
            if self.h <= 0.0:
                raise DomainError(f"bandwidth must be positive, got {self.h}")

    @property
    def dim(self) -> int:
        return self._wmat.shape[1]

    def moments(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        resid = self.ds.y - self._wmat @ theta
        if self.h is None:
            s = self.spec.tau - (resid <= 0.0)
        else:
            s = self.spec.tau - ndtr(-resid / self.h)
        return self._psi.T @ s / self.ds.n

    def value(self, theta) -> float:
        g = self.moments(theta)
        return float(self.ds.n * g @ self.weight @ g)

    def values(self, thetas: np.ndarray) -> np.ndarray:
        """Objective at each row of thetas in one vectorized pass."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        resid = self.ds.y[:, None] - self._wmat @ thetas.T
        if self.h is None:
            s = self.spec.tau - (resid <= 0.0)
        else:
            s = self.spec.tau - ndtr(-resid / self.h)
        g = self._psi.T @ s / self.ds.n
        return self.ds.n * np.einsum("rb,rq,qb->b", g, self.weight, g)

    def gradient(self, theta) -> np.ndarray:
        if self.h is None:
            raise ConfigurationError("gradient requires a smoothing bandwidth")
        g = self.moments(theta)
        jac = smoothed_moment_jacobian(
            self.ds, theta, self.spec.tau, self.spec.instrument_rule, self.h
        )
        return 2.0 * self.ds.n * jac.T @ (self.weight @ g)


def _grid_axes(theta_space, dim: int, grid_points: int):
    if isinstance(theta_space, ParameterBox):
        if theta_space.dim != dim:
            raise ConfigurationError(
                f"parameter box has dimension {theta_space.dim}, objective needs {dim}"
            )
        return [np.linspace(lo, hi, grid_points)
                for lo, hi in zip(theta_space.lower, theta_space.upper)]
    axes = [np.asarray(a, dtype=float).reshape(-1) for a in theta_space]
    if len(axes) != dim:
        raise ConfigurationError(f"got {len(axes)} grid axes, objective needs {dim}")
    if any(a.size == 0 for a in axes):
        raise DomainError("parameter space is empty")
    return axes


def _grid_scan(obj: GmmObjective, axes) -> tuple[np.ndarray, float, int]:
    # lexicographic scan in memory-bounded blocks; first strict improvement
    # wins, which keeps ties at the lexicographically smallest node
    n = obj.ds.n
    block_size = max(1, int(6_000_000 // max(n, 1)))
    nodes = product(*axes)
    best_val = np.inf
    best_node = None
    examined = 0
    while True:
        block = list(islice(nodes, block_size))
        if not block:
            break
        thetas = np.asarray(block, dtype=float)
        vals = obj.values(thetas)
        examined += thetas.shape[0]
        j = int(np.argmin(vals))
        v = float(vals[j])
        if v < best_val - 1e-14 * (1.0 + abs(v)):
            best_val, best_node = v, thetas[j]
    if best_node is None:
        raise DomainError("parameter space is empty")
    return best_node, best_val, examined


def _multistart(obj: GmmObjective, box: ParameterBox, starts: int, seed: int):
    from .rng import spawn_rng

    if obj.h is None:
        search = GmmObjective(obj.ds, obj.spec, weight=obj.weight,
                              h=default_smoothing_bandwidth(obj.ds, obj.spec.tau))
    else:
        search = obj
    rng = spawn_rng(seed, 907)
    points = [0.5 * (box.lower + box.upper)]
    for _ in range(max(0, starts - 1)):
        points.append(box.lower + rng.random(box.dim) * box.width)
    bounds = list(zip(box.lower, box.upper))
    candidates = []
    for start in points:
        res = scipy_minimize(search.value, start, jac=search.gradient,
                             method="L-BFGS-B", bounds=bounds,
                             options={"maxiter": 200})
        candidates.append(np.clip(res.x, box.lower, box.upper))
        candidates.append(np.asarray(start, dtype=float))
    vals = np.array([obj.value(c) for c in candidates])
    best_val = float(vals.min())
    tied = [c for c, v in zip(candidates, vals)
            if v <= best_val + 1e-12 * (1.0 + abs(best_val))]
    tied.sort(key=tuple)
    return tied[0], best_val, len(candidates)


def minimize_gmm(obj: GmmObjective, theta_space, strategy: str = "grid", *,
                 grid_points: int = 25, starts: int = 8, seed: int = 0) -> EstimateResult:
    """Minimize the moment criterion over a box or explicit grid axes.

    strategy "grid" scans the cartesian product exhaustively; "multistart"
    runs local search on the smoothed surface from scattered starts and
    reports the best candidate under the original objective.
    """
    if theta_space is None:
        raise DomainError("parameter space is empty")
    if strategy == "grid":
        axes = _grid_axes(theta_space, obj.dim, grid_points)
        theta, val, examined = _grid_scan(obj, axes)
    elif strategy == "multistart":
        if not isinstance(theta_space, ParameterBox):
            raise ConfigurationError("multistart requires a ParameterBox")
        if theta_space.dim != obj.dim:
            raise ConfigurationError(
                f"parameter box has dimension {theta_space.dim}, objective needs {obj.dim}"
            )
        theta, val, examined = _multistart(obj, theta_space, starts, seed)
    else:
        raise ConfigurationError(f"unknown strategy {strategy!r}; use 'grid' or 'multistart'")
    s = obj.ds.s
    return EstimateResult(
        tau=obj.spec.tau,
        alpha=theta[:s],
        beta=theta[s:],
        method=f"gmm-{strategy}",
        objective=val,
        metadata={"strategy": strategy, "points_examined": examined, "h": obj.h},
    )
