"""Check-loss quantile regression.

The solver minimizes the exact check loss by Newton steps on a
convolution-smoothed surrogate with a shrinking smoothing parameter,
then polishes with a basic-solution refinement: on problems with at
most 20 regressors the optimum interpolates dim(W) observations, so the
refinement enumerates candidate interpolation sets near the smoothed
solution, verifies global optimality through the subgradient
certificate, and falls back to an exact LP in the rare uncertified
case. Ties on flat optimal faces resolve to the lexicographically
smallest coefficient vector; in the scalar case this is the
low-endpoint sample quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import ndtr

from .exceptions import ConfigurationError, DomainError, SingularityError, SolverError

_SQRT2PI = float(np.sqrt(2.0 * np.pi))
_POLISH_MAX_DIM = 20


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    return tau


def check_loss(u, tau: float):
    """Asymmetric absolute loss u * (tau - 1{u < 0}); zero at u = 0."""
    tau = _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0.0))


def _phi(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, -1e120, 1e120)  # t*t overflow guard; phi underflows to 0 long before
    return np.exp(-0.5 * t * t) / _SQRT2PI


def _smooth_state(y, w, b, tau: float, h: float):
    # loss, survival, and kernel weights from a single transcendental pass
    r = y - w @ b
    t = r / h
    ph = _phi(t)
    nd = ndtr(-t)
    loss = float(np.mean(tau * r - r * nd + h * ph))
    return r, nd, ph, loss


def _exact_loss_many(y: np.ndarray, w: np.ndarray, coefs: np.ndarray, tau: float) -> np.ndarray:
    # coefs: (c, p) candidate rows; returns mean check loss per candidate
    resid = y[None, :] - coefs @ w.T
    return np.mean(resid * (tau - (resid < 0.0)), axis=1)


def _lex_order(coefs: np.ndarray) -> np.ndarray:
    # row order: first coordinate primary, then second, ...
    return np.lexsort(coefs.T[::-1])


def _newton_path(y, w, tau: float, h_floor_rel: float, init=None) -> np.ndarray:
    n, p = w.shape
    if init is not None:
        b = np.array(init, dtype=float)
        h_start_rel = 0.05
    else:
        b, *_ = np.linalg.lstsq(w, y, rcond=None)
        h_start_rel = 0.5
    scale = float(np.std(y - w @ b))
    if scale <= 0.0:
        scale = max(1e-8, 1e-8 * float(np.max(np.abs(y), initial=0.0)))
    h_floor = max(scale * h_floor_rel, 1e-300)
    h = max(scale * h_start_rel, h_floor)
    gtol = 1e-10 * (1.0 + float(np.sqrt(np.mean(w * w))))
    wrms = max(float(np.sqrt(np.mean(w * w))), 1e-12)
    while True:
        last = h <= h_floor * (1.0 + 1e-12)
        max_iter = 12 if last else 6
        r, nd, ph, loss = _smooth_state(y, w, b, tau, h)
        for _ in range(max_iter):
            grad = -w.T @ (tau - nd) / n
            gmax = float(np.max(np.abs(grad)))
            if gmax <= (gtol if last else 2e-4 * wrms):
                break
            kw = ph / (n * h)
            hess = (w * kw[:, None]).T @ w
            ridge = 1e-12 * (np.trace(hess) / p + 1.0)
            hess[np.diag_indices_from(hess)] += ridge
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                step = -grad
            lam, accepted = 1.0, False
            for _ in range(12):
                trial = b + lam * step
                r2, nd2, ph2, loss2 = _smooth_state(y, w, trial, tau, h)
                if loss2 < loss - 1e-16:
                    b, r, nd, ph, loss = trial, r2, nd2, ph2, loss2
                    accepted = True
                    break
                lam *= 0.25
            if not accepted:
                break
        if h <= h_floor * (1.0 + 1e-12):
            return b
        h = max(h / 20.0, h_floor)


def _interp_candidates(y: np.ndarray, w: np.ndarray, pool: np.ndarray, p: int) -> np.ndarray:
    subsets = np.asarray(list(combinations(pool.tolist(), p)), dtype=np.intp)
    if subsets.size == 0:
        return np.empty((0, p))
    mats = w[subsets]  # (c, p, p)
    vecs = y[subsets]  # (c, p)
    dets = np.abs(np.linalg.det(mats))
    row_norms = np.sqrt(np.sum(mats * mats, axis=2))
    ok = dets > 1e-12 * np.prod(np.maximum(row_norms, 1e-300), axis=1)
    if not ok.any():
        return np.empty((0, p))
    sols = np.linalg.solve(mats[ok], vecs[ok][..., None])[..., 0]
    finite = np.all(np.isfinite(sols), axis=1)
    return sols[finite]


def _certificate(y: np.ndarray, w: np.ndarray, tau: float, b: np.ndarray, ztol: float) -> bool:
    """Subgradient optimality check: exact for the convex objective."""
    r = y - w @ b
    flex = np.abs(r) <= ztol
    rhs = -w[~flex].T @ (tau - (r[~flex] < 0.0))
    wf = w[flex]
    nf = wf.shape[0]
    ctol = 1e-7
    if nf == 0:
        return bool(np.max(np.abs(rhs)) <= ctol * max(1.0, np.abs(w).max()))
    if nf == wf.shape[1]:
        try:
            v = np.linalg.solve(wf.T, rhs)
        except np.linalg.LinAlgError:
            return False
        return bool(np.all(v >= tau - 1.0 - ctol) and np.all(v <= tau + ctol))
    # degenerate vertex: box feasibility as a tiny LP
    res = linprog(
        c=np.zeros(nf),
        A_eq=wf.T,
        b_eq=rhs,
        bounds=[(tau - 1.0 - ctol, tau + ctol)] * nf,
        method="highs",
    )
    return bool(res.status == 0)


def _lp_quantreg(y: np.ndarray, w: np.ndarray, tau: float, penalty: np.ndarray | None) -> np.ndarray:
    """Exact LP solve (split-variable form); penalty is the per-column l1 weight."""
    n, p = w.shape
    ws = sparse.csc_matrix(w)
    eye = sparse.identity(n, format="csc")
    a_eq = sparse.hstack([ws, -ws, eye, -eye], format="csc")
    pen = np.zeros(p) if penalty is None else np.asarray(penalty, dtype=float)
    c = np.concatenate([pen, pen, np.full(n, tau / n), np.full(n, (1.0 - tau) / n)])
    res = linprog(
        c,
        A_eq=a_eq,
        b_eq=y,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverError(f"LP quantile regression failed: {res.message}", last_iterate=None)
    return res.x[:p] - res.x[p : 2 * p]


@dataclass
class QRFit:
    """Quantile regression fit."""

    coef: np.ndarray
    tau: float
    objective: float
    residuals: np.ndarray
    rank_deficient: bool = False
    certified: bool = True
    covariance: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)


def _small_pool(r_abs: np.ndarray, size: int) -> np.ndarray:
    n = r_abs.shape[0]
    if size >= n:
        return np.arange(n)
    part = np.argpartition(r_abs, size)[:size]
    return part[np.argsort(r_abs[part], kind="stable")]


def fit_qr(y, w, tau: float, _init=None) -> QRFit:
    """Minimize the mean check loss of y - w @ b over b.

    Parameters
    ----------
    y : array (n,)
    w : array (n, p)
        Design matrix; no intercept is added.
    tau : float
        Quantile level in (0, 1).
    _init : array (p,), optional
        Warm start (used by profile sweeps); does not change the result,
        only the path to it.

    Returns
    -------
    QRFit with the lexicographically smallest minimizer on flat optima
    and the exact objective value. Rank-deficient designs are fitted
    but flagged.
    """
    tau = _check_tau(tau)
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n, p = w.shape
    if y.shape[0] != n:
        raise ConfigurationError(f"y has {y.shape[0]} rows, w has {n}")
    if n == 0:
        raise ConfigurationError("empty sample")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ConfigurationError("non-finite values in y or w")
    gram_eigs = np.linalg.eigvalsh(w.T @ w)
    rank_deficient = bool(n < p or gram_eigs[0] <= 1e-12 * max(gram_eigs[-1], 1e-300))

    if p > _POLISH_MAX_DIM:
        b = _newton_path(y, w, tau, h_floor_rel=1e-8, init=_init)
        r = y - w @ b
        obj = float(np.mean(check_loss(r, tau)))
        return QRFit(coef=b, tau=tau, objective=obj, residuals=r,
                     rank_deficient=rank_deficient, certified=False,
                     metadata={"solver": "smoothed-newton"})

    b0 = _newton_path(y, w, tau, h_floor_rel=3e-4, init=_init)
    ztol = 1e-9 * (1.0 + float(np.max(np.abs(y), initial=0.0)))
    solver = "smoothed-newton+polish"
    best = b0
    certified = False
    for extra in (5, 3 * p + 16, -1):
        if extra < 0:
            # uncertified twice: exact LP solve, then tie polish around it
            best = _lp_quantreg(y, w, tau, None)
            solver = "lp"
            extra = 5
        r0 = np.abs(y - w @ best)
        pool = _small_pool(r0, min(n, p + extra))
        verts = _interp_candidates(y, w, pool, p)
        cands = np.vstack([verts, best[None, :]]) if verts.size else best[None, :]
        losses = _exact_loss_many(y, w, cands, tau)
        fmin = float(losses.min())
        tie_mask = losses <= fmin + 4e-12 * (1.0 + abs(fmin))
        # an optimal basic solution always exists; keep the iterate only
        # when no interpolation vertex ties it
        if verts.size and tie_mask[: verts.shape[0]].any():
            tie_mask[verts.shape[0] :] = False
        tie = cands[tie_mask]
        # the loss tolerance can admit a near-optimal impostor vertex, so
        # take the lexicographically first candidate that certifies
        for idx in _lex_order(tie):
            if _certificate(y, w, tau, tie[idx], ztol):
                best, certified = tie[idx], True
                break
        else:
            best = tie[_lex_order(tie)[0]]
        if certified:
            break
    r = y - w @ best
    obj = float(np.mean(check_loss(r, tau)))
    return QRFit(coef=best, tau=tau, objective=obj, residuals=r,
                 rank_deficient=rank_deficient, certified=certified,
                 metadata={"solver": solver})


def default_qr_bandwidth(residuals: np.ndarray) -> float:
    """Density-estimation bandwidth 1.06 * sd(residuals) * n^(-1/3)."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n = r.shape[0]
    sd = float(np.std(r))
    if sd <= 0.0:
        sd = 1.0
    return 1.06 * sd * n ** (-1.0 / 3.0)


def qr_covariance(y, w, tau: float, coef: np.ndarray, h: float | None = None) -> np.ndarray:
    """Sandwich covariance of sqrt(n) * (coef - truth).

    tau*(1-tau) * J^-1 (W'W/n) J^-1 with J the kernel-weighted outer
    moment (1/(n h)) sum_i w_i w_i' K(r_i / h), Gaussian K. The default
    bandwidth is 1.06 * sd(residuals) * n^(-1/3).
    """
    tau = _check_tau(tau)
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n = w.shape[0]
    r = y - w @ np.asarray(coef, dtype=float)
    if h is None:
        h = default_qr_bandwidth(r)
    h = float(h)
    if h <= 0.0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    kw = _phi(r / h) / (n * h)
    jmat = (w * kw[:, None]).T @ w
    smat = w.T @ w / n
    cond = np.linalg.cond(jmat)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularityError("kernel-weighted design moment is near-singular",
                               condition_number=float(cond))
    jinv = np.linalg.inv(jmat)
    cov = tau * (1.0 - tau) * jinv @ smat @ jinv
    return 0.5 * (cov + cov.T)


def fit_qr_l1(y, w, tau: float, lam: float, loadings=None) -> QRFit:
    """l1-penalized quantile regression.

    Minimizes mean check loss + lam * sum_j loadings_j * |b_j|, solved
    as an exact LP. Omitted loadings mean an unweighted penalty (all
    ones); a zero loading leaves that column unpenalized. lam = 0
    delegates to fit_qr so the two agree exactly.
    """
    tau = _check_tau(tau)
    lam = float(lam)
    if lam < 0.0:
        raise DomainError(f"penalty level must be nonnegative, got {lam}")
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n, p = w.shape
    if loadings is None:
        loadings = np.ones(p)
    loadings = np.asarray(loadings, dtype=float).reshape(-1)
    if loadings.shape[0] != p:
        raise ConfigurationError(f"loadings must have length {p}, got {loadings.shape[0]}")
    if np.any(loadings < 0.0):
        raise DomainError("loadings must be nonnegative")
    if lam == 0.0 or not loadings.any():
        fit = fit_qr(y, w, tau)
        fit.metadata["penalty"] = 0.0
        return fit
    b = _lp_quantreg(y, w, tau, penalty=lam * loadings)
    r = y - w @ b
    loss = float(np.mean(check_loss(r, tau)))
    obj = loss + lam * float(loadings @ np.abs(b))
    rank_deficient = bool(np.linalg.matrix_rank(w) < min(n, p))
    return QRFit(coef=b, tau=tau, objective=obj, residuals=r,
                 rank_deficient=rank_deficient, certified=True,
                 metadata={"solver": "lp", "penalty": lam, "check_loss": loss})
