"""Brute-force reference implementations for cross-checking.

These trade all efficiency for transparency: exhaustive enumeration on
problems small enough to enumerate. They share no solver code with the
estimators they check.
"""

from __future__ import annotations

from itertools import combinations, product

import numpy as np

from .exceptions import ConfigurationError, DomainError


def oracle_qr(y, w, tau: float) -> tuple[np.ndarray, float]:
    """Exact check-loss minimizer by enumerating interpolation subsets.

    Every quantile regression admits an optimal coefficient vector that
    interpolates dim(w) observations, so trying all subsets is exact.
    Restricted to n <= 14 and at most 3 columns. Ties resolve to the
    lexicographically smallest coefficient vector.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    n, p = w.shape
    if n > 14 or p > 3:
        raise ConfigurationError(f"oracle_qr limited to n <= 14, p <= 3; got n={n}, p={p}")
    if n < p:
        raise ConfigurationError("need at least p observations")
    best_loss = np.inf
    best_coef = None
    for subset in combinations(range(n), p):
        ws = w[list(subset)]
        try:
            b = np.linalg.solve(ws, y[list(subset)])
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(b)):
            continue
        r = y - w @ b
        loss = float(np.mean(r * (tau - (r < 0.0))))
        if loss < best_loss - 4e-12 * (1.0 + abs(loss)):
            best_loss, best_coef = loss, b
        elif loss <= best_loss + 4e-12 * (1.0 + abs(best_loss)):
            if best_coef is None or tuple(b) < tuple(best_coef):
                best_loss, best_coef = min(loss, best_loss), b
    if best_coef is None:
        raise ConfigurationError("design matrix admits no nonsingular interpolation subset")
    return best_coef, best_loss


def oracle_gmm_grid(objective, grid_axes) -> tuple[np.ndarray, float]:
    """Global minimum of `objective` over the cartesian grid, exhaustively.

    objective: callable on a 1-d parameter vector. Ties resolve to the
    lexicographically smallest node.
    """
    axes = [np.asarray(a, dtype=float).reshape(-1) for a in grid_axes]
    best_val = np.inf
    best_node = None
    for node in product(*axes):
        theta = np.asarray(node)
        val = float(objective(theta))
        if val < best_val - 1e-14 * (1.0 + abs(val)):
            best_val, best_node = val, theta
    if best_node is None:
        raise ConfigurationError("empty grid")
    return best_node, best_val


def oracle_bernoulli_exact(psi, tau: float, omega) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of the finite-sample pivot by enumerating all outcomes.

    The pivot is v' omega v with v = sum_i (tau - B_i) psi_i / sqrt(n)
    and B_i iid Bernoulli(tau). Enumerates all 2^n sign patterns with
    their exact probabilities; n <= 20. Returns (values, probabilities)
    sorted by value with duplicates (within 1e-12 relative) merged.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    n = psi.shape[0]
    if n > 20:
        raise ConfigurationError(f"oracle_bernoulli_exact limited to n <= 20, got {n}")
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    # all outcomes as a (2^n, n) 0/1 matrix, bit by bit
    codes = np.arange(2 ** n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n)[None, :]) & 1
    weights = (tau - bits) @ psi / np.sqrt(n)  # (2^n, r)
    stats = np.einsum("ij,jk,ik->i", weights, omega, weights)
    ones = bits.sum(axis=1)
    probs = tau ** ones * (1.0 - tau) ** (n - ones)
    order = np.argsort(stats, kind="stable")
    stats, probs = stats[order], probs[order]
    vals, ps = [], []
    for v, p in zip(stats, probs):
        if vals and abs(v - vals[-1]) <= 1e-12 * (1.0 + abs(v)):
            ps[-1] += p
        else:
            vals.append(float(v))
            ps.append(float(p))
    return np.asarray(vals), np.asarray(ps)


def oracle_l1_quadratic(jmat, m, vartheta: float) -> np.ndarray:
    """Exact minimizer of 0.5 d'Jd - m'd + vartheta*||d||_1 by sign enumeration.

    Tries all 3^k sign patterns (-, 0, +); for each, solves the KKT
    equalities on the active set and keeps patterns whose solution signs
    and inactive-set gradients are consistent. k <= 8.
    """
    jmat = np.atleast_2d(np.asarray(jmat, dtype=float))
    m = np.asarray(m, dtype=float).reshape(-1)
    k = m.shape[0]
    if k > 8:
        raise ConfigurationError(f"sign enumeration limited to k <= 8, got {k}")
    if vartheta < 0.0:
        raise DomainError("vartheta must be nonnegative")
    best_val = np.inf
    best = None
    for signs in product((-1, 0, 1), repeat=k):
        s = np.asarray(signs, dtype=float)
        active = s != 0.0
        d = np.zeros(k)
        if active.any():
            ja = jmat[np.ix_(active, active)]
            rhs = m[active] - vartheta * s[active]
            try:
                da = np.linalg.solve(ja, rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(np.sign(da) * s[active] < 0.0):
                continue  # solution contradicts the assumed pattern
            d[active] = da
        grad_inactive = jmat[~active] @ d - m[~active]
        if np.any(np.abs(grad_inactive) > vartheta + 1e-10):
            continue
        val = 0.5 * d @ jmat @ d - m @ d + vartheta * np.abs(d).sum()
        if val < best_val - 1e-14 * (1.0 + abs(val)):
            best_val, best = val, d
    if best is None:
        raise ConfigurationError("no consistent sign pattern found (is J positive definite?)")
    return best
