"""Orthogonalized instruments for the quantile moment problem.

The exogenous-coefficient profile enters the moment condition as a
nuisance. Correcting the instruments to Z - delta X, with delta the
kernel-weighted regression of Z on X under the residual density weight,
makes the concentrated moments insensitive to first-order profile errors.
That insensitivity is what lets an l1-penalized profile with slow rates
ride along in high dimensions. delta itself is fit by an l1-penalized
quadratic program, one row per instrument, with an explicit KKT
certificate on every returned row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .data import Dataset, EstimateResult
from .exceptions import ConfigurationError, DomainError, SingularityError, SolverError
from .quantreg import QRFit, _check_tau, _phi, default_qr_bandwidth, fit_qr, fit_qr_l1


def kernel_jacobians(ds: Dataset, a, beta_a, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-weighted cross moments (M_hat, J_hat) at the profiled residual.

    M_hat = (1/(n h)) sum K(eps_i/h) z_i x_i' (m x k) and J_hat the same
    with x_i x_i' (k x k); Gaussian kernel, so J_hat is PSD.
    """
    h = float(h)
    if h <= 0.0:
        raise DomainError(f"bandwidth must be positive, got {h}")
    a = np.asarray(a, dtype=float).reshape(-1)
    beta_a = np.asarray(beta_a, dtype=float).reshape(-1)
    eps = ds.y - ds.d @ a - ds.x @ beta_a
    kw = _phi(eps / h) / (ds.n * h)
    m_hat = (ds.z * kw[:, None]).T @ ds.x
    j_hat = (ds.x * kw[:, None]).T @ ds.x
    return m_hat, 0.5 * (j_hat + j_hat.T)


def default_vartheta(m_hat: np.ndarray, n: int, scale: float = 1.1) -> float:
    """Penalty rate scale * max|M_hat| * sqrt(log(k)/n)."""
    k = np.atleast_2d(m_hat).shape[1]
    return scale * float(np.abs(m_hat).max()) * np.sqrt(np.log(k) / n)


def _soft(v: float, t: float) -> float:
    if v > t:
        return v - t
    if v < -t:
        return v + t
    return 0.0


def _cd_row(jmat: np.ndarray, m_row: np.ndarray, vartheta: float,
            gap_tol: float, max_sweeps: int = 50000) -> tuple[np.ndarray, float, float]:
    k = jmat.shape[0]
    diag = np.diag(jmat)
    delta = np.zeros(k)
    jd = np.zeros(k)
    gap = np.inf
    kkt = np.inf
    for _ in range(max_sweeps):
        for l in range(k):
            if diag[l] <= 0.0:
                continue
            partial = m_row[l] - jd[l] + diag[l] * delta[l]
            new = _soft(partial, vartheta) / diag[l]
            step = new - delta[l]
            if step != 0.0:
                jd = jd + jmat[:, l] * step
                delta[l] = new
        kkt = float(np.abs(jd - m_row).max()) if k else 0.0
        # dual point u = m - J delta is feasible once kkt <= vartheta, and
        # then the gap reduces to delta'J delta - m'delta + vartheta*|delta|_1
        gap = float(delta @ jd - m_row @ delta + vartheta * np.abs(delta).sum())
        if kkt <= vartheta + 1e-10 and gap <= gap_tol:
            return delta, kkt, gap
    raise SolverError(
        f"penalized delta row did not converge (gap {gap:.3e}, kkt {kkt:.3e})",
        last_iterate=delta,
    )


def _dantzig_row(jmat: np.ndarray, m_row: np.ndarray, vartheta: float) -> np.ndarray:
    k = jmat.shape[0]
    a_ub = np.block([[jmat, -jmat], [-jmat, jmat]])
    b_ub = np.concatenate([vartheta + m_row, vartheta - m_row])
    res = linprog(np.ones(2 * k), A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    if not res.success:
        raise SolverError(f"Dantzig row infeasible or unbounded: {res.message}")
    return res.x[:k] - res.x[k:]


@dataclass(frozen=True)
class DeltaFit:
    """Row-wise solution of the penalized instrument regression."""

    delta: np.ndarray       # m x k
    kkt: np.ndarray         # per-row sup-norm residual of J delta - m
    gap: np.ndarray         # per-row duality gap (nan for the Dantzig form)
    vartheta: float
    form: str

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.delta))


def regularized_delta(m_hat, j_hat, vartheta: float, form: str = "penalized",
                      gap_tol: float = 1e-8) -> DeltaFit:
    """Solve min 0.5 d'Jd - M_j d + vartheta |d|_1 for each instrument row.

    The returned rows all certify the KKT bound |d'J - M_j|_inf <=
    vartheta + 1e-8. form="dantzig" instead minimizes |d|_1 subject to
    that bound; both coincide at vartheta = 0 with nonsingular J.
    """
    if vartheta < 0.0:
        raise DomainError(f"penalty must be nonnegative, got {vartheta}")
    if form not in ("penalized", "dantzig"):
        raise ConfigurationError(f"unknown form {form!r}; use 'penalized' or 'dantzig'")
    m_hat = np.atleast_2d(np.asarray(m_hat, dtype=float))
    j_hat = np.atleast_2d(np.asarray(j_hat, dtype=float))
    m, k = m_hat.shape
    if j_hat.shape != (k, k):
        raise ConfigurationError(f"J must be {k}x{k}, got {j_hat.shape}")
    delta = np.zeros((m, k))
    kkt = np.zeros(m)
    gap = np.zeros(m)
    unpenalized_direct = vartheta == 0.0 and k > 0 and np.linalg.cond(j_hat) < 1e10
    for j in range(m):
        if form == "dantzig":
            delta[j] = _dantzig_row(j_hat, m_hat[j], vartheta)
            gap[j] = np.nan
        elif unpenalized_direct:
            delta[j] = np.linalg.solve(j_hat, m_hat[j])
            gap[j] = 0.0
        else:
            delta[j], _, gap[j] = _cd_row(j_hat, m_hat[j], vartheta, gap_tol)
        kkt[j] = float(np.abs(j_hat @ delta[j] - m_hat[j]).max()) if k else 0.0
        if kkt[j] > vartheta + 1e-8:
            raise SolverError(
                f"KKT certificate failed on row {j}: residual {kkt[j]:.3e} "
                f"exceeds {vartheta:.3e} + 1e-8",
                last_iterate=delta[j],
            )
    return DeltaFit(delta=delta, kkt=kkt, gap=gap, vartheta=float(vartheta), form=form)


def concentrated_scores(ds: Dataset, tau: float, a, beta_a, delta_a) -> np.ndarray:
    """Per-observation scores (tau - 1{eps <= 0}) (z - delta x), n x m."""
    tau = _check_tau(tau)
    a = np.asarray(a, dtype=float).reshape(-1)
    beta_a = np.asarray(beta_a, dtype=float).reshape(-1)
    delta_a = np.atleast_2d(np.asarray(delta_a, dtype=float))
    eps = ds.y - ds.d @ a - ds.x @ beta_a
    s = tau - (eps <= 0.0)
    psi = ds.z - ds.x @ delta_a.T
    return psi * s[:, None]


def concentrated_moments(ds: Dataset, tau: float, a, beta_a, delta_a) -> np.ndarray:
    """Mean of the orthogonalized scores at the profiled point."""
    return concentrated_scores(ds, tau, a, beta_a, delta_a).mean(axis=0)


def covariance_kernel(ds: Dataset, tau: float, a1, a2, beta_fn, delta_fn) -> np.ndarray:
    """Uncentered cross-product of concentrated scores at two slope points.

    beta_fn and delta_fn map a slope vector to its profile and instrument
    correction. The diagonal a1 = a2 gives a PSD Gram matrix.
    """
    s1 = concentrated_scores(ds, tau, a1, beta_fn(a1), delta_fn(a1))
    s2 = concentrated_scores(ds, tau, a2, beta_fn(a2), delta_fn(a2))
    return s1.T @ s2 / ds.n


@dataclass
class OrthoScore:
    """Everything the orthogonalized moment pipeline produced at one slope."""

    a: np.ndarray
    beta_a: np.ndarray
    delta_fit: DeltaFit
    m_hat: np.ndarray
    j_hat: np.ndarray
    moments: np.ndarray
    sigma: np.ndarray
    scores: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def delta_a(self) -> np.ndarray:
        return self.delta_fit.delta


def _profile_beta(ds: Dataset, tau: float, a, profiling: str, lam: float | None,
                  init=None) -> QRFit:
    yt = ds.y - ds.d @ np.asarray(a, dtype=float).reshape(-1)
    if profiling == "plain":
        return fit_qr(yt, ds.x, tau, _init=init)
    if profiling == "l1":
        if lam is None:
            lam = 1.1 * np.sqrt(tau * (1.0 - tau) * np.log(max(ds.k, 2)) / ds.n)
        loadings = np.sqrt((ds.x**2).mean(axis=0))
        return fit_qr_l1(yt, ds.x, tau, lam, loadings=loadings)
    raise ConfigurationError(f"unknown profiling {profiling!r}; use 'plain' or 'l1'")


def ortho_score(ds: Dataset, tau: float, a, *, profiling: str = "plain",
                h: float | None = None, vartheta: float | None = None,
                lam: float | None = None, form: str = "penalized",
                _beta_init=None) -> OrthoScore:
    """Profile, orthogonalize, and evaluate the concentrated moments at a."""
    tau = _check_tau(tau)
    fit = _profile_beta(ds, tau, a, profiling, lam, init=_beta_init)
    if h is None:
        h = default_qr_bandwidth(fit.residuals)
    m_hat, j_hat = kernel_jacobians(ds, a, fit.coef, h)
    if vartheta is None:
        vartheta = default_vartheta(m_hat, ds.n)
    dfit = regularized_delta(m_hat, j_hat, vartheta, form=form)
    scores = concentrated_scores(ds, tau, a, fit.coef, dfit.delta)
    moments = scores.mean(axis=0)
    sigma = scores.T @ scores / ds.n
    return OrthoScore(
        a=np.asarray(a, dtype=float).reshape(-1),
        beta_a=fit.coef,
        delta_fit=dfit,
        m_hat=m_hat,
        j_hat=j_hat,
        moments=moments,
        sigma=0.5 * (sigma + sigma.T),
        scores=scores,
        metadata={"profiling": profiling, "h": float(h), "vartheta": float(vartheta),
                  "penalty": fit.metadata.get("penalty"), "form": form},
    )


def _ridge_solve(sigma: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, bool]:
    m = sigma.shape[0]
    eig = np.linalg.eigvalsh(sigma)
    if eig.min() > 1e-10 * max(eig.max(), 1e-300):
        return np.linalg.solve(sigma, g), False
    ridge = 1e-8 * np.trace(sigma) / m if np.trace(sigma) > 0 else 1e-8
    return np.linalg.solve(sigma + ridge * np.eye(m), g), True


def _alpha_nodes(alpha_grid) -> list[np.ndarray]:
    if isinstance(alpha_grid, np.ndarray) and alpha_grid.ndim == 1:
        axes = [alpha_grid]
    else:
        axes = [np.asarray(g, dtype=float).reshape(-1) for g in alpha_grid]
    # ascending axes make the first strict winner the lexicographically
    # smallest tied node
    axes = [np.sort(ax) for ax in axes]
    if any(ax.size == 0 for ax in axes):
        raise DomainError("slope grid is empty")
    if len(axes) > 3:
        raise ConfigurationError(
            "grid search is limited to 3 endogenous coordinates; "
            "use the smoothed multistart GMM path instead"
        )
    from itertools import product

    return [np.asarray(node, dtype=float) for node in product(*axes)]


def cue_estimate(ds: Dataset, tau: float, alpha_grid, profiling: str = "plain",
                 h: float | None = None, vartheta: float | None = None,
                 lam: float | None = None) -> EstimateResult:
    """Continuously updated criterion n g' Sigma(a,a)^-1 g over the slope grid.

    Each node reprofiles, reorthogonalizes, and reweights by its own score
    covariance; ties go to the lexicographically smallest node. A singular
    score covariance is ridge-stabilized and flagged.
    """
    nodes = _alpha_nodes(alpha_grid)
    if np.asarray(nodes[0]).size != ds.s:
        raise ConfigurationError(f"grid dimension {nodes[0].size} does not match s={ds.s}")
    best = None
    table = []
    ridge_count = 0
    init = None
    for node in nodes:
        score = ortho_score(ds, tau, node, profiling=profiling, h=h,
                            vartheta=vartheta, lam=lam, _beta_init=init)
        if profiling == "plain":
            init = score.beta_a
        solved, ridged = _ridge_solve(score.sigma, score.moments)
        ridge_count += ridged
        crit = float(ds.n * score.moments @ solved)
        table.append((node, crit, float(score.delta_fit.kkt.max()),
                      score.delta_fit.nnz, ridged))
        if best is None or crit < best[1]:
            best = (node, crit, score)
    node, crit, score = best
    return EstimateResult(
        tau=tau,
        alpha=node,
        beta=score.beta_a,
        method=f"cue-{profiling}",
        objective=crit,
        metadata={
            "profile_table": table,
            "ridged_nodes": ridge_count,
            "h": score.metadata["h"],
            "vartheta": score.metadata["vartheta"],
            "profiling": profiling,
        },
    )


@dataclass(frozen=True)
class OrthogonalityReport:
    """Directional-derivative audit of the concentrated moments at truth."""

    ortho_beta_max: float
    ortho_beta_mcse: float
    plain_beta_max: float
    plain_beta_mcse: float
    delta_max: float
    delta_mcse: float
    directions: int
    step: float

    def as_text(self) -> str:
        return (
            f"beta directions ({self.directions} draws, step {self.step:g}):\n"
            f"  orthogonal score max |dg| = {self.ortho_beta_max:.5f}"
            f" (mcse {self.ortho_beta_mcse:.5f})\n"
            f"  plain score      max |dg| = {self.plain_beta_max:.5f}"
            f" (mcse {self.plain_beta_mcse:.5f})\n"
            f"delta directions: max |dg| = {self.delta_max:.5f}"
            f" (mcse {self.delta_mcse:.5f})"
        )


def _fd_beta(ds, tau, alpha0, beta0, delta, v, t):
    up = concentrated_scores(ds, tau, alpha0, beta0 + t * v, delta)
    dn = concentrated_scores(ds, tau, alpha0, beta0 - t * v, delta)
    per_obs = (up - dn) / (2.0 * t)
    deriv = per_obs.mean(axis=0)
    mcse = per_obs.std(axis=0, ddof=1) / np.sqrt(ds.n)
    return float(np.abs(deriv).max()), float(mcse.max())


def orthogonality_check(design, tau: float, perturbation_scale: float = 0.1,
                        n: int = 50000, directions: int = 5, seed: int = 0) -> OrthogonalityReport:
    """Finite-difference insensitivity audit on one large simulated sample.

    Central differences of the mean concentrated moment in random unit
    directions of the profile, for the orthogonalized score and for the
    uncorrected score; and in random directions of the instrument
    correction itself.
    """
    from dataclasses import replace

    from .rng import spawn_rng
    from .simulate import generate

    tau = _check_tau(tau)
    if perturbation_scale <= 0.0:
        raise DomainError(f"perturbation scale must be positive, got {perturbation_scale}")
    ds, rec = generate(replace(design, n=n))
    theta0 = rec.theta(tau)
    alpha0, beta0 = theta0[: ds.s], theta0[ds.s :]
    eps0 = ds.y - ds.d @ alpha0 - ds.x @ beta0
    h = default_qr_bandwidth(eps0)
    m_hat, j_hat = kernel_jacobians(ds, alpha0, beta0, h)
    delta0 = regularized_delta(m_hat, j_hat, 0.0).delta
    zero = np.zeros_like(delta0)
    rng = spawn_rng(seed, 41)
    t = perturbation_scale
    ob = pb = om = pm = 0.0
    for _ in range(directions):
        v = rng.normal(size=ds.k)
        v /= np.linalg.norm(v)
        d_o, m_o = _fd_beta(ds, tau, alpha0, beta0, delta0, v, t)
        d_p, m_p = _fd_beta(ds, tau, alpha0, beta0, zero, v, t)
        ob, om = max(ob, d_o), max(om, m_o)
        pb, pm = max(pb, d_p), max(pm, m_p)
    dmax = dmcse = 0.0
    s0 = tau - (eps0 <= 0.0)
    for _ in range(directions):
        dirmat = rng.normal(size=delta0.shape)
        dirmat /= np.linalg.norm(dirmat)
        # the moment is exactly linear in delta: derivative -dir @ mean(s x)
        per_obs = -(ds.x @ dirmat.T) * s0[:, None]
        deriv = per_obs.mean(axis=0)
        dmax = max(dmax, float(np.abs(deriv).max()))
        dmcse = max(dmcse, float((per_obs.std(axis=0, ddof=1) / np.sqrt(ds.n)).max()))
    return OrthogonalityReport(
        ortho_beta_max=ob, ortho_beta_mcse=om,
        plain_beta_max=pb, plain_beta_mcse=pm,
        delta_max=dmax, delta_mcse=dmcse,
        directions=directions, step=t,
    )


def qlr2_region(ds: Dataset, tau: float, alpha_grid, p: float = 0.05, B: int = 500,
                seed: int = 0, profiling: str = "plain", h: float | None = None,
                vartheta: float | None = None, lam: float | None = None):
    """Conditional-QLR confidence region on the orthogonalized moments.

    Same resampling mechanics as the low-dimensional robust region, with
    the concentrated orthogonal scores supplying the moment process, so an
    l1 profile is admissible.
    """
    from .robust import conditional_qlr_scan

    nodes = _alpha_nodes(alpha_grid)
    scores = []
    init = None
    for node in nodes:
        sc = ortho_score(ds, tau, node, profiling=profiling, h=h,
                         vartheta=vartheta, lam=lam, _beta_init=init)
        if profiling == "plain":
            init = sc.beta_a
        scores.append(sc.scores)
    return conditional_qlr_scan(nodes, scores, p=p, B=B, seed=seed,
                                method="qlr2-" + profiling)
