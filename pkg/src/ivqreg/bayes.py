"""Quasi-posterior sampling for the moment criterion.

Exponentiating minus half the quadratic moment objective gives a
quasi-likelihood; under a box-uniform prior the quasi-posterior is
proportional to it, and chain summaries (means, quantile intervals)
inherit the first-order behavior of the point estimators. The sampler
is a single-site random-walk Metropolis: one Gaussian proposal per
coordinate per sweep, rejected outright outside the prior box. Proposal
scales adapt multiplicatively during burn-in toward an acceptance band
and are frozen afterwards.

The sampler only needs `.value(theta)` and `.dim` from the objective,
so it runs on the indicator criterion as well; the indicator surface is
piecewise constant and stalls the walk on wide plateaus, which is why
callers normally pass a smoothed objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import ParameterBox
from .exceptions import ConfigurationError, DomainError, SolverError
from .rng import spawn_rng

# multiplicative adaptation toward this acceptance band during burn-in
ACCEPT_BAND = (0.13, 0.33)
ADAPT_WINDOW = 25
ADAPT_FACTOR = 1.5
# scale clamp as a fraction of the box width; the upper clamp keeps
# prior-only sampling above 0.9 acceptance per coordinate
SCALE_CLAMP = (1e-6, 1.0 / 9.0)


def quasi_log_likelihood(obj, theta) -> float:
    """Minus half the moment criterion; zero iff the moments fit exactly."""
    return -0.5 * float(obj.value(theta))


@dataclass(frozen=True)
class Chain:
    """Sampled quasi-posterior chain.

    draws holds every state including the burn-in segment; kept strips
    the first burn_in rows. acceptance counts post-burn-in proposals
    only, scales are the frozen per-coordinate proposal widths.
    """

    draws: np.ndarray
    acceptance: float
    burn_in: int
    scales: np.ndarray
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim != 2:
            raise ConfigurationError(f"draws must be T x dim, got shape {draws.shape}")
        if not np.all(np.isfinite(draws)):
            raise DomainError("chain draws must be finite")
        if not 0.0 <= self.acceptance <= 1.0:
            raise DomainError(f"acceptance rate must lie in [0, 1], got {self.acceptance}")
        if not 0 <= self.burn_in:
            raise DomainError(f"burn-in must be nonnegative, got {self.burn_in}")
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float).reshape(-1))

    @property
    def kept(self) -> np.ndarray:
        return self.draws[self.burn_in:]


def sample(obj, prior: ParameterBox, t_total: int, burn_in: int, seed: int) -> Chain:
    """Random-walk Metropolis over the quasi-posterior.

    One sweep updates each coordinate in turn with a Gaussian step;
    moves leaving the prior box are rejected. During the burn-in sweeps
    each coordinate's scale is retuned every ADAPT_WINDOW proposals:
    too-frequent acceptance widens the step, too-rare shrinks it, both
    clamped to SCALE_CLAMP times the box width. Scales freeze at the
    end of burn-in, and the reported acceptance rate covers only the
    frozen segment. Deterministic given the seed.
    """
    t_total = int(t_total)
    burn_in = int(burn_in)
    if burn_in < 0:
        raise DomainError(f"burn-in must be nonnegative, got {burn_in}")
    if t_total <= burn_in:
        raise ConfigurationError(
            f"chain length {t_total} must exceed burn-in {burn_in}"
        )
    dim = int(obj.dim)
    if prior.dim != dim:
        raise ConfigurationError(
            f"prior box has dimension {prior.dim}, objective needs {dim}"
        )
    rng = spawn_rng(seed, 47)
    lo, hi, width = prior.lower, prior.upper, prior.width
    scales = width / 10.0
    theta = 0.5 * (lo + hi)
    logl = quasi_log_likelihood(obj, theta)

    draws = np.empty((t_total, dim))
    window_seen = np.zeros(dim, dtype=int)
    window_hits = np.zeros(dim, dtype=int)
    kept_seen = 0
    kept_hits = 0
    for t in range(t_total):
        adapting = t < burn_in
        for j in range(dim):
            prop = theta.copy()
            prop[j] += scales[j] * rng.standard_normal()
            accepted = False
            if lo[j] <= prop[j] <= hi[j]:
                cand = quasi_log_likelihood(obj, prop)
                if cand >= logl or rng.random() < np.exp(cand - logl):
                    theta, logl = prop, cand
                    accepted = True
            if adapting:
                window_seen[j] += 1
                window_hits[j] += accepted
                if window_seen[j] == ADAPT_WINDOW:
                    rate = window_hits[j] / ADAPT_WINDOW
                    if rate > ACCEPT_BAND[1]:
                        scales[j] *= ADAPT_FACTOR
                    elif rate < ACCEPT_BAND[0]:
                        scales[j] /= ADAPT_FACTOR
                    scales[j] = float(np.clip(
                        scales[j], SCALE_CLAMP[0] * width[j], SCALE_CLAMP[1] * width[j]
                    ))
                    window_seen[j] = 0
                    window_hits[j] = 0
            else:
                kept_seen += 1
                kept_hits += accepted
        draws[t] = theta
    if kept_hits == 0:
        raise SolverError(
            "chain accepted no moves after adaptation; widen the prior box "
            "or smooth the objective (bandwidth h)"
        )
    return Chain(
        draws=draws,
        acceptance=kept_hits / kept_seen,
        burn_in=burn_in,
        scales=scales,
        seed=int(seed),
        metadata={"t_total": t_total, "dim": dim},
    )


@dataclass(frozen=True)
class PosteriorSummary:
    """Componentwise location and interval summaries of the kept draws."""

    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    p: float


def summaries(chain: Chain, p: float = 0.05) -> PosteriorSummary:
    """Mean, median and the [p/2, 1-p/2] quantile interval per coordinate."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    kept = chain.kept
    if kept.shape[0] == 0:
        raise ConfigurationError("chain has no post-burn-in draws")
    return PosteriorSummary(
        mean=kept.mean(axis=0),
        median=np.median(kept, axis=0),
        lower=np.quantile(kept, p / 2.0, axis=0),
        upper=np.quantile(kept, 1.0 - p / 2.0, axis=0),
        p=float(p),
    )


def mcse(draws: np.ndarray) -> np.ndarray:
    """Batch-means Monte Carlo standard error of the column means.

    Batch length grows as T^(2/3) so the batches outlast the chain
    autocorrelation time; shorter batches understate the error on
    slowly mixing chains.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    t_len = draws.shape[0]
    if t_len < 4:
        raise ConfigurationError(f"need at least 4 draws for batch means, got {t_len}")
    b = max(1, int(t_len ** (2.0 / 3.0)))
    nb = max(2, t_len // b)
    b = t_len // nb
    means = draws[: nb * b].reshape(nb, b, -1).mean(axis=1)
    return np.sqrt(means.var(axis=0, ddof=1) / nb)


def split_chain_agreement(obj, prior: ParameterBox, t_total: int, burn_in: int,
                          seeds=(0, 1)) -> dict:
    """Standardized gap between posterior means of independently seeded chains.

    Returns the per-coordinate |mean difference| / sqrt(sum of squared
    batch-means errors); values under about 3 indicate the chains agree
    within Monte Carlo noise.
    """
    if len(seeds) != 2:
        raise ConfigurationError(f"exactly two seeds required, got {len(seeds)}")
    chains = [sample(obj, prior, t_total, burn_in, s) for s in seeds]
    gaps = np.abs(chains[0].kept.mean(axis=0) - chains[1].kept.mean(axis=0))
    scale = np.sqrt(mcse(chains[0].kept) ** 2 + mcse(chains[1].kept) ** 2)
    return {
        "gap": gaps,
        "mcse": scale,
        "standardized": gaps / scale,
        "acceptance": tuple(c.acceptance for c in chains),
    }


def write_draws(chain: Chain, path, labels=None) -> None:
    """CSV export of the full chain, one row per sweep."""
    dim = chain.draws.shape[1]
    if labels is None:
        labels = [f"theta_{j + 1}" for j in range(dim)]
    if len(labels) != dim:
        raise ConfigurationError(f"got {len(labels)} labels for {dim} coordinates")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", *labels])
        for t, row in enumerate(chain.draws):
            writer.writerow([t, *(repr(float(v)) for v in row)])


def summary_text(chain: Chain, p: float = 0.05) -> str:
    """key=value block: chain settings plus componentwise summaries."""
    s = summaries(chain, p)
    lines = [
        "method=quasi-bayes",
        f"draws={chain.draws.shape[0]}",
        f"burn_in={chain.burn_in}",
        f"acceptance={chain.acceptance:.4f}",
        f"seed={chain.seed}",
        f"level={1.0 - p}",
    ]
    for j in range(chain.draws.shape[1]):
        lines.append(f"scale_{j + 1}={chain.scales[j]!r}")
        lines.append(f"mean_{j + 1}={float(s.mean[j])!r}")
        lines.append(f"median_{j + 1}={float(s.median[j])!r}")
        lines.append(f"lower_{j + 1}={float(s.lower[j])!r}")
        lines.append(f"upper_{j + 1}={float(s.upper[j])!r}")
    return "\n".join(lines)
