"""Point-identification diagnostics for binary treatment and instrument.

With one binary treatment and one binary instrument the model reduces to
two moment equations in the two candidate quantiles (y0, y1): the cell
frequencies of the event Y <= y_D per instrument arm, centered at tau.
Local identification is full rank of the 2x2 derivative of that map,
whose entries are joint density-probability products per (z, d) cell.
The rank condition is algebraically a strict inequality between two
density ratios, so the module reports both forms side by side.

The diagnostics are descriptive: the map and its derivative are
estimated, but no sampling distribution is attached to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import ConfigurationError, DomainError
from .quantreg import _check_tau, _phi

# strict-separation tolerance for the likelihood-ratio comparison
MLR_RTOL = 1e-3


def _binary_columns(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if ds.s != 1 or ds.m != 1:
        raise ConfigurationError(
            f"diagnostics need one treatment and one instrument column, "
            f"got {ds.s} and {ds.m}"
        )
    d = ds.d[:, 0]
    z = ds.z[:, 0]
    for name, col in (("d", d), ("z", z)):
        if not np.isin(col, (0.0, 1.0)).all():
            raise ConfigurationError(f"column {name} must be binary 0/1")
    return d > 0.5, z > 0.5


def pi_map(ds: Dataset, tau: float, y_pair) -> np.ndarray:
    """Cell frequencies of Y <= y_D per instrument arm, minus tau.

    Component order (z=0, z=1). Infinite candidates are allowed: plus
    infinity makes the event sure, minus infinity impossible.
    """
    tau = _check_tau(tau)
    d, z = _binary_columns(ds)
    y0, y1 = (float(v) for v in y_pair)
    event = ds.y <= np.where(d, y1, y0)
    out = np.empty(2)
    for zval in (0, 1):
        arm = z == bool(zval)
        if not arm.any():
            raise DomainError(f"no observations in the z={zval} arm")
        out[zval] = event[arm].mean() - tau
    return out


def _cell_bandwidth(values: np.ndarray) -> float:
    """Per-cell Gaussian KDE bandwidth 1.06 sigma n^(-1/5)."""
    if values.size < 2:
        raise DomainError(
            f"cell has {values.size} observation(s); pass an explicit bandwidth"
        )
    sig = float(values.std(ddof=1))
    if not sig > 0.0:
        raise DomainError("cell outcomes are degenerate; pass an explicit bandwidth")
    return 1.06 * sig * values.size ** (-0.2)


def _cell_density(values: np.ndarray, point: float, h: float) -> float:
    return float(_phi((values - point) / h).mean() / h)


def jacobian(ds: Dataset, y_pair, h: float | None = None) -> np.ndarray:
    """Derivative matrix of the moment map, rows z=0,1 and columns d=0,1.

    Entry (z, d) is the kernel density of Y at y_d within the (d, z)
    cell times the cell share P[D=d | Z=z]; an empty cell contributes a
    zero entry, the one-sided noncompliance case. Bandwidth defaults to
    the per-cell rule in `_cell_bandwidth`.
    """
    mat, _ = _jacobian_with_flags(ds, y_pair, h)
    return mat


def _jacobian_with_flags(ds, y_pair, h):
    if h is not None:
        h = float(h)
        if h <= 0.0:
            raise DomainError(f"bandwidth must be positive, got {h}")
    d, z = _binary_columns(ds)
    y0, y1 = (float(v) for v in y_pair)
    points = (y0, y1)
    mat = np.zeros((2, 2))
    empty = np.zeros((2, 2), dtype=bool)
    for zv in (0, 1):
        arm = z == bool(zv)
        n_arm = int(arm.sum())
        if n_arm == 0:
            raise DomainError(f"no observations in the z={zv} arm")
        for dv in (0, 1):
            cell = arm & (d == bool(dv))
            n_cell = int(cell.sum())
            if n_cell == 0:
                empty[zv, dv] = True
                continue
            vals = ds.y[cell]
            hw = h if h is not None else _cell_bandwidth(vals)
            mat[zv, dv] = _cell_density(vals, points[dv], hw) * n_cell / n_arm
    return mat, empty


@dataclass(frozen=True)
class MlrReport:
    """Likelihood-ratio comparison behind the rank condition.

    left and right are the treated-to-untreated joint density ratios in
    the z=1 and z=0 arms; a zero denominator reports an infinite ratio.
    satisfied means the two differ strictly beyond MLR_RTOL of the
    larger one, in either direction.
    """

    left: float
    right: float
    satisfied: bool

    def as_text(self) -> str:
        return "\n".join([
            f"mlr_left={self.left!r}",
            f"mlr_right={self.right!r}",
            f"mlr_satisfied={int(self.satisfied)}",
        ])


def _density_ratio(num: float, den: float) -> float:
    if den == 0.0:
        return np.inf
    return float(num / den)


def _strictly_separated(left: float, right: float, rtol: float = MLR_RTOL) -> bool:
    if np.isinf(left) and np.isinf(right):
        return False
    if np.isinf(left) or np.isinf(right):
        return True
    return abs(left - right) > rtol * max(left, right)


def mlr_check(ds: Dataset, y_pair, h: float | None = None,
              rtol: float = MLR_RTOL) -> MlrReport:
    """Monotone-likelihood-ratio form of the local rank condition.

    rtol is the strict-separation tolerance; the default suits exact or
    near-exact inputs, while estimated ratios carry kernel sampling
    noise of a few percent and call for a tolerance of that order.
    """
    if not rtol >= 0.0:
        raise DomainError(f"tolerance must be nonnegative, got {rtol}")
    mat, _ = _jacobian_with_flags(ds, y_pair, h)
    left = _density_ratio(mat[1, 1], mat[1, 0])
    right = _density_ratio(mat[0, 1], mat[0, 0])
    return MlrReport(left=left, right=right,
                     satisfied=_strictly_separated(left, right, rtol))


@dataclass(frozen=True)
class BinaryIdDiagnostic:
    """Bundle of the moment map, its derivative, and the rank condition."""

    y: tuple[float, float]
    pi: np.ndarray
    jac: np.ndarray
    det: float
    mlr_left: float
    mlr_right: float
    condition_number: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.jac) < 0.0):
            raise DomainError("derivative entries are density-probability "
                              "products and cannot be negative")
        if (self.mlr_left < 0.0) or (self.mlr_right < 0.0):
            raise DomainError("likelihood ratios cannot be negative")

    @property
    def satisfied(self) -> bool:
        return _strictly_separated(self.mlr_left, self.mlr_right)

    def as_text(self) -> str:
        lines = [
            "method=binary-id",
            f"y_0={self.y[0]!r}",
            f"y_1={self.y[1]!r}",
            f"pi_z0={float(self.pi[0])!r}",
            f"pi_z1={float(self.pi[1])!r}",
        ]
        for zv in (0, 1):
            for dv in (0, 1):
                lines.append(f"jac_z{zv}_d{dv}={float(self.jac[zv, dv])!r}")
        lines += [
            f"det={self.det!r}",
            f"condition_number={self.condition_number!r}",
            self.as_mlr().as_text(),
            f"empty_cells={int(self.metadata.get('empty_cells', np.zeros(1)).sum())}",
        ]
        return "\n".join(lines)

    def as_mlr(self) -> MlrReport:
        return MlrReport(left=self.mlr_left, right=self.mlr_right,
                         satisfied=self.satisfied)


def diagnose(ds: Dataset, tau: float, y_pair, h: float | None = None) -> BinaryIdDiagnostic:
    """Full diagnostic at one candidate quantile pair."""
    pi = pi_map(ds, tau, y_pair)
    mat, empty = _jacobian_with_flags(ds, y_pair, h)
    return BinaryIdDiagnostic(
        y=(float(y_pair[0]), float(y_pair[1])),
        pi=pi,
        jac=mat,
        det=float(np.linalg.det(mat)),
        mlr_left=_density_ratio(mat[1, 1], mat[1, 0]),
        mlr_right=_density_ratio(mat[0, 1], mat[0, 0]),
        condition_number=float(np.linalg.cond(mat)),
        metadata={"empty_cells": empty, "tau": float(tau), "h": h},
    )


def diagnostic_table_rows(diag: BinaryIdDiagnostic) -> list[list]:
    """Header plus one machine-readable row, floats via repr."""
    header = ["y_0", "y_1", "pi_z0", "pi_z1",
              "jac_z0_d0", "jac_z0_d1", "jac_z1_d0", "jac_z1_d1",
              "det", "condition_number", "mlr_left", "mlr_right",
              "mlr_satisfied"]
    cells = [diag.y[0], diag.y[1], diag.pi[0], diag.pi[1],
             diag.jac[0, 0], diag.jac[0, 1], diag.jac[1, 0], diag.jac[1, 1],
             diag.det, diag.condition_number, diag.mlr_left, diag.mlr_right]
    row = [repr(float(c)) for c in cells] + [str(int(diag.satisfied))]
    return [header, row]
