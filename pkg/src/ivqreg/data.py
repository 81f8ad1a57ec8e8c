"""Dataset container, model configuration, and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigurationError, DataParseError, DomainError


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be 1- or 2-dimensional, got ndim={arr.ndim}")
    return arr


def _default_labels(prefix: str, width: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{j + 1}" for j in range(width))


@dataclass(frozen=True)
class Dataset:
    """Immutable (Y, D, X, Z) sample.

    Y is the outcome, D the endogenous regressors, X the included
    exogenous regressors, Z the excluded instruments. No intercept is
    ever added implicitly; include a ones column in X if wanted.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y_label: str = "y"
    d_labels: tuple[str, ...] = ()
    x_labels: tuple[str, ...] = ()
    z_labels: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        d = _as_matrix(self.d, "d")
        x = _as_matrix(self.x, "x")
        z = _as_matrix(self.z, "z")
        n = y.shape[0]
        if n < 1:
            raise ConfigurationError("dataset must contain at least one observation")
        for name, arr in (("d", d), ("x", x), ("z", z)):
            if arr.shape[0] != n:
                raise ConfigurationError(
                    f"{name} has {arr.shape[0]} rows, outcome has {n}"
                )
        for name, arr in (("y", y), ("d", d), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataParseError(f"non-finite value in {name}")
        d_labels = tuple(self.d_labels) or _default_labels("d", d.shape[1])
        x_labels = tuple(self.x_labels) or _default_labels("x", x.shape[1])
        z_labels = tuple(self.z_labels) or _default_labels("z", z.shape[1])
        if len(d_labels) != d.shape[1] or len(x_labels) != x.shape[1] or len(z_labels) != z.shape[1]:
            raise ConfigurationError("label count does not match column count")
        all_labels = (self.y_label, *d_labels, *x_labels, *z_labels)
        if len(set(all_labels)) != len(all_labels):
            raise ConfigurationError(f"column labels must be unique, got {all_labels}")
        for arr in (y, d, x, z):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "d_labels", d_labels)
        object.__setattr__(self, "x_labels", x_labels)
        object.__setattr__(self, "z_labels", z_labels)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def s(self) -> int:
        return self.d.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box for the structural parameter (alpha, beta)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ConfigurationError("box lower/upper must have equal length")
        if not np.all(lo < hi):
            raise ConfigurationError("box must satisfy lower < upper on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, theta: np.ndarray) -> bool:
        t = np.asarray(theta, dtype=float).reshape(-1)
        return bool(np.all(t >= self.lower) and np.all(t <= self.upper))


def _check_grid(grid: np.ndarray, name: str) -> np.ndarray:
    g = np.asarray(grid, dtype=float).reshape(-1)
    if g.size == 0:
        raise ConfigurationError(f"{name} must be nonempty")
    if g.size > 1 and not np.all(np.diff(g) > 0):
        raise ConfigurationError(f"{name} must be strictly increasing")
    g.setflags(write=False)
    return g


@dataclass(frozen=True)
class ModelSpec:
    """Estimation configuration: quantile level, instruments, search sets.

    instrument_rule: "zx" stacks [Z, X] (default), "z" uses Z alone, or a
    callable mapping a Dataset to an (N, r) instrument matrix.
    alpha_grid: one strictly increasing grid per endogenous coordinate.
    """

    tau: float
    instrument_rule: str | Callable[[Dataset], np.ndarray] = "zx"
    alpha_grid: tuple[np.ndarray, ...] | None = None
    theta_space: ParameterBox | None = None

    def __post_init__(self):
        if not 0.0 < float(self.tau) < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        object.__setattr__(self, "tau", float(self.tau))
        if isinstance(self.instrument_rule, str) and self.instrument_rule not in ("zx", "z"):
            raise ConfigurationError(
                f"unknown instrument rule {self.instrument_rule!r}; use 'zx', 'z', or a callable"
            )
        if self.alpha_grid is not None:
            grids = self.alpha_grid
            if isinstance(grids, np.ndarray) and grids.ndim == 1:
                grids = (grids,)
            grids = tuple(_check_grid(g, "alpha_grid") for g in grids)
            object.__setattr__(self, "alpha_grid", grids)


def instrument_matrix(ds: Dataset, rule: str | Callable[[Dataset], np.ndarray] = "zx") -> np.ndarray:
    """Instrument matrix Psi (N x r) under the given rule."""
    if callable(rule):
        psi = np.asarray(rule(ds), dtype=float)
        if psi.ndim == 1:
            psi = psi[:, None]
        if psi.shape[0] != ds.n:
            raise ConfigurationError("instrument rule returned wrong number of rows")
        if not np.all(np.isfinite(psi)):
            raise DataParseError("instrument rule produced non-finite values")
        return psi
    if rule == "zx":
        return np.hstack([ds.z, ds.x])
    if rule == "z":
        return np.array(ds.z, dtype=float)
    raise ConfigurationError(f"unknown instrument rule {rule!r}")


@dataclass
class EstimateResult:
    """Point estimate for one quantile level."""

    tau: float
    alpha: np.ndarray
    beta: np.ndarray
    method: str
    objective: float
    covariance: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if self.covariance is not None:
            cov = np.asarray(self.covariance, dtype=float)
            p = self.alpha.size + self.beta.size
            if cov.shape != (p, p):
                raise ConfigurationError(f"covariance must be {p}x{p}, got {cov.shape}")
            if not np.allclose(cov, cov.T, atol=1e-8):
                raise ConfigurationError("covariance must be symmetric")
            w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
            if w.min() < -1e-8 * max(1.0, w.max()):
                raise ConfigurationError("covariance must be positive semidefinite")
            self.covariance = cov

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])


@dataclass(frozen=True)
class ValidationReport:
    """Shape and relevance summary produced by `validate`."""

    n: int
    s: int
    k: int
    m: int
    r: int
    order_condition_ok: bool
    corr_zd: np.ndarray
    constant_z_columns: tuple[str, ...]
    constant_d_columns: tuple[str, ...]

    def as_text(self) -> str:
        lines = [
            f"observations: {self.n}",
            f"endogenous (s): {self.s}, exogenous (k): {self.k}, instruments (m): {self.m}",
            f"instrument dimension r = {self.r}; order condition r >= k + s: "
            + ("satisfied" if self.order_condition_ok else "VIOLATED"),
        ]
        for i in range(self.corr_zd.shape[0]):
            for j in range(self.corr_zd.shape[1]):
                lines.append(f"corr(z{i + 1}, d{j + 1}) = {self.corr_zd[i, j]:+.4f}")
        if self.constant_z_columns:
            lines.append("constant instrument columns: " + ", ".join(self.constant_z_columns))
        if self.constant_d_columns:
            lines.append("constant endogenous columns: " + ", ".join(self.constant_d_columns))
        return "\n".join(lines)


def validate(ds: Dataset, spec: ModelSpec) -> ValidationReport:
    """Check the order condition and instrument relevance. Read-only."""
    psi = instrument_matrix(ds, spec.instrument_rule)
    r = psi.shape[1]
    corr = np.zeros((ds.m, ds.s))
    const_z, const_d = [], []
    sd_z = ds.z.std(axis=0)
    sd_d = ds.d.std(axis=0)
    for i in range(ds.m):
        if sd_z[i] == 0.0:
            const_z.append(ds.z_labels[i])
    for j in range(ds.s):
        if sd_d[j] == 0.0:
            const_d.append(ds.d_labels[j])
    for i in range(ds.m):
        for j in range(ds.s):
            if sd_z[i] == 0.0 or sd_d[j] == 0.0:
                corr[i, j] = 0.0  # flagged as constant instead
            else:
                zc = ds.z[:, i] - ds.z[:, i].mean()
                dc = ds.d[:, j] - ds.d[:, j].mean()
                corr[i, j] = float(zc @ dc / (ds.n * sd_z[i] * sd_d[j]))
    return ValidationReport(
        n=ds.n,
        s=ds.s,
        k=ds.k,
        m=ds.m,
        r=r,
        order_condition_ok=r >= ds.k + ds.s,
        corr_zd=corr,
        constant_z_columns=tuple(const_z),
        constant_d_columns=tuple(const_d),
    )


def _parse_cell(text: str, line_no: int, col: str) -> float:
    t = text.strip()
    if t == "":
        raise DataParseError(f"missing value in column {col!r}", line=line_no)
    try:
        return float(t)
    except ValueError:
        raise DataParseError(f"non-numeric value {text!r} in column {col!r}", line=line_no) from None


def load_dataset(path, column_map: dict) -> Dataset:
    """Load a Dataset from a strict CSV file.

    column_map assigns roles: {"y": name, "d": [names], "x": [names],
    "z": [names]}. Leading '#' comment lines (as written by the CLI)
    are skipped. Any missing role or column raises ConfigurationError;
    malformed cells raise DataParseError with the file line number.
    """
    for role in ("y", "d", "x", "z"):
        if role not in column_map:
            raise ConfigurationError(f"column_map is missing role {role!r}")
    y_col = column_map["y"]
    if not isinstance(y_col, str):
        raise ConfigurationError("role 'y' must name a single column")
    d_cols = list(column_map["d"])
    x_cols = list(column_map["x"])
    z_cols = list(column_map["z"])
    if not d_cols or not z_cols:
        raise ConfigurationError("roles 'd' and 'z' need at least one column each")

    with open(path, "r", newline="") as fh:
        line_no = 0
        # leading comment block written by CLI outputs
        pos = fh.tell()
        while True:
            line = fh.readline()
            if not line:
                break
            if line.startswith("#"):
                line_no += 1
                pos = fh.tell()
                continue
            fh.seek(pos)
            break
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DataParseError("empty file", line=line_no + 1) from None
        line_no += 1
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise ConfigurationError(f"duplicate column names in header: {dupes}")
        index = {name: i for i, name in enumerate(header)}
        wanted = [y_col, *d_cols, *x_cols, *z_cols]
        missing = [c for c in wanted if c not in index]
        if missing:
            raise ConfigurationError(f"columns not found in file: {missing}")
        rows = []
        for row in reader:
            line_no += 1
            if len(row) != len(header):
                raise DataParseError(
                    f"expected {len(header)} fields, got {len(row)}", line=line_no
                )
            rows.append([_parse_cell(row[index[c]], line_no, c) for c in wanted])
    if not rows:
        raise DataParseError("file contains a header but no data rows", line=line_no)
    mat = np.asarray(rows, dtype=float)
    nd, nx = len(d_cols), len(x_cols)
    return Dataset(
        y=mat[:, 0],
        d=mat[:, 1 : 1 + nd],
        x=mat[:, 1 + nd : 1 + nd + nx],
        z=mat[:, 1 + nd + nx :],
        y_label=y_col,
        d_labels=tuple(d_cols),
        x_labels=tuple(x_cols),
        z_labels=tuple(z_cols),
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(ds: Dataset, path, header_lines: Sequence[str] = ()) -> None:
    """Write a Dataset as CSV; floats round-trip exactly via repr."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([ds.y_label, *ds.d_labels, *ds.x_labels, *ds.z_labels])
        for i in range(ds.n):
            writer.writerow(
                [_fmt(ds.y[i])]
                + [_fmt(v) for v in ds.d[i]]
                + [_fmt(v) for v in ds.x[i]]
                + [_fmt(v) for v in ds.z[i]]
            )
