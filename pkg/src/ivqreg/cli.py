"""Command-line surface: config resolution, dispatch, CSV exports.

Settings resolve in three layers: built-in defaults, then a flat
key=value config file (--config), then explicit flags; later layers
win. The resolved settings are echoed to meta.txt and hashed, and the
hash plus the root seed head every output file, so a rerun with the
same settings is bitwise reproducible and an output can always be
traced back to the exact invocation that produced it.

Exit codes: 0 success (an empty confidence region is success), 2 for
configuration and input errors, 3 for numerical failures. Errors print
a human-readable line followed by a key=value machine block on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .bayes import sample as bayes_sample
from .bayes import summaries as posterior_summaries
from .data import ModelSpec, ParameterBox, load_dataset, write_dataset
from .exceptions import (
    ConfigurationError,
    DataParseError,
    DomainError,
    IvqrError,
    SolverError,
)
from .gmm import GmmObjective, default_smoothing_bandwidth
from .identification import diagnose as binary_diagnose
from .identification import diagnostic_table_rows
from .iqr import coefficient_process
from .iqr import estimate as iqr_estimate
from .orthogonal import cue_estimate, qlr2_region
from .qte import (
    default_tau_grid,
    marginal_quantile,
    monotonize,
    quantile_process,
    structural_quantile,
)
from .robust import ar_region, finite_sample_region, qlr_region, region_table_rows
from .simulate import DgpDesign, generate

_REQUIRED = object()

CONFIG_EPILOG = """\
configuration:
  Every option can also be set in a flat key=value file passed with
  --config; the key is the option name with dashes replaced by
  underscores (e.g. beta_grid=-3:3:41). Blank lines and lines starting
  with '#' are ignored. Precedence: built-in default, then config file,
  then command-line flag. Grids use lo:hi:count (inclusive linspace),
  lists are comma-separated; values starting with '-' need the
  --key=value form (e.g. --beta-grid=-3:3:41). The seed always resolves
  to a value and is echoed in every output header; reruns with
  identical settings reproduce all outputs bitwise.
"""


@dataclass(frozen=True)
class Option:
    dest: str
    default: object
    help: str


_DATA_OPTS = [
    Option("data", _REQUIRED, "input dataset CSV"),
    Option("y", "y", "outcome column name"),
    Option("d", "d", "endogenous regressor column names (comma-separated)"),
    Option("x", "const", "exogenous control column names (comma-separated)"),
    Option("z", "z", "instrument column names (comma-separated)"),
]

_COMMON_OPTS = [
    Option("config", None, "key=value settings file"),
    Option("out", ".", "output directory"),
    Option("seed", "0", "root seed for every stochastic step"),
    Option("threads", "1", "advisory thread cap passed down as a hint"),
]

OPTIONS: dict[str, list[Option]] = {
    "estimate": _DATA_OPTS + [
        Option("tau", "0.5", "quantile level or comma-separated list"),
        Option("method", "iqr", "iqr | cue | bayes"),
        Option("grid", "0:2:81", "slope grid lo:hi:count"),
        Option("beta_grid", "-10:10:2",
               "control-coefficient range lo:hi:count (bayes prior box)"),
        Option("h", "", "smoothing bandwidth override (empty = data-driven)"),
        Option("profiling", "plain", "control profiling for cue: plain | l1"),
        Option("draws", "4000", "total quasi-posterior sweeps (bayes)"),
        Option("p", "0.05", "posterior interval tail mass (bayes)"),
    ] + _COMMON_OPTS,
    "ci": _DATA_OPTS + [
        Option("tau", "0.5", "quantile level"),
        Option("method", "ar", "ar | qlr"),
        Option("profiling", "plain",
               "control profiling for qlr: plain | l1 (orthogonalized scores)"),
        Option("grid", "0:2:81", "slope grid lo:hi:count"),
        Option("p", "0.05", "test size"),
        Option("b", "500", "simulation draws for the conditional critical value"),
        Option("h", "", "smoothing bandwidth override (empty = data-driven)"),
    ] + _COMMON_OPTS,
    "fsci": _DATA_OPTS + [
        Option("tau", "0.5", "quantile level"),
        Option("grid", "0:2:41", "slope axis lo:hi:count (one per slope coordinate)"),
        Option("beta_grid", "-3:3:41",
               "control axis lo:hi:count (one per control coordinate)"),
        Option("p", "0.05", "test size"),
        Option("b", "1000", "simulated draws of the exact null distribution"),
    ] + _COMMON_OPTS,
    "qte": _DATA_OPTS + [
        Option("tau", "", "quantile levels (empty = 99 levels 0.01..0.99)"),
        Option("grid", "0:2:41", "slope grid lo:hi:count for the per-level fits"),
        Option("h", "", "smoothing bandwidth override (empty = data-driven)"),
        Option("d1", "1", "treated arm value(s), comma-separated"),
        Option("d0", "0", "control arm value(s), comma-separated"),
        Option("x_ref", "", "reference covariate row (empty = column means)"),
    ] + _COMMON_OPTS,
    "simulate": [
        Option("design", "A", "design name: A | B | C"),
        Option("n", "1000", "sample size"),
        Option("rho", "0.5", "endogeneity strength"),
        Option("pi0", "0.0", "selection intercept (design A)"),
        Option("pi1", "1.0", "instrument strength (design A)"),
        Option("rank_slip", "0.0", "treated-state rank noise (breaks similarity)"),
        Option("extra_x", "0", "number of irrelevant extra controls"),
    ] + _COMMON_OPTS,
    "diagnose": _DATA_OPTS + [
        Option("tau", "0.5", "quantile level"),
        Option("y0_value", "", "candidate untreated outcome (empty = arm median)"),
        Option("y1_value", "", "candidate treated outcome (empty = arm median)"),
        Option("h", "", "density bandwidth override (empty = data-driven)"),
    ] + _COMMON_OPTS,
}

_COMMAND_HELP = {
    "estimate": "point estimates per quantile level (iqr, cue, or quasi-bayes)",
    "ci": "weak-identification-robust confidence region for the slope",
    "fsci": "exact finite-sample confidence region over the full parameter grid",
    "qte": "quantile process, plug-in distributions, and treatment effects",
    "simulate": "draw a synthetic sample plus its oracle record",
    "diagnose": "binary-design identification diagnostics",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ivqreg",
        description="Instrumental variable quantile regression toolkit",
    )
    parser.add_argument("--version", action="version", version=f"ivqreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command, opts in OPTIONS.items():
        sp = sub.add_parser(
            command,
            help=_COMMAND_HELP[command],
            epilog=CONFIG_EPILOG,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        for opt in opts:
            flag = "--" + opt.dest.replace("_", "-")
            extra = "" if opt.default in (_REQUIRED, None) else f" [default: {opt.default}]"
            sp.add_argument(flag, dest=opt.dest, default=None, help=opt.help + extra)
    return parser


def _read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    values = {}
    for line_no, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{p}:{line_no}: expected key=value, got {line!r}"
            )
        key, _, value = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigurationError(f"{p}:{line_no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def resolve_config(ns: argparse.Namespace) -> dict[str, str]:
    """Merge defaults, config file, and flags; returns plain strings."""
    file_values = {} if ns.config is None else _read_config_file(ns.config)
    resolved = {}
    for opt in OPTIONS[ns.command]:
        if opt.dest == "config":
            continue
        file_value = file_values.pop(opt.dest, None)
        value = getattr(ns, opt.dest)
        if value is None:
            value = file_value
        if value is None:
            value = opt.default
        if value is _REQUIRED:
            raise ConfigurationError(
                f"missing required setting '{opt.dest}' "
                f"(pass --{opt.dest.replace('_', '-')} or put {opt.dest}= in the config file)"
            )
        resolved[opt.dest] = str(value)
    if file_values:
        unknown = ", ".join(sorted(file_values))
        raise ConfigurationError(
            f"unknown config keys for '{ns.command}': {unknown}"
        )
    return resolved


def config_digest(command: str, cfg: dict[str, str]) -> str:
    """Hash of everything that determines the numbers (output dir excluded)."""
    lines = [f"command={command}"]
    lines += [f"{k}={v}" for k, v in sorted(cfg.items()) if k != "out"]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


# ---------------------------------------------------------------- converters

def _as_float(cfg, key) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise ConfigurationError(f"setting '{key}' must be a number, got {cfg[key]!r}") from None


def _as_int(cfg, key) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigurationError(f"setting '{key}' must be an integer, got {cfg[key]!r}") from None


def _as_floats(cfg, key) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in cfg[key].split(","))
    except ValueError:
        raise ConfigurationError(
            f"setting '{key}' must be comma-separated numbers, got {cfg[key]!r}"
        ) from None


def _as_taus(cfg, key="tau") -> tuple[float, ...]:
    taus = _as_floats(cfg, key)
    bad = [t for t in taus if not 0.0 < t < 1.0]
    if bad:
        raise ConfigurationError(
            f"setting '{key}' must lie strictly inside (0, 1), got {bad[0]!r}"
        )
    return taus


def _as_names(cfg, key) -> list[str]:
    return [tok.strip() for tok in cfg[key].split(",") if tok.strip()]


def _as_grid(cfg, key) -> np.ndarray:
    text = cfg[key]
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError(
            f"setting '{key}' must be lo:hi:count, got {text!r}"
        )
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigurationError(
            f"setting '{key}' must be lo:hi:count, got {text!r}"
        ) from None
    if count < 1:
        raise ConfigurationError(f"setting '{key}' needs at least one node, got {count}")
    if hi < lo:
        raise ConfigurationError(f"setting '{key}' has hi < lo: {text!r}")
    return np.linspace(lo, hi, count)


def _as_bandwidth(cfg, key="h") -> float | None:
    if cfg[key] == "":
        return None
    return _as_float(cfg, key)


def _load(cfg):
    path = Path(cfg["data"])
    if not path.is_file():
        raise ConfigurationError(f"dataset file not found: {path}")
    return load_dataset(path, {
        "y": cfg["y"],
        "d": _as_names(cfg, "d"),
        "x": _as_names(cfg, "x"),
        "z": _as_names(cfg, "z"),
    })


# -------------------------------------------------------------------- output

def _header(command: str, cfg: dict[str, str]) -> list[str]:
    return [
        f"ivqreg {command}",
        f"config_sha256={config_digest(command, cfg)}",
        f"seed={cfg['seed']}",
    ]


def _write_csv(path: Path, rows, header_lines) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _write_text(path: Path, lines, header_lines) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        for line in lines:
            fh.write(f"{line}\n")


def _write_meta(out: Path, command: str, cfg: dict[str, str]) -> None:
    lines = [
        f"command={command}",
        f"config_sha256={config_digest(command, cfg)}",
        f"ivqreg_version={__version__}",
        f"numpy_version={np.__version__}",
        f"scipy_version={scipy.__version__}",
        f"python_version={platform.python_version()}",
    ]
    lines += [f"{k}={v}" for k, v in sorted(cfg.items()) if k != "out"]
    _write_text(out / "meta.txt", lines, _header(command, cfg))


def _prepare_out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if "data" in cfg:
        data = Path(cfg["data"]).resolve()
        clashes = [name for name in _OUTPUT_NAMES if (out / name).resolve() == data]
        if clashes:
            raise ConfigurationError(
                f"output file {clashes[0]} would overwrite the input dataset; "
                "pick a different --out directory"
            )
    return out


_OUTPUT_NAMES = (
    "estimates.csv", "profile.csv", "region.csv", "summary.txt",
    "qte.csv", "dataset.csv", "oracle.csv", "diagnostic.csv", "meta.txt",
)


def _fmt(v) -> str:
    return repr(float(v))


# ------------------------------------------------------------------ commands

def _coordinate_labels(ds) -> list[str]:
    return [f"alpha_{lbl}" for lbl in ds.d_labels] + [f"beta_{lbl}" for lbl in ds.x_labels]


def cmd_estimate(cfg: dict[str, str]) -> int:
    out = _prepare_out(cfg)
    ds = _load(cfg)
    taus = _as_taus(cfg)
    method = cfg["method"]
    if method not in ("iqr", "cue", "bayes"):
        raise ConfigurationError(f"unknown method {method!r}; use iqr, cue, or bayes")
    grid = _as_grid(cfg, "grid")
    h = _as_bandwidth(cfg)
    seed = _as_int(cfg, "seed")

    est_rows = [["tau", "method"] + _coordinate_labels(ds) + ["objective"]]
    prof_rows = []
    for tau in taus:
        if method == "iqr":
            result, profiles = iqr_estimate(ds, tau, grid, h=h)
            if not prof_rows:
                prof_rows.append(["tau"] + [f"a_{j+1}" for j in range(ds.s)] + ["wald"])
            for prof in profiles:
                prof_rows.append([_fmt(tau)] + [_fmt(v) for v in prof.a] + [_fmt(prof.wald)])
        elif method == "cue":
            result = cue_estimate(ds, tau, grid, profiling=cfg["profiling"], h=h)
            if not prof_rows:
                prof_rows.append(["tau"] + [f"a_{j+1}" for j in range(ds.s)]
                                 + ["criterion", "kkt", "nnz", "ridged"])
            for node, crit, kkt, nnz, ridged in result.metadata["profile_table"]:
                prof_rows.append([_fmt(tau)] + [_fmt(v) for v in np.atleast_1d(node)]
                                 + [_fmt(crit), _fmt(kkt), str(int(nnz)), str(int(ridged))])
        else:
            result = _bayes_estimate(ds, tau, grid, cfg, h, seed, prof_rows)
        est_rows.append(
            [_fmt(result.tau), result.method]
            + [_fmt(v) for v in result.alpha]
            + [_fmt(v) for v in result.beta]
            + [_fmt(result.objective)]
        )

    header = _header("estimate", cfg)
    _write_csv(out / "estimates.csv", est_rows, header)
    _write_csv(out / "profile.csv", prof_rows, header)
    _write_meta(out, "estimate", cfg)
    return 0


def _bayes_estimate(ds, tau, grid, cfg, h, seed, prof_rows):
    beta_range = _as_grid(cfg, "beta_grid")
    box = ParameterBox(
        lower=[float(grid.min())] * ds.s + [float(beta_range.min())] * ds.k,
        upper=[float(grid.max())] * ds.s + [float(beta_range.max())] * ds.k,
    )
    draws = _as_int(cfg, "draws")
    spec = ModelSpec(tau=tau)
    hval = h if h is not None else default_smoothing_bandwidth(ds, tau)
    obj = GmmObjective(ds, spec, h=hval)
    chain = bayes_sample(obj, box, t_total=draws, burn_in=draws // 4, seed=seed)
    s = posterior_summaries(chain, p=_as_float(cfg, "p"))
    if not prof_rows:
        prof_rows.append(["tau", "coordinate", "mean", "median", "lower", "upper"])
    for j, lbl in enumerate(_coordinate_labels(ds)):
        prof_rows.append([_fmt(tau), lbl, _fmt(s.mean[j]), _fmt(s.median[j]),
                          _fmt(s.lower[j]), _fmt(s.upper[j])])
    from .data import EstimateResult
    return EstimateResult(
        tau=tau,
        alpha=s.mean[: ds.s],
        beta=s.mean[ds.s :],
        method="quasi-bayes",
        objective=float(obj.value(s.mean)),
        metadata={"acceptance": chain.acceptance, "h": hval},
    )


def _region_summary(region, empty_message: str) -> list[str]:
    lines = [
        f"method={region.method}",
        f"level={_fmt(region.level)}",
        f"grid_nodes={len(region.grid)}",
        f"accepted={int(region.accept.sum())}",
    ]
    if region.empty:
        lines.append(empty_message)
    else:
        for c in range(len(region.grid[0])):
            lo, hi = region.interval(c)
            lines.append(f"interval_a_{c+1}=[{_fmt(lo)}, {_fmt(hi)}]")
    return lines


def _single_tau(cfg) -> float:
    taus = _as_taus(cfg)
    if len(taus) != 1:
        raise ConfigurationError(
            f"this command takes a single quantile level, got {len(taus)}"
        )
    return taus[0]


def cmd_ci(cfg: dict[str, str]) -> int:
    out = _prepare_out(cfg)
    ds = _load(cfg)
    tau = _single_tau(cfg)
    grid = _as_grid(cfg, "grid")
    p = _as_float(cfg, "p")
    h = _as_bandwidth(cfg)
    method = cfg["method"]
    if method == "ar":
        region = ar_region(ds, tau, grid, p=p, h=h)
    elif method == "qlr":
        b = _as_int(cfg, "b")
        seed = _as_int(cfg, "seed")
        if cfg["profiling"] == "plain":
            region = qlr_region(ds, tau, grid, p=p, B=b, seed=seed, h=h)
        elif cfg["profiling"] == "l1":
            region = qlr2_region(ds, tau, grid, p=p, B=b, seed=seed,
                                 profiling="l1", h=h)
        else:
            raise ConfigurationError(
                f"unknown profiling {cfg['profiling']!r}; use plain or l1"
            )
    else:
        raise ConfigurationError(f"unknown method {method!r}; use ar or qlr")

    header = _header("ci", cfg)
    _write_csv(out / "region.csv", region_table_rows(region), header)
    _write_text(
        out / "summary.txt",
        _region_summary(region, "empty region (model/instrument misspecification signal)"),
        header,
    )
    _write_meta(out, "ci", cfg)
    return 0


def cmd_fsci(cfg: dict[str, str]) -> int:
    out = _prepare_out(cfg)
    ds = _load(cfg)
    tau = _single_tau(cfg)
    slope_axis = _as_grid(cfg, "grid")
    beta_axis = _as_grid(cfg, "beta_grid")
    axes = [slope_axis] * ds.s + [beta_axis] * ds.k
    region, intervals = finite_sample_region(
        ds, tau, axes, p=_as_float(cfg, "p"), B=_as_int(cfg, "b"),
        seed=_as_int(cfg, "seed"),
    )
    header = _header("fsci", cfg)
    _write_csv(out / "region.csv", region_table_rows(region), header)
    lines = _region_summary(
        region, "empty region (model/instrument misspecification signal)"
    )
    lines.append("projection=conservative")
    _write_text(out / "summary.txt", lines, header)
    _write_meta(out, "fsci", cfg)
    return 0


def cmd_qte(cfg: dict[str, str]) -> int:
    out = _prepare_out(cfg)
    ds = _load(cfg)
    taus = default_tau_grid() if cfg["tau"] == "" else np.array(_as_taus(cfg))
    grid = _as_grid(cfg, "grid")
    h = _as_bandwidth(cfg)
    d1 = np.array(_as_floats(cfg, "d1"))
    d0 = np.array(_as_floats(cfg, "d0"))
    x_ref = (ds.x.mean(axis=0) if cfg["x_ref"] == ""
             else np.array(_as_floats(cfg, "x_ref")))

    rows = coefficient_process(ds, taus, grid, h=h)
    failed = [f"{r.tau:g}" for r in rows if r.error is not None]
    if failed:
        raise SolverError(
            "per-level estimation failed at tau = " + ", ".join(failed)
        )
    proc = monotonize(quantile_process(rows))

    table = [["tau", "conditional_qte", "unconditional_qte",
              "arm1_quantile", "arm0_quantile"]]
    for t in taus:
        cond = structural_quantile(proc, t, d1, x_ref) - structural_quantile(
            proc, t, d0, x_ref
        )
        q1 = marginal_quantile(proc, ds, t, d1)
        q0 = marginal_quantile(proc, ds, t, d0)
        table.append([_fmt(t), _fmt(cond), _fmt(q1 - q0), _fmt(q1), _fmt(q0)])

    header = _header("qte", cfg)
    _write_csv(out / "qte.csv", table, header)
    _write_meta(out, "qte", cfg)
    return 0


def cmd_simulate(cfg: dict[str, str]) -> int:
    out = _prepare_out(cfg)
    design = DgpDesign(
        name=cfg["design"],
        n=_as_int(cfg, "n"),
        seed=_as_int(cfg, "seed"),
        rho=_as_float(cfg, "rho"),
        pi0=_as_float(cfg, "pi0"),
        pi1=_as_float(cfg, "pi1"),
        rank_slip=_as_float(cfg, "rank_slip"),
        extra_x=_as_int(cfg, "extra_x"),
    )
    ds, oracle = generate(design)
    header = _header("simulate", cfg)
    write_dataset(ds, out / "dataset.csv", header_lines=header)

    extras = sorted(
        key for key, val in oracle.extras.items()
        if isinstance(val, np.ndarray) and val.shape == (ds.n,)
    )
    oracle_rows = [["rank0", "rank1", "y0", "y1"] + extras]
    cols = [oracle.rank0, oracle.rank1, oracle.y0, oracle.y1]
    cols += [oracle.extras[key] for key in extras]
    for i in range(ds.n):
        oracle_rows.append([_fmt(col[i]) for col in cols])
    _write_csv(out / "oracle.csv", oracle_rows, header)
    _write_meta(out, "simulate", cfg)
    return 0


def _default_y_pair(ds) -> tuple[float, float]:
    d = ds.d[:, 0]
    treated = ds.y[d > 0.5]
    control = ds.y[d <= 0.5]
    if treated.size == 0 or control.size == 0:
        raise ConfigurationError(
            "cannot default the candidate outcomes: one treatment arm is empty; "
            "pass --y0-value and --y1-value"
        )
    return float(np.median(control)), float(np.median(treated))


def cmd_diagnose(cfg: dict[str, str]) -> int:
    out = _prepare_out(cfg)
    ds = _load(cfg)
    tau = _single_tau(cfg)
    y0_default, y1_default = (None, None)
    if cfg["y0_value"] == "" or cfg["y1_value"] == "":
        y0_default, y1_default = _default_y_pair(ds)
    y0 = y0_default if cfg["y0_value"] == "" else _as_float(cfg, "y0_value")
    y1 = y1_default if cfg["y1_value"] == "" else _as_float(cfg, "y1_value")
    diag = binary_diagnose(ds, tau, (y0, y1), h=_as_bandwidth(cfg))

    header = _header("diagnose", cfg)
    _write_csv(out / "diagnostic.csv", diagnostic_table_rows(diag), header)
    _write_text(out / "summary.txt", diag.as_text().splitlines(), header)
    _write_meta(out, "diagnose", cfg)
    return 0


DISPATCH = {
    "estimate": cmd_estimate,
    "ci": cmd_ci,
    "fsci": cmd_fsci,
    "qte": cmd_qte,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}

_CONFIG_FAULTS = (ConfigurationError, DataParseError, DomainError,
                  FileNotFoundError, PermissionError, IsADirectoryError)


def _emit_error(err: Exception, code: int) -> None:
    message = " ".join(str(err).split())
    sys.stderr.write(f"error: {message}\n")
    sys.stderr.write("[error]\n")
    sys.stderr.write(f"kind={type(err).__name__}\n")
    sys.stderr.write(f"exit_code={code}\n")
    sys.stderr.write(f"message={message}\n")


def main(argv=None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve_config(ns)
        return DISPATCH[ns.command](cfg)
    except _CONFIG_FAULTS as err:
        _emit_error(err, 2)
        return 2
    except (IvqrError, np.linalg.LinAlgError, FloatingPointError) as err:
        _emit_error(err, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
