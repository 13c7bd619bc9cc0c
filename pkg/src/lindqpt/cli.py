"""Command-line experiment runner.

    lindqpt --scenario two_band_rate --gamma-l 0.2 --out runs/fig2a
    lindqpt --config runs/fig3.yaml --trajectories 200

The config file is YAML; top-level keys or the sections ``model``, ``grid``
and ``output`` are accepted.  Command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy import integrate

from . import __version__
from .errors import CapacityError, DomainError, LindqptError, NumericError

log = logging.getLogger("lindqpt")

SCENARIOS = (
    "two_band_rate",
    "two_band_crossover",
    "liouvillian_spectrum",
    "backflow_check",
    "hk_fisher",
    "hk_rate",
    "many_body_flux",
    "toy_cusp",
)
TWO_BAND = {"two_band_rate", "two_band_crossover", "liouvillian_spectrum", "backflow_check"}
MAX_CELLS = 8
MAX_K_POINTS = 100_000
MAX_TRAJECTORIES = 1_000_000

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_CAPACITY = 0, 2, 3, 4

# Scenario defaults; any key left None in the config is filled from here.
DEFAULTS = {
    "two_band_rate": dict(gamma_g=[0.0, 0.01], k_points=400, t_max=4.0, dt=0.005),
    "two_band_crossover": dict(gamma_g=[1e-2, 1e-3, 1e-4, 1e-5], t_max=120.0, dt=0.01, k=1.0),
    "liouvillian_spectrum": dict(gamma_g=[0.0], k_points=64, k=1.0),
    "backflow_check": dict(gamma_g=[0.0], k=1.0, t_max=5.0, dt=0.5),
    "hk_fisher": dict(gamma_g=[0.5], k_points=200, t_max=8.0, branches=4),
    "hk_rate": dict(gamma_l=0.0, gamma_g=[0.5], U=80.0, k_points=200, t_max=8.0, dt=0.01),
    "many_body_flux": dict(gamma_l=0.4, gamma_g=[0.0, 0.004], n_cells=7, flux_samples=750, t_max=5.0, dt=0.005, trajectories=1000),
    "toy_cusp": dict(delta=1.0, t_max=1.0, dt=0.005),
}


@dataclass
class ExperimentConfig:
    scenario: str = "two_band_rate"
    seed: int = 0
    t0: float = 0.5
    t1: float = 1.5
    w: float = 1.0
    gamma_l: Optional[float] = None
    gamma_g: Optional[list] = None
    U: Optional[float] = None
    n_cells: Optional[int] = None
    k: Optional[float] = None
    k_points: Optional[int] = None
    t_max: Optional[float] = None
    dt: Optional[float] = None
    flux_samples: Optional[int] = None
    trajectories: Optional[int] = None
    branches: Optional[int] = None
    delta: Optional[float] = None
    cusp_factor: float = 10.0
    engine: str = "auto"
    out: str = "lindqpt-out"
    format: str = "csv"
    threads: int = 1

    def resolved(self) -> "ExperimentConfig":
        """Copy with scenario defaults filled in for unset fields."""
        cfg = dataclasses.replace(self)
        for key, value in DEFAULTS.get(cfg.scenario, {}).items():
            if getattr(cfg, key) is None:
                setattr(cfg, key, value)
        if cfg.gamma_g is not None and not isinstance(cfg.gamma_g, (list, tuple)):
            cfg.gamma_g = [cfg.gamma_g]
        return cfg


def _flatten(raw: dict) -> dict:
    flat = {}
    for key, value in raw.items():
        if key in ("model", "grid", "output", "run") and isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = _flatten(yaml.safe_load(fh) or {})
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise DomainError(f"unknown config keys: {', '.join(sorted(unknown))}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


def validate(config: ExperimentConfig) -> list[str]:
    """Field-level violations; empty iff the config is runnable."""
    out = []
    try:
        cfg = config.resolved()
    except Exception as exc:  # malformed values must not escape as exceptions
        return [f"config: {exc}"]
    if cfg.scenario not in SCENARIOS:
        return [f"scenario: unknown scenario {cfg.scenario!r}; choose one of {', '.join(SCENARIOS)}"]

    def number(name, value):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
            out.append(f"{name}: must be a finite number")
            return False
        return True

    if cfg.gamma_l is None:
        if cfg.scenario in TWO_BAND:
            out.append("gamma_l: γ_l required (no default strength is fixed for this model)")
    elif number("gamma_l", cfg.gamma_l) and cfg.gamma_l < 0:
        out.append("gamma_l: loss strength must be nonnegative")
    for g in cfg.gamma_g or []:
        if number("gamma_g", g) and g < 0:
            out.append("gamma_g: gain strength must be nonnegative")
            break
    if cfg.gamma_g is not None and len(cfg.gamma_g) == 0:
        out.append("gamma_g: list must be nonempty")
    for name in ("t0", "t1", "w"):
        number(name, getattr(cfg, name))
    if cfg.U is not None and number("U", cfg.U) and cfg.U < 0:
        out.append("U: interaction strength must be nonnegative")
    if cfg.dt is not None and number("dt", cfg.dt) and cfg.dt <= 0:
        out.append("dt: must be > 0")
    if cfg.t_max is not None and number("t_max", cfg.t_max) and cfg.t_max <= 0:
        out.append("t_max: must be > 0")
    if number("cusp_factor", cfg.cusp_factor) and cfg.cusp_factor <= 0:
        out.append("cusp_factor: must be > 0")
    if cfg.delta is not None and number("delta", cfg.delta) and cfg.delta <= 0:
        out.append("delta: cutoff must be > 0")
    for name, cap in (("k_points", MAX_K_POINTS), ("flux_samples", MAX_K_POINTS), ("trajectories", MAX_TRAJECTORIES), ("branches", 1000)):
        value = getattr(cfg, name)
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            out.append(f"{name}: must be a positive integer (grids nonempty)")
        elif value > cap:
            out.append(f"{name}: capacity exceeded ({value} > {cap})")
    if cfg.n_cells is not None:
        if isinstance(cfg.n_cells, bool) or not isinstance(cfg.n_cells, int) or cfg.n_cells < 1:
            out.append("n_cells: must be a positive integer")
        elif cfg.n_cells > MAX_CELLS:
            out.append(f"n_cells: capacity exceeded ({cfg.n_cells} > {MAX_CELLS} cells, 2^(2N) Fock space)")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        out.append("seed: must be a nonnegative integer")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        out.append("threads: must be >= 1")
    if cfg.format not in ("csv", "json"):
        out.append("format: must be 'csv' or 'json'")
    if cfg.engine not in ("auto", "exact", "nonhermitian", "mcwf"):
        out.append("engine: must be one of auto, exact, nonhermitian, mcwf")
    if cfg.dt is not None and cfg.t_max is not None and not out and cfg.t_max / cfg.dt > 1e7:
        out.append("dt: capacity exceeded (more than 1e7 time steps)")
    return out


def is_capacity(violations: list[str]) -> bool:
    return bool(violations) and all("capacity" in v for v in violations)


# --- scenarios ----------------------------------------------------------------


@dataclass
class Table:
    name: str
    columns: list
    rows: list = field(default_factory=list)


def _time_grid(cfg) -> np.ndarray:
    n = int(round(cfg.t_max / cfg.dt))
    return np.arange(n + 1) * cfg.dt


def _quench(cfg, gamma_g):
    from .models import QuenchSpec, chain_model

    return QuenchSpec(chain_model(cfg.t0, cfg.w), chain_model(cfg.t1, cfg.w, cfg.gamma_l, gamma_g))


def _two_band_rate(cfg, report):
    from .dqpt import detect_cusps, rate_function, uniform_k_grid

    t = _time_grid(cfg)
    ks = uniform_k_grid(cfg.k_points)
    method = "exact" if cfg.engine in ("auto", "exact") else cfg.engine
    cols, series = ["t"], []
    for gg in cfg.gamma_g:
        rs = rate_function(_quench(cfg, gg), ks, t, method, threads=cfg.threads)
        cols.append(f"G@gamma_g={gg:g}")
        series.append(rs.G_values)
        report["cusps"][f"gamma_g={gg:g}"] = detect_cusps(rs, factor=cfg.cusp_factor)
        report["flagged_samples"] += rs.metadata["flagged_samples"]
        report["min_g"][f"gamma_g={gg:g}"] = float(rs.g_values.min())
    return [Table("rate", cols, np.column_stack([t] + series).tolist())]


def _two_band_crossover(cfg, report):
    from .dqpt import crossover_time, liouvillian_gap, return_series

    t = _time_grid(cfg)
    ref = _quench(cfg, 0.0)
    g_ref = return_series(ref, cfg.k, t)
    delta = liouvillian_gap(ref, cfg.k)
    table = Table("crossover", ["gamma_g", "ln_gamma_g", "t_star", "predicted", "gap_re", "gap_im"])
    for gg in cfg.gamma_g:
        res = crossover_time(_quench(cfg, gg), cfg.k, t, g_reference=g_ref, delta=delta)
        t_star = np.nan if res.t_star is None else res.t_star
        table.rows.append([gg, np.log(gg) if gg > 0 else -np.inf, t_star, res.predicted, delta.real, delta.imag])
    report["gap"] = [delta.real, delta.imag]
    return [table]


def _liouvillian_spectrum(cfg, report):
    from .dqpt import single_k_liouvillian, uniform_k_grid
    from .liouvillian import gap, spectrum

    table = Table("spectrum", ["k", "re", "im"])
    ks = list(uniform_k_grid(cfg.k_points)) + [cfg.k]
    gaps = {}
    for k in ks:
        spec = spectrum(single_k_liouvillian(k, _quench(cfg, cfg.gamma_g[0]).post))
        table.rows.extend([k, e.real, e.imag] for e in spec.eigenvalues)
    g = gap(spectrum(single_k_liouvillian(cfg.k, _quench(cfg, cfg.gamma_g[0]).post)))
    gaps[f"k={cfg.k:g}"] = [g.real, g.imag]
    report["gap"] = gaps
    return [table]


def _backflow_check(cfg, report):
    from .dqpt import backflow_model
    from .models import single_k_initial_density
    from .liouvillian import vectorize
    from .propagator import backflow_first_order, backflow_vanishing_check

    q = _quench(cfg, 0.0)
    L, _, blocks = backflow_model(q, cfg.k)
    rho0 = vectorize(single_k_initial_density(cfg.k, q.pre))
    table = Table("backflow", ["t", "re", "im"])
    for t in _time_grid(cfg)[1:]:
        val = backflow_first_order(blocks, rho0, float(t), L=L)
        table.rows.append([t, val.real, val.imag])
    report["min_real_part"] = min(r[1] for r in table.rows)
    report["vanishing_check"] = backflow_vanishing_check(blocks)
    return [table]


def _hk_fisher(cfg, report):
    from .dqpt import fisher_zeros

    ks = 2 * np.pi * np.arange(cfg.k_points) / cfg.k_points
    zs = fisher_zeros(ks, cfg.gamma_g[0], range(cfg.branches))
    curves = Table("fisher_zeros", ["n", "root", "k", "t_re", "t_im", "residual"])
    for (n, root), tc in zs.branches.items():
        res = zs.residuals[(n, root)]
        curves.rows.extend([n, root, k, z.real, z.imag, r] for k, z, r in zip(ks, tc, res))
    cross = Table("crossings", ["t_c", "k_c", "n", "root"], [list(c) for c in zs.crossings if 0 <= c[0] <= cfg.t_max])
    report["max_residual"] = zs.max_residual()
    report["flagged_samples"] += int(zs.flagged.size)
    return [curves, cross]


def _hk_rate(cfg, report):
    from .dqpt import detect_cusps, hk_rate_function

    t = _time_grid(cfg)
    ks = 2 * np.pi * (np.arange(cfg.k_points) + 0.5) / cfg.k_points
    cols, series = ["t"], []
    for gg in cfg.gamma_g:
        engine = "auto" if cfg.engine == "auto" else cfg.engine
        rs = hk_rate_function(ks, t, cfg.U, gg, cfg.gamma_l, engine=engine)
        cols.append(f"G@gamma_g={gg:g}")
        series.append(rs.G_values)
        report["cusps"][f"gamma_g={gg:g}"] = detect_cusps(rs, factor=cfg.cusp_factor)
        report["flagged_samples"] += rs.metadata["flagged_samples"]
    return [Table("rate", cols, np.column_stack([t] + series).tolist())]


def _many_body_flux(cfg, report):
    from .dqpt import detect_cusps, flux_averaged_rate
    from .models import chain_model

    t = _time_grid(cfg)
    pre = chain_model(cfg.t0, cfg.w)
    cols, series = ["t"], []
    for gg in cfg.gamma_g:
        engine = cfg.engine
        if engine == "auto":
            engine = "nonhermitian" if gg == 0 else "mcwf"
        if engine == "exact":
            raise DomainError("many_body_flux supports the nonhermitian and mcwf engines")
        rs = flux_averaged_rate(
            cfg.n_cells, pre, chain_model(cfg.t1, cfg.w, cfg.gamma_l, gg), cfg.flux_samples, t,
            engine, trajectories=cfg.trajectories, seed=cfg.seed, threads=cfg.threads,
        )
        cols.append(f"G@gamma_g={gg:g}")
        series.append(rs.G_values)
        report["cusps"][f"gamma_g={gg:g}"] = detect_cusps(rs, factor=cfg.cusp_factor)
        report["flagged_samples"] += rs.metadata["flagged_samples"]
        report.setdefault("engines", {})[f"gamma_g={gg:g}"] = engine
    return [Table("rate", cols, np.column_stack([t] + series).tolist())]


def _toy_cusp(cfg, report):
    from .dqpt import toy_nonanalyticity, toy_rate

    tau = np.arange(-int(round(cfg.t_max / cfg.dt)), int(round(cfg.t_max / cfg.dt)) + 1) * cfg.dt
    cusp = toy_nonanalyticity(cfg.delta, tau)
    # the closed form equals +(1/2 pi) int ln(q^2 + tau^2) dq, which is what the quadrature column holds
    table = Table("toy", ["tau", "G_closed", "G_quadrature"])
    for tv, g in zip(tau, cusp.G):
        quad, _ = integrate.quad(lambda q: np.log(q * q + tv * tv), -cfg.delta, cfg.delta, points=[0.0], limit=200)
        table.rows.append([tv, g, quad / (2 * np.pi)])
    report.update(G0=cusp.G0, left_derivative=cusp.left_derivative, right_derivative=cusp.right_derivative)
    return [table]


RUNNERS = {
    "two_band_rate": _two_band_rate,
    "two_band_crossover": _two_band_crossover,
    "liouvillian_spectrum": _liouvillian_spectrum,
    "backflow_check": _backflow_check,
    "hk_fisher": _hk_fisher,
    "hk_rate": _hk_rate,
    "many_body_flux": _many_body_flux,
    "toy_cusp": _toy_cusp,
}


# --- output ---------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_tables(tables: list[Table], out: Path, fmt: str) -> list[str]:
    names = []
    for table in tables:
        if fmt == "csv":
            path = out / f"{table.name}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(table.columns)
                for row in table.rows:
                    writer.writerow([_fmt(v) for v in row])
        else:
            path = out / f"{table.name}.json"
            rows = [[float(_fmt(v)) if not isinstance(v, (int, np.integer)) else int(v) for v in row] for row in table.rows]
            with open(path, "w") as fh:
                json.dump(_jsonable({"columns": table.columns, "rows": rows}), fh, indent=1, sort_keys=True)
                fh.write("\n")
        names.append(path.name)
    return names


def run(config: ExperimentConfig) -> int:
    violations = validate(config)
    if violations:
        for v in violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CAPACITY if is_capacity(violations) else EXIT_VALIDATION
    cfg = config.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"cusps": {}, "flagged_samples": 0, "min_g": {}}
    start = time.perf_counter()
    try:
        tables = RUNNERS[cfg.scenario](cfg, report)
    except CapacityError as exc:
        print(f"capacity error in {cfg.scenario}: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except DomainError as exc:
        print(f"validation error in {cfg.scenario}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric error in {cfg.scenario} ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    files = write_tables(tables, out, cfg.format)
    # the manifest carries the wall time, so it is the one file allowed to differ between reruns
    manifest = {
        "config": dataclasses.asdict(cfg),
        "library_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "wall_time_s": time.perf_counter() - start,
        "flagged_samples": report.pop("flagged_samples"),
        "report": report,
        "files": files,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"{cfg.scenario}: wrote {', '.join(files)} and manifest.json to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lindqpt", description="Dissipative DQPT experiment runner")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--threads", type=int)
    p.add_argument("--engine", choices=("auto", "exact", "nonhermitian", "mcwf"))
    p.add_argument("--gamma-l", type=float, dest="gamma_l")
    p.add_argument("--gamma-g", type=float, nargs="+", dest="gamma_g")
    p.add_argument("--n-cells", type=int, dest="n_cells")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", type=float, dest="t_max")
    p.add_argument("--k-points", type=int, dest="k_points")
    p.add_argument("--flux-samples", type=int, dest="flux_samples")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--k", type=float, help="momentum for single-k scenarios")
    p.add_argument("--U", type=float, help="HK interaction strength")
    p.add_argument("--delta", type=float, help="toy-model momentum cutoff")
    p.add_argument("--branches", type=int, help="Fisher-zero branch count")
    p.add_argument("--cusp-factor", type=float, dest="cusp_factor", help="detector threshold as a multiple of the median statistic")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    try:
        config = load_config(args.config, overrides)
    except (OSError, yaml.YAMLError, DomainError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
