"""Command-line front end: scenario runs, stability reports, verification.

Subcommands:

  run     execute a scenario from a JSON config, writing per-region CSV
          diagnostics and a summary JSON
  cfl     print time-step limits and spectral analysis per region
  verify  run the built-in invariant suite at desk scale

Exit codes: 0 success, 2 configuration error, 3 divergence-guard abort,
1 verification failure.

Config files are JSON objects; physical quantities may be plain numbers
(SI) or unit-tagged objects like {"value": 30, "unit": "nm"}.
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .constants import EV, to_si
from .coupling import (UnstableTimeStep, cross_region_conservation,
                       run_coupled)
from .grid import PotentialField, RegionGrid
from .operators import DiscreteOperators
from .stability import cfl_gen_limit, cfl_limit, check_theorems
from .stepper import (DivergenceError, StaggeredState, run,
                      save_checkpoint)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3

SUMMARY_SCHEMA_VERSION = 1

THREADS_ENV_VAR = "FDTDQ_THREADS"


class ConfigError(ValueError):
    pass


def _quantity(obj):
    """A config number: plain (SI) or {"value": v, "unit": u}."""
    if isinstance(obj, dict):
        try:
            return to_si(obj["value"], obj.get("unit", "1"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad quantity {obj!r}: {exc}") from None
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return float(obj)
    raise ConfigError(f"expected a number or value/unit object, got {obj!r}")


@dataclass
class RunConfig:
    """Parsed run settings common to all scenarios."""

    scenario: str
    raw: dict
    n_t: int = None
    diag_stride: int = 1
    checkpoint_interval: int = 0
    guard_factor: float = 1e6
    allow_unstable: bool = False

    @classmethod
    def load(cls, path, stride=None, allow_unstable=False):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if "scenario" not in raw:
            raise ConfigError("config is missing the 'scenario' key")
        cfg = cls(scenario=raw["scenario"], raw=raw)
        if "n_t" in raw:
            cfg.n_t = int(raw["n_t"])
            if cfg.n_t < 0:
                raise ConfigError("n_t must be nonnegative")
        cfg.diag_stride = int(raw.get("diag_stride", 1))
        if stride is not None:
            cfg.diag_stride = stride
        if cfg.diag_stride < 1:
            raise ConfigError("diag_stride must be >= 1")
        cfg.checkpoint_interval = int(raw.get("checkpoint_interval", 0))
        if "guard_factor" in raw:
            cfg.guard_factor = float(raw["guard_factor"])
        cfg.allow_unstable = allow_unstable or bool(
            raw.get("allow_unstable", False))
        return cfg


def _well_spec(raw):
    kw = {}
    if "a" in raw:
        kw["a"] = _quantity(raw["a"])
    if "n_cells" in raw:
        kw["n_cells"] = int(raw["n_cells"])
    if "dt_factor" in raw:
        kw["dt_factor"] = float(raw["dt_factor"])
    if "phase" in raw:
        kw["phase"] = float(raw["phase"])
    return sc.InfiniteWellSpec(**kw)


def _barrier_spec(raw):
    kw = {}
    for key in ("x0", "lambda_bar", "u0", "a", "lx", "ly", "lz", "cell",
                "horizon"):
        if key in raw:
            kw[key] = _quantity(raw[key])
    if "dt_factor" in raw:
        kw["dt_factor"] = float(raw["dt_factor"])
    return sc.GaussianBarrierSpec(**kw)


def _tunneling_spec(raw):
    kw = {}
    for key in ("lx_reactant", "lx_barrier", "lx_product", "ly", "lz",
                "cell", "u0"):
        if key in raw:
            kw[key] = _quantity(raw[key])
    if "temperature" in raw:
        kw["temperature"] = _quantity(raw["temperature"])
    if "dt_factor" in raw:
        kw["dt_factor"] = float(raw["dt_factor"])
    return sc.TunnelingSpec(**kw)


def _finite_extreme(arr, fn):
    if arr is None:
        return None
    vals = np.asarray(arr)
    vals = vals[np.isfinite(vals)]
    return float(fn(vals)) if vals.size else None


def _region_summary(series):
    min_h = _finite_extreme(series.H, np.min)
    return {
        "max_residual_P": _finite_extreme(
            None if series.residual_P is None
            else np.abs(series.residual_P), np.max),
        "max_residual_H": _finite_extreme(
            None if series.residual_H is None
            else np.abs(series.residual_H), np.max),
        "min_P": _finite_extreme(series.P, np.min),
        "max_P": _finite_extreme(series.P, np.max),
        "min_H_joules": min_h,
        "min_H_ev": min_h / EV if min_h is not None else None,
    }


def _checkpoint_observer(out_dir, prefix, interval):
    if interval <= 0:
        return ()

    def observer(window):
        n = window.n + 1
        if n % interval == 0:
            state = StaggeredState(
                psiR=window.psiR_np1, psiI=window.psiI_np, n=n,
                psiR_prev=window.psiR_n, gradR_prev=window.gradR_n,
                gradI_prev=window.gradI_np)
            save_checkpoint(out_dir / f"{prefix}checkpoint_{n:08d}.npz",
                            state)

    return (observer,)


def _run_single(cfg, prep, out_dir, region_name="region"):
    """Drive a single-region scenario; returns (exit code, summary dict)."""
    diverged_at = None
    try:
        _, series = run(prep.state, prep.ops, prep.boundary, prep.dt,
                        prep.n_t, guard_factor=cfg.guard_factor,
                        observers=_checkpoint_observer(
                            out_dir, "", cfg.checkpoint_interval))
    except DivergenceError as exc:
        series = exc.series
        diverged_at = exc.step
    series.compute_residuals(norm_P=prep.norm_P, norm_H=prep.norm_H)
    series.write_csv(out_dir / f"{region_name}.csv",
                     stride=cfg.diag_stride)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "dt_seconds": prep.dt,
        "n_t": prep.n_t,
        "steps_completed": series.steps_completed,
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
        "regions": {region_name: _region_summary(series)},
    }
    return (EXIT_DIVERGED if diverged_at is not None else EXIT_OK), summary


def _reference_times(series, max_samples=700):
    stride = max(1, series.n_t // max_samples)
    idx = np.arange(0, series.steps_completed + 1, stride)
    return idx, idx * series.dt


def cmd_run(args):
    cfg = RunConfig.load(args.config, stride=args.stride,
                         allow_unstable=args.allow_unstable)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.scenario == "infinite_well":
        spec = _well_spec(cfg.raw)
        prep = sc.prepare_infinite_well(spec, n_t=cfg.n_t)
        _check_single_region_dt(prep, cfg)
        code, summary = _run_single(cfg, prep, out_dir, "well")
    elif cfg.scenario == "barrier":
        spec = _barrier_spec(cfg.raw)
        prep = sc.prepare_barrier(spec, n_t=cfg.n_t)
        _check_single_region_dt(prep, cfg)
        code, summary = _run_barrier(cfg, spec, prep, out_dir)
    elif cfg.scenario == "tunneling":
        code, summary = _run_tunneling(cfg, out_dir)
    else:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}")

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"wrote {summary_path}")
    return code


def _check_single_region_dt(prep, cfg):
    if cfg.allow_unstable:
        return
    closed = cfl_limit(prep.ops.grid, prep.ops.potential,
                       prep.ops.constants)
    if prep.dt < closed:
        return
    gen = cfl_gen_limit(prep.ops)
    if prep.dt >= gen:
        raise ConfigError(
            f"dt = {prep.dt:.6e} s exceeds the generalized limit "
            f"{gen:.6e} s; pass --allow-unstable to run anyway")


def _run_barrier(cfg, spec, prep, out_dir):
    diverged_at = None
    try:
        _, series = run(prep.state, prep.ops, prep.boundary, prep.dt,
                        prep.n_t, guard_factor=cfg.guard_factor,
                        observers=_checkpoint_observer(
                            out_dir, "", cfg.checkpoint_interval))
    except DivergenceError as exc:
        series = exc.series
        diverged_at = exc.step
    idx, times = _reference_times(series)
    ref_p = sc.analytic_region_probability(spec, times)
    ref_h = sc.analytic_region_energy(spec, times)
    norm_p = float(ref_p.max())
    norm_h = float(ref_h.max())
    series.compute_residuals(norm_P=norm_p, norm_H=norm_h)
    series.write_csv(out_dir / "barrier.csv", stride=cfg.diag_stride)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "dt_seconds": prep.dt,
        "n_t": prep.n_t,
        "steps_completed": series.steps_completed,
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
        "max_analytic_P": norm_p,
        "max_analytic_H_joules": norm_h,
        "max_analytic_H_ev": norm_h / EV,
        "regions": {"barrier": _region_summary(series)},
    }
    return (EXIT_DIVERGED if diverged_at is not None else EXIT_OK), summary


def _run_tunneling(cfg, out_dir):
    spec = _tunneling_spec(cfg.raw)
    graph, dt = sc.build_tunneling_graph(spec)
    n_t = cfg.n_t if cfg.n_t is not None else int(round(1e-12 / dt))
    diverged_at = None
    try:
        series_map = run_coupled(graph, dt, n_t,
                                 guard_factor=cfg.guard_factor,
                                 allow_unstable=cfg.allow_unstable)
    except UnstableTimeStep as exc:
        raise ConfigError(str(exc)) from None
    except DivergenceError as exc:
        series_map = exc.series
        diverged_at = exc.step
    norm_h = sc.analytic_total_energy(spec)
    regions = {}
    for name, series in series_map.items():
        series.compute_residuals(norm_P=1.0, norm_H=norm_h)
        series.write_csv(out_dir / f"{name}.csv", stride=cfg.diag_stride)
        regions[name] = _region_summary(series)
    cons = cross_region_conservation(series_map)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "dt_seconds": dt,
        "n_t": n_t,
        "steps_completed": max(s.steps_completed
                               for s in series_map.values()),
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
        "analytic_H_joules": norm_h,
        "analytic_H_ev": norm_h / EV,
        "total_P_max_drift": cons["max_P_drift"],
        "total_H_max_drift_normalized": cons["max_H_drift_normalized"],
        "regions": regions,
    }
    return (EXIT_DIVERGED if diverged_at is not None else EXIT_OK), summary


def _scenario_region_setups(cfg):
    """(name, grid, potential, constants, dt) per region of a scenario."""
    if cfg.scenario == "infinite_well":
        spec = _well_spec(cfg.raw)
        grid = spec.grid()
        return [("well", grid, spec.potential(grid), spec.constants,
                 spec.time_step())]
    if cfg.scenario == "barrier":
        spec = _barrier_spec(cfg.raw)
        grid = spec.grid()
        return [("barrier", grid, spec.potential(grid), spec.constants,
                 spec.time_step())]
    if cfg.scenario == "tunneling":
        spec = _tunneling_spec(cfg.raw)
        dt = spec.time_step()
        out = []
        for region in sc.TUNNELING_REGIONS:
            grid = spec.region_grid(region)
            out.append((region, grid, spec.region_potential(region, grid),
                        spec.constants, dt))
        return out
    raise ConfigError(f"unknown scenario {cfg.scenario!r}")


def cmd_cfl(args):
    cfg = RunConfig.load(args.config, allow_unstable=True)
    out_dir = Path(args.out) if args.out else None
    reports = {}
    for name, grid, potential, constants, dt in _scenario_region_setups(cfg):
        report = check_theorems(grid, potential, constants, dt)
        reports[name] = report.as_dict()
        print(f"[{name}]")
        print(report.as_text())
        print()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "stability.json"
        with open(path, "w") as fh:
            json.dump(reports, fh, indent=2)
            fh.write("\n")
        print(f"wrote {path}")
    return EXIT_OK


def _verify_checks():
    """Desk-scale invariant suite: (name, residual, tolerance) triples."""
    from .stability import (lambda_min_P, per_cell_cfl_gen,
                            single_cell_sigma_eigvals, spectral_radius)

    checks = []
    rng = np.random.default_rng(20240817)
    grid = RegionGrid(5, 4, 3, 0.9e-9, 1.1e-9, 1.3e-9)
    u = PotentialField(grid, rng.uniform(-1.0, 1.0, grid.n_nodes) * EV)
    from .constants import ELECTRON
    ops = DiscreteOperators(grid, u, ELECTRON)

    h = ops.assemble_H()
    v = rng.standard_normal(grid.n_nodes)
    ref = h @ v
    checks.append(("matrix-free H matches assembled H",
                   float(np.max(np.abs(ops.apply_H(v) - ref))
                         / np.max(np.abs(ref))), 1e-14))
    b = rng.standard_normal(grid.n_hanging)
    hb = ops.assemble_Hbot()
    refb = hb @ b
    scale = max(float(np.max(np.abs(refb))), 1e-300)
    checks.append(("matrix-free H_bot matches assembled H_bot",
                   float(np.max(np.abs(ops.apply_Hbot(b) - refb))) / scale,
                   1e-14))

    cell = RegionGrid(1, 1, 1, 0.7e-9, 0.9e-9, 1.2e-9)
    cops = DiscreteOperators(cell, PotentialField.uniform(cell, 0.3 * EV),
                             ELECTRON)
    analytic = np.sort(single_cell_sigma_eigvals(
        cell.dx, cell.dy, cell.dz, 0.3 * EV, ELECTRON))
    dense = np.linalg.eigvalsh(cops.assemble_sigma_dense())
    checks.append(("single-cell analytic eigenvalues vs dense solve",
                   float(np.max(np.abs(analytic - dense))
                         / np.max(np.abs(dense))), 1e-13))

    rho = spectral_radius(ops, method="dense")
    dt_gen = 2.0 / rho
    cell_min, _ = per_cell_cfl_gen(grid, u, ELECTRON)
    dt_cfl = cfl_limit(grid, u, ELECTRON)
    checks.append(("ordering dt_CFL <= per-cell min (relative margin)",
                   float((dt_cfl - cell_min) / dt_gen), 1e-13))
    checks.append(("ordering per-cell min <= dt_CFL,gen (relative margin)",
                   float((cell_min - dt_gen) / dt_gen), 1e-13))
    checks.append(("P positive definite below the generalized limit",
                   0.0 if lambda_min_P(ops, 0.5 * dt_gen) > 0.0 else 1.0,
                   0.5))
    checks.append(("P indefinite above the generalized limit",
                   0.0 if lambda_min_P(ops, 1.01 * dt_gen) < 0.0 else 1.0,
                   0.5))

    spec = sc.InfiniteWellSpec(n_cells=8)
    prep = sc.prepare_infinite_well(spec, n_t=200)
    _, series = run(prep.state, prep.ops, prep.boundary, prep.dt, 200)
    series.compute_residuals(norm_P=1.0, norm_H=spec.ground_energy)
    checks.append(("closed-box probability conservation",
                   float(np.nanmax(np.abs(series.P - 1.0))), 1e-13))
    checks.append(("closed-box energy balance residual",
                   float(np.nanmax(np.abs(series.residual_H))), 1e-13))
    return checks


def cmd_verify(args):
    checks = _verify_checks()
    width = max(len(name) for name, _, _ in checks)
    failed = 0
    for name, residual, tol in checks:
        ok = residual <= tol
        failed += 0 if ok else 1
        mark = "pass" if ok else "FAIL"
        print(f"{name:<{width}}  {residual: .3e}  (tol {tol:.0e})  {mark}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY_FAILED


def _apply_thread_limit(threads):
    if threads is None:
        env = os.environ.get(THREADS_ENV_VAR)
        if env is None:
            return
        threads = int(env)
    if threads < 1:
        raise ConfigError("thread count must be >= 1")
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(threads)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fdtdq",
        description="Staggered-grid quantum wavepacket solver with "
                    "conservation diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--stride", type=int, default=None,
                       help="diagnostic CSV row stride")
    p_run.add_argument("--allow-unstable", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_cfl = sub.add_parser("cfl", help="print time-step limits")
    p_cfl.add_argument("--config", required=True)
    p_cfl.add_argument("--out", default=None)
    p_cfl.add_argument("--threads", type=int, default=None)
    p_cfl.set_defaults(func=cmd_cfl)

    p_ver = sub.add_parser("verify", help="run the invariant suite")
    p_ver.add_argument("--threads", type=int, default=None)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_limit(getattr(args, "threads", None))
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
