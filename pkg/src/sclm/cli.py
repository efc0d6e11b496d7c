"""Command-line experiment runner.

Every invocation resolves a TOML config, runs one named experiment, and
writes a manifest (config hash, seed, metrics, pass flag) next to the
CSV outputs.  Exit code 0 means the experiment's check passed, 2 means
it ran but the check failed, 1 means the run could not complete.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import (EXPERIMENTS, RunSetup, build_setup, canonical_json,
                     config_hash, load_toml, resolve)
from .errors import BlowupError, ConfigError
from .flux import check_geometry_compatibility, check_noise_assumptions
from .kinetic import XiGrid, contraction_experiment, entropy_defect, estimate_kinetic_measure
from .solver import run_path
from .stochastic import verify_ito_isometry


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _square_defect(path):
    return entropy_defect(path, lambda z: z * z, lambda z: 2.0 * z,
                          lambda z: np.full_like(z, 2.0))


def _defect_min_series(path) -> np.ndarray:
    """Running minimum of the quadratic entropy defect, padded with 0 at t=0."""
    d = _square_defect(path)
    return np.concatenate(([0.0], d.running_min))


def _run_simulate(setup: RunSetup, out_dir: str, threads: int):
    n_paths = int(setup.params.get("paths", 1))
    if n_paths < 1:
        raise ConfigError("experiment.params.paths must be >= 1")

    def one(pid: int):
        return run_path(setup.solver, setup.u0, path_id=pid)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(one, range(n_paths)))  # order-preserving
    else:
        paths = [one(pid) for pid in range(n_paths)]

    horizon = setup.solver.grid.horizon
    for pid, p in enumerate(paths):
        _write_csv(os.path.join(out_dir, f"monitors_p{pid}.csv"),
                   ("t", "l2", "grad_energy", "mass"),
                   zip(p.times, p.l2, p.grad_energy, p.mass))
        u = np.ravel(p.terminal_field().values())
        _write_csv(os.path.join(out_dir, f"fields_p{pid}.csv"),
                   ("t", "node", "u"),
                   ((horizon, i, ui) for i, ui in enumerate(u)))
    metrics = {
        "paths": n_paths,
        "terminal_l2": [float(p.l2[-1]) for p in paths],
        "terminal_mass": [float(p.mass[-1]) for p in paths],
        "warned_paths": int(sum(p.warned for p in paths)),
    }
    return metrics, True


def _run_check_flux(setup: RunSetup, out_dir: str, threads: int):
    if setup.flux is None:
        raise ConfigError("check-flux requires a [flux] section")
    rep = check_geometry_compatibility(setup.manifold, setup.flux,
                                       working_radius=setup.solver.bound)
    metrics = {"max_residual": rep.max_residual, "tol": rep.tol,
               "flux_passed": rep.passed}
    passed = rep.passed
    if setup.noise is not None:
        nrep = check_noise_assumptions(setup.manifold, setup.noise,
                                       flux=setup.flux,
                                       working_radius=setup.solver.bound)
        metrics.update({
            "noise_support_ok": nrep.support_ok,
            "sup_amplitude": nrep.sup_amplitude,
            "envelope_integral": nrep.envelope_integral,
            "envelope_bound": nrep.envelope_bound,
            "noise_passed": nrep.passed,
        })
        if nrep.growth_constant is not None:
            metrics["growth_constant"] = nrep.growth_constant
            metrics["growth_interval_only"] = nrep.growth_interval_only
        passed = passed and nrep.passed
    return metrics, passed


def _run_viscosity_sweep(setup: RunSetup, out_dir: str, threads: int):
    ladder = setup.params.get("ladder")
    if ladder is None:
        raise ConfigError("missing experiment.params.ladder")
    ladder = [float(x) for x in ladder]
    if len(ladder) < 3:
        raise ConfigError("experiment.params.ladder needs at least 3 rungs")
    if ladder[-1] <= 0.0 or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("experiment.params.ladder must be positive and strictly decreasing")
    floor = float(setup.params.get("floor", 1e-3))

    fields, defect_totals = [], []
    for eps in ladder:
        cfg = dataclasses.replace(setup.solver, viscosity=eps)
        p = run_path(cfg, setup.u0)  # same seed across rungs: paired draws
        fields.append(p.terminal_field().values())
        defect_totals.append(float(_square_defect(p).cumulative[-1]))
    dists = [float(setup.manifold.integrate(np.abs(a - b)))
             for a, b in zip(fields, fields[1:])]

    rows = []
    for i, eps in enumerate(ladder):
        to_next = dists[i] if i < len(dists) else float("nan")
        rows.append((eps, defect_totals[i], to_next))
    _write_csv(os.path.join(out_dir, "sweep.csv"),
               ("epsilon", "defect_total", "distance_to_next"), rows)

    strictly = all(b < a for a, b in zip(dists, dists[1:]))
    at_floor = max(dists) <= floor
    metrics = {"ladder": ladder, "distances": dists,
               "defect_totals": defect_totals, "floor": floor,
               "strictly_decreasing": strictly, "at_floor": at_floor}
    return metrics, strictly or at_floor


def _run_contraction(setup: RunSetup, out_dir: str, threads: int):
    n_paths = int(setup.params.get("paths", 16))
    amp = float(setup.params.get("perturbation", 0.1))
    mode = int(setup.params.get("perturbation_mode", 3))
    c_stab = float(setup.params.get("c_stab", 4.0))
    xi = XiGrid(setup.solver.bound, int(setup.params.get("xi_cells", 128)))

    u1 = setup.u0
    u2 = u1 + amp * np.cos(mode * setup.manifold.coords()[0])
    rep = contraction_experiment(setup.solver, u1, u2, n_paths, xi=xi, c_stab=c_stab)

    dmin = _defect_min_series(run_path(setup.solver, u1, path_id=0))
    times = setup.solver.grid.times
    _write_csv(os.path.join(out_dir, "kinetic.csv"), ("t", "D", "defect_min"),
               zip(times, np.sqrt(rep.mean_sq), dmin))
    metrics = {"paths": n_paths, "perturbation": amp, "c_stab": c_stab,
               "rhs_initial": rep.rhs_initial, "lhs_terminal": rep.lhs_terminal,
               "ratio": rep.ratio, "max_ratio": rep.max_ratio}
    return metrics, bool(rep.passed)


_INTEGRANDS = {
    # adapted series fed to the left-point stochastic integral
    "brownian": lambda p: p.w,
    "constant": lambda p: np.ones(p.grid.steps),
    "sign": lambda p: np.sign(p.w[:-1]),
}


def _run_isometry(setup: RunSetup, out_dir: str, threads: int):
    n_paths = int(setup.params.get("paths", 2000))
    name = str(setup.params.get("integrand", "brownian"))
    if name not in _INTEGRANDS:
        raise ConfigError(f"unknown experiment.params.integrand '{name}'")
    scale = float(setup.params.get("scale", 1.0))
    base = _INTEGRANDS[name]
    rep = verify_ito_isometry(lambda p: scale * base(p), n_paths,
                              setup.solver.grid, seed=setup.solver.seed)
    _write_csv(os.path.join(out_dir, "isometry.csv"),
               ("integrand", "n_paths", "lhs", "rhs", "stderr_lhs", "stderr_rhs"),
               [(name, rep.n_paths, rep.lhs, rep.rhs, rep.stderr_lhs, rep.stderr_rhs)])
    metrics = {"integrand": name, "n_paths": rep.n_paths, "lhs": rep.lhs,
               "rhs": rep.rhs, "stderr_lhs": rep.stderr_lhs,
               "stderr_rhs": rep.stderr_rhs}
    return metrics, bool(rep.passed)


def _run_entropy_audit(setup: RunSetup, out_dir: str, threads: int):
    tolerance = float(setup.params.get("tolerance", 0.02))
    estimate = bool(setup.params.get("estimate_measure", True))
    p = run_path(setup.solver, setup.u0)
    d = _square_defect(p)
    dmin = float(d.running_min[-1])
    metrics = {"defect_min": dmin, "defect_total": float(d.cumulative[-1]),
               "tolerance": tolerance}
    passed = dmin >= -tolerance
    if estimate:
        xi = XiGrid(setup.solver.bound, int(setup.params.get("xi_cells", 128)))
        km = estimate_kinetic_measure(p, xi, windows_per_axis=int(
            setup.params.get("windows_per_axis", 4)))
        neg_tol = float(setup.params.get("negative_fraction_tol", 0.05))
        metrics.update({"negative_fraction": km.negative_fraction,
                        "closure_residual": km.closure_residual,
                        "condition": km.condition,
                        "negative_fraction_tol": neg_tol})
        passed = passed and km.negative_fraction <= neg_tol
    # no pairing in a single-path audit, the D column is identically zero
    times = setup.solver.grid.times
    _write_csv(os.path.join(out_dir, "kinetic.csv"), ("t", "D", "defect_min"),
               zip(times, np.zeros(times.size), _defect_min_series(p)))
    return metrics, passed


_RUNNERS = {
    "simulate": _run_simulate,
    "check-flux": _run_check_flux,
    "viscosity-sweep": _run_viscosity_sweep,
    "contraction": _run_contraction,
    "isometry": _run_isometry,
    "entropy-audit": _run_entropy_audit,
}


def _pick_out_dir(cli_out, resolved: dict) -> str:
    if cli_out:
        return cli_out
    if "output" in resolved:
        return resolved["output"]["dir"]
    return os.environ.get("SCLM_OUT") or "sclm_out"


def _write_manifest(out_dir: str, resolved: dict, experiment: str,
                    metrics: dict, passed: bool, wall: float) -> dict:
    manifest = {
        "experiment": experiment,
        "config_hash": config_hash(resolved),
        "version": __version__,
        "seed": resolved["solver"]["seed"],
        "wall_clock_s": wall,
        "metrics": metrics,
        "passed": passed,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.canonical.json"), "w") as fh:
        fh.write(canonical_json(resolved) + "\n")
    return manifest


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route through the
    # config-error path instead so 2 stays reserved for failed checks
    def error(self, message):
        raise ConfigError(message)


def main(argv=None) -> int:
    ap = _Parser(prog="sclm", description="configured conservation-law experiments")
    ap.add_argument("experiment", choices=EXPERIMENTS,
                    help="which experiment to run (overrides the config)")
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override solver.seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--paths", type=int, default=None,
                    help="override the experiment's path count")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker threads for independent paths")

    t0 = time.perf_counter()
    try:
        args = ap.parse_args(argv)
        raw = load_toml(args.config)
        file_name = (raw.get("experiment") or {}).get("name")
        if file_name is not None and file_name != args.experiment:
            print(f"note: running '{args.experiment}', config names '{file_name}'",
                  file=sys.stderr)
        resolved = resolve(raw, seed=args.seed, experiment=args.experiment,
                           paths=args.paths)
        setup = build_setup(resolved)
        out_dir = _pick_out_dir(args.out, resolved)
        os.makedirs(out_dir, exist_ok=True)
        metrics, passed = _RUNNERS[setup.experiment](setup, out_dir,
                                                     max(1, args.threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except BlowupError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1

    wall = time.perf_counter() - t0
    _write_manifest(out_dir, resolved, setup.experiment, metrics, passed, wall)
    print(f"{setup.experiment}: {'pass' if passed else 'FAIL'} "
          f"(manifest in {out_dir})")
    return 0 if passed else 2
