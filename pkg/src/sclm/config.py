"""Run configuration: TOML parsing, validation, canonical serialization.

A run file has sections [manifold], [solver], [initial-data], [experiment]
and optionally [flux], [noise], [output]. The resolved form (defaults
materialized, overrides applied) is what gets hashed and archived, so a
rerun can prove it executed the same configuration.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import tomli

from .errors import ConfigError
from .flux import FluxField, NoiseAmplitude, _smoothstep, builtin_flux, builtin_noise
from .geometry import ChartedManifold, EigenBasis, build_eigenbasis, build_manifold
from .solver import SolverConfig
from .stochastic import TimeGrid

EXPERIMENTS = ("simulate", "check-flux", "viscosity-sweep", "contraction",
               "isometry", "entropy-audit")
_SECTIONS = ("manifold", "flux", "noise", "solver", "initial-data",
             "experiment", "output")
INITIAL_DATA = ("constant", "sine", "riemann-smooth", "file")


def load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}")


def canonical_json(resolved: dict) -> str:
    return json.dumps(resolved, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(canonical_json(resolved).encode("utf-8")).hexdigest()


def _need(sec: dict, section: str, field: str):
    if field not in sec:
        raise ConfigError(f"missing {section}.{field}")
    return sec[field]


def resolve(raw: dict, seed: Optional[int] = None,
            experiment: Optional[str] = None,
            paths: Optional[int] = None) -> dict:
    """Fill defaults and apply command-line overrides; returns a plain dict
    of JSON primitives, the unit that is hashed and archived."""
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section '{key}'")

    man = dict(raw.get("manifold") or {})
    name = _need(man, "manifold", "name")
    nodes = _need(man, "manifold", "nodes")
    out_man = {"name": str(name), "nodes": nodes}
    if "theta_min" in man:
        out_man["theta_min"] = float(man["theta_min"])

    sol = dict(raw.get("solver") or {})
    out_sol = {
        "epsilon": float(_need(sol, "solver", "epsilon")),
        "modes": int(_need(sol, "solver", "modes")),
        "dt": float(_need(sol, "solver", "dt")),
        "T": float(_need(sol, "solver", "T")),
        "seed": int(sol.get("seed", 0)),
        "R": float(sol.get("R", 2.0)),
        "split_step": bool(sol.get("split_step", True)),
        "basis": str(sol.get("basis", "analytic")),
    }
    if seed is not None:
        out_sol["seed"] = int(seed)
    if out_sol["dt"] <= 0 or out_sol["T"] <= 0:
        raise ConfigError("solver.dt and solver.T must be positive")
    steps = out_sol["T"] / out_sol["dt"]
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("solver.dt must divide solver.T evenly")

    init = dict(raw.get("initial-data") or raw.get("initial_data") or {})
    iname = str(_need(init, "initial-data", "name"))
    if iname not in INITIAL_DATA:
        raise ConfigError(f"unknown initial-data.name '{iname}'")
    out_init = {"name": iname, "params": dict(init.get("params") or {})}

    exp = dict(raw.get("experiment") or {})
    ename = str(experiment if experiment is not None
                else _need(exp, "experiment", "name"))
    if ename not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment.name '{ename}'")
    eparams = dict(exp.get("params") or {})
    if paths is not None:
        eparams["paths"] = int(paths)
    out_exp = {"name": ename, "params": eparams}

    resolved = {"manifold": out_man, "solver": out_sol,
                "initial-data": out_init, "experiment": out_exp}
    for section in ("flux", "noise"):
        if section in raw and raw[section]:
            sec = dict(raw[section])
            resolved[section] = {"name": str(_need(sec, section, "name")),
                                 "params": dict(sec.get("params") or {})}
    if "output" in raw and raw["output"]:
        resolved["output"] = {"dir": str(_need(dict(raw["output"]), "output", "dir"))}
    return resolved


def initial_field(M: ChartedManifold, name: str, params: dict) -> np.ndarray:
    x0 = M.coords()[0]
    if name == "constant":
        return np.full(M.shape, float(params.get("value", 0.5)))
    if name == "sine":
        amp = float(params.get("amplitude", 0.5))
        mode = int(params.get("mode", 1))
        off = float(params.get("offset", 0.0))
        return amp * np.sin(mode * x0) + off
    if name == "riemann-smooth":
        # two-state profile with quintic transitions, periodic-compatible
        left = float(params.get("left", -0.5))
        right = float(params.get("right", 0.5))
        width = float(params.get("width", 1.0))
        if width <= 0:
            raise ConfigError("initial-data.params.width must be positive")
        up = _smoothstep(np.clip((x0 - (np.pi / 2 - width / 2)) / width, 0, 1))
        down = _smoothstep(np.clip((x0 - (3 * np.pi / 2 - width / 2)) / width, 0, 1))
        return left + (right - left) * (up - down)
    if name == "file":
        path = str(_need(params, "initial-data.params", "path"))
        arr = np.asarray(np.load(path), dtype=float)
        if arr.shape != M.shape:
            raise ConfigError(
                f"initial-data file shape {arr.shape} does not match grid {M.shape}")
        return arr
    raise ConfigError(f"unknown initial-data.name '{name}'")


@dataclass(frozen=True)
class RunSetup:
    resolved: dict
    manifold: ChartedManifold
    basis: EigenBasis
    flux: Optional[FluxField]
    noise: Optional[NoiseAmplitude]
    solver: SolverConfig
    u0: np.ndarray
    experiment: str
    params: dict


def build_setup(resolved: dict) -> RunSetup:
    man = resolved["manifold"]
    nodes = man["nodes"]
    nodes = tuple(nodes) if isinstance(nodes, list) else int(nodes)
    M = build_manifold(man["name"], nodes, theta_min=man.get("theta_min", 0.15))

    sol = resolved["solver"]
    basis = build_eigenbasis(M, sol["modes"], kind=sol["basis"])
    flux = noise = None
    if "flux" in resolved:
        flux = builtin_flux(resolved["flux"]["name"], M, resolved["flux"]["params"])
    if "noise" in resolved:
        noise = builtin_noise(resolved["noise"]["name"], M, resolved["noise"]["params"])
    grid = TimeGrid(sol["T"], int(round(sol["T"] / sol["dt"])))
    cfg = SolverConfig(basis=basis, grid=grid, flux=flux, noise=noise,
                       viscosity=sol["epsilon"], seed=sol["seed"],
                       bound=sol["R"], split_step=sol["split_step"])
    init = resolved["initial-data"]
    u0 = initial_field(M, init["name"], init["params"])
    exp = resolved["experiment"]
    return RunSetup(resolved=resolved, manifold=M, basis=basis, flux=flux,
                    noise=noise, solver=cfg, u0=u0,
                    experiment=exp["name"], params=exp["params"])
