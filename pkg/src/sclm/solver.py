"""Pathwise Galerkin time stepping for the stochastic balance law.

The coefficient system reads

    d alpha_j = [ <f(x,u), grad e_j> + eps * lam_j * alpha_j ] dt
                + <Phi(x,u), e_j> dW_t

with the flux pairing realized as a grid quadrature of f^k(x,u) d_k e_j.
The viscous part is integrated exactly by a split-step factor
exp(eps * lam_j * dt) by default; the explicit variant is kept for
step-size studies and carries a stability guard.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BlowupError, ConfigError
from .flux import FluxField, NoiseAmplitude
from .function_space import SpectralField, project
from .geometry import EigenBasis
from .stochastic import TimeGrid, WienerPath, sample_wiener


def _torus_mode_width(basis: EigenBasis) -> Optional[int]:
    # modes per axis = 2*kmax + 1 for the trigonometric catalog; None when
    # the mode count is not lattice-structured (sphere, discrete kind)
    kmax = 0
    for ms in basis.meta:
        if ms[0] == "const":
            continue
        if ms[0] not in ("cos", "sin"):
            return None
        kmax = max(kmax, max(abs(int(k)) for k in ms[1]))
    return 2 * kmax + 1


@dataclass(frozen=True)
class SolverConfig:
    basis: EigenBasis
    grid: TimeGrid
    flux: Optional[FluxField] = None
    noise: Optional[NoiseAmplitude] = None
    viscosity: float = 0.0
    seed: int = 0
    bound: float = 2.0          # working interval is [-bound, bound]
    split_step: bool = True
    modes: int = field(default=0)

    def __post_init__(self):
        if self.viscosity < 0:
            raise ConfigError("viscosity must be nonnegative")
        if self.bound <= 0:
            raise ConfigError("working bound must be positive")
        if self.modes == 0:
            object.__setattr__(self, "modes", self.basis.n)
        elif self.modes != self.basis.n:
            raise ConfigError(
                f"modes={self.modes} disagrees with basis size {self.basis.n}")
        for obj, what in ((self.flux, "flux"), (self.noise, "noise")):
            if obj is not None and obj.manifold is not self.basis.manifold:
                raise ConfigError(f"{what} built on a different manifold")
        if not self.split_step and self.viscosity > 0:
            stiff = self.grid.dt * self.viscosity * float(np.max(np.abs(self.basis.lams)))
            if stiff > 0.5:
                raise ConfigError(
                    f"explicit viscous step unstable: dt*eps*|lam_max| = {stiff:.3g} > 0.5; "
                    "enable split_step or shrink dt")
        if self.flux is not None:
            width = _torus_mode_width(self.basis)
            if width is not None:
                short = [s for s in self.manifold.shape if s < 2 * width]
                if short:
                    raise ConfigError(
                        f"flux quadrature grid too coarse for de-aliasing: need at least "
                        f"{2 * width} nodes per axis, have {min(short)}")

    @property
    def manifold(self):
        return self.basis.manifold


def _guard(cfg: SolverConfig, u_nodal: np.ndarray, state: dict, when: str) -> None:
    top = float(np.max(np.abs(u_nodal)))
    if not np.isfinite(top) or top > 4 * cfg.bound:
        raise BlowupError(
            f"solution left the working interval ({when}): max|u| = {top:.4g} "
            f"with bound {cfg.bound}",
            snapshot={"when": when, "max_abs": top, **state})
    if top > 2 * cfg.bound and not state.get("warned"):
        warnings.warn(f"max|u| = {top:.4g} exceeds twice the working bound ({when})",
                      RuntimeWarning, stacklevel=3)
        state["warned"] = True


def _flux_pairing(u: SpectralField, cfg: SolverConfig) -> np.ndarray:
    """Quadrature of f^k(x, u(x)) * d_k e_j(x); zero vector when flux is absent."""
    basis = u.basis
    if cfg.flux is None:
        return np.zeros(basis.n)
    M = cfg.manifold
    fw = cfg.flux(u.values()) * M.grid.weights       # (d, *shape)
    sp = list(range(1, 2 + M.dim))
    return np.tensordot(basis.partials, fw, axes=(sp, list(range(fw.ndim))))


def galerkin_drift(u: SpectralField, cfg: SolverConfig) -> np.ndarray:
    """Full drift vector: flux pairing plus eps*lam_j*alpha_j."""
    state: dict = {}
    _guard(cfg, u.values(), state, "drift evaluation")
    drift = _flux_pairing(u, cfg)
    if cfg.viscosity > 0:
        drift = drift + cfg.viscosity * u.basis.lams * u.coeffs
    return drift


def galerkin_noise(u: SpectralField, cfg: SolverConfig) -> np.ndarray:
    """Quadrature of Phi(x, u(x)) * e_j(x); multiplies dW in the step."""
    basis = u.basis
    if cfg.noise is None or cfg.noise.is_zero:
        return np.zeros(basis.n)
    M = cfg.manifold
    pw = cfg.noise(u.values()) * M.grid.weights
    return np.tensordot(basis.values, pw, axes=(list(range(1, 1 + M.dim)),
                                                list(range(M.dim))))


def step(u: SpectralField, dw: float, cfg: SolverConfig) -> SpectralField:
    """One Euler-Maruyama step; split-step applies the viscous factor exactly."""
    basis = u.basis
    dt = cfg.grid.dt
    drift = _flux_pairing(u, cfg)
    if not cfg.split_step and cfg.viscosity > 0:
        drift = drift + cfg.viscosity * basis.lams * u.coeffs
    alpha = u.coeffs + dt * drift + galerkin_noise(u, cfg) * dw
    if cfg.split_step and cfg.viscosity > 0:
        alpha = np.exp(cfg.viscosity * basis.lams * dt) * alpha
    if not np.all(np.isfinite(alpha)):
        raise BlowupError("non-finite coefficients after step",
                          snapshot={"coeffs": alpha})
    return SpectralField(basis, alpha)


@dataclass(frozen=True)
class SolutionPath:
    config: SolverConfig
    coeffs: np.ndarray          # (steps+1, n)
    wiener: WienerPath
    l2: np.ndarray
    grad_energy: np.ndarray     # eps * sum |lam_j| alpha_j^2
    mass: np.ndarray
    warned: bool

    @property
    def times(self) -> np.ndarray:
        return self.config.grid.times

    def field_at(self, m: int) -> SpectralField:
        return SpectralField(self.config.basis, self.coeffs[m])

    def terminal_field(self) -> SpectralField:
        return self.field_at(self.coeffs.shape[0] - 1)


def _monitor_rows(cfg: SolverConfig, alpha: np.ndarray, mode_masses: np.ndarray):
    l2 = float(np.sqrt(np.sum(alpha * alpha)))
    grad = cfg.viscosity * float(np.sum(np.abs(cfg.basis.lams) * alpha * alpha))
    mass = float(alpha @ mode_masses)
    return l2, grad, mass


def run_path(cfg: SolverConfig, u0: np.ndarray, path_id: int = 0,
             substeps: int = 1) -> SolutionPath:
    """March the coefficient system over cfg.grid, driven by the counter RNG.

    u0 is a nodal field on the working grid; it is projected onto the basis
    first. Deterministic in (cfg.seed, path_id, substeps).
    """
    M = cfg.manifold
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != M.shape:
        raise ConfigError(f"initial data shape {u0.shape} does not match grid {M.shape}")
    sup = float(np.max(np.abs(u0)))
    if sup > cfg.bound:
        raise ConfigError(
            f"initial data leaves the working interval: max|u0| = {sup:.4g} > {cfg.bound}")
    wiener = sample_wiener(cfg.seed, cfg.grid, path_id=path_id, substeps=substeps)
    basis = cfg.basis
    mode_masses = np.array([M.integrate(basis.values[j]) for j in range(basis.n)])

    steps = cfg.grid.steps
    coeffs = np.empty((steps + 1, basis.n))
    l2 = np.empty(steps + 1)
    grad = np.empty(steps + 1)
    mass = np.empty(steps + 1)

    u = project(basis, u0)
    coeffs[0] = u.coeffs
    l2[0], grad[0], mass[0] = _monitor_rows(cfg, coeffs[0], mode_masses)
    state: dict = {"warned": False}
    for m in range(steps):
        _guard(cfg, u.values(), state, f"step {m} (t = {cfg.grid.times[m]:.6g})")
        u = step(u, wiener.increments[m], cfg)
        coeffs[m + 1] = u.coeffs
        l2[m + 1], grad[m + 1], mass[m + 1] = _monitor_rows(cfg, coeffs[m + 1], mode_masses)
    _guard(cfg, u.values(), state, "terminal state")

    for a in (coeffs, l2, grad, mass):
        a.setflags(write=False)
    return SolutionPath(config=cfg, coeffs=coeffs, wiener=wiener, l2=l2,
                        grad_energy=grad, mass=mass, warned=state["warned"])


@dataclass(frozen=True)
class EnergyReport:
    n_paths: int
    terminal_sq_moment: float       # E[ (||u(T)||^2 / 2)^2 ]
    terminal_sq_moment_se: float
    viscous_dissipation: float      # E[ integral of eps*||grad u||^2 dt ]
    viscous_dissipation_se: float
    warned_paths: int


def energy_report(paths: Sequence[SolutionPath]) -> EnergyReport:
    """Monte Carlo estimates of the two a-priori energy functionals."""
    if len(paths) < 30:
        raise ConfigError("energy report needs at least 30 paths")
    dt = paths[0].config.grid.dt
    h1 = np.array([(0.5 * p.l2[-1] ** 2) ** 2 for p in paths])
    h2 = np.array([float(np.sum(p.grad_energy[:-1])) * dt for p in paths])
    k = len(paths)
    return EnergyReport(
        n_paths=k,
        terminal_sq_moment=float(np.mean(h1)),
        terminal_sq_moment_se=float(np.std(h1, ddof=1) / np.sqrt(k)),
        viscous_dissipation=float(np.mean(h2)),
        viscous_dissipation_se=float(np.std(h2, ddof=1) / np.sqrt(k)),
        warned_paths=sum(1 for p in paths if p.warned),
    )
