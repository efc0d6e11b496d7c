"""Kinetic-picture diagnostics for stored trajectories.

The level-set function h(x, xi) = [u(x) > xi] turns L1 geometry into counting:
the difference measure nu = -d_xi h, entropy defects against convex test
functions, a weak-form estimate of the nonnegative kinetic measure, and the
paired-path contraction experiment that probes L1 stability under a common
driving noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import ConfigError
from .geometry import divergence, gradient, laplace_beltrami
from .solver import SolutionPath, SolverConfig, run_path


@dataclass(frozen=True)
class XiGrid:
    bound: float
    n_cells: int = 128

    def __post_init__(self):
        if self.bound <= 0 or self.n_cells < 2:
            raise ConfigError("xi grid needs a positive bound and at least 2 cells")

    @property
    def spacing(self) -> float:
        return 2.0 * self.bound / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.bound, self.bound, self.n_cells + 1)


@dataclass(frozen=True)
class KineticFunction:
    xi: XiGrid
    h: np.ndarray               # (*spatial, n_cells+1), values in {0, 1}

    def conjugate(self) -> np.ndarray:
        return 1.0 - self.h

    def nu(self) -> np.ndarray:
        """Cellwise difference measure -d_xi h; nonnegative, sums to one."""
        return -np.diff(self.h, axis=-1)


def kinetic_function(u: np.ndarray, xi: XiGrid) -> KineticFunction:
    u = np.asarray(u, dtype=float)
    top = float(np.max(np.abs(u)))
    if top > xi.bound:
        raise ConfigError(f"field leaves the kinetic window: max|u| = {top:.4g} > {xi.bound}")
    h = (u[..., None] > xi.nodes).astype(float)
    h.setflags(write=False)
    return KineticFunction(xi=xi, h=h)


def layer_cake_values(kf: KineticFunction) -> np.ndarray:
    """Left-rule integral of h - [xi < 0]; reproduces u within one cell."""
    d = kf.xi.spacing
    below = int(np.sum(kf.xi.nodes[:-1] < 0.0))
    return d * (np.sum(kf.h[..., :-1], axis=-1) - below)


def pair_count_distance(u1: np.ndarray, u2: np.ndarray, xi: XiGrid,
                        weights: np.ndarray) -> float:
    """D = integral of h1*(1-h2) + h2*(1-h1) over xi and space.

    Counting form: per node the integrand counts xi-nodes strictly between
    the two values, so D is spacing * weighted |count1 - count2|.
    """
    nodes = xi.nodes
    c1 = np.searchsorted(nodes, np.ravel(u1), side="left")
    c2 = np.searchsorted(nodes, np.ravel(u2), side="left")
    gap = np.abs(c1 - c2).astype(float)
    return float(xi.spacing * (gap @ np.ravel(weights)))


@dataclass(frozen=True)
class DefectSeries:
    times: np.ndarray           # t_{m+1} for each step m
    values: np.ndarray
    running_min: np.ndarray
    cumulative: np.ndarray


def _nodal_history(path: SolutionPath) -> np.ndarray:
    basis = path.config.basis
    flat = basis.values.reshape(basis.n, -1)
    out = path.coeffs @ flat
    return out.reshape((path.coeffs.shape[0],) + path.config.manifold.shape)


def entropy_defect(path: SolutionPath, theta: Callable, theta_prime: Callable,
                   theta_second: Callable, table_size: int = 4097) -> DefectSeries:
    """Per-step defect of the entropy balance for a convex test function.

    Each entry is the balance RHS over one step minus the increment of
    int theta(u) dgamma; nonnegative for convex theta up to time and space
    discretization error.
    """
    cfg = path.config
    M = cfg.manifold
    dt = cfg.grid.dt
    hist = _nodal_history(path)
    if not np.all(np.isfinite(hist)):
        raise ConfigError("trajectory contains non-finite values")

    flux, noise = cfg.flux, cfg.noise
    q_of = None
    if flux is not None:
        # antiderivative Q(z) = int_0^z theta'(v) b'(v) dv on a fine table
        lo = float(np.min(hist)) - 1.0
        hi = float(np.max(hist)) + 1.0
        zs = np.linspace(lo, hi, table_size)
        integrand = np.asarray(theta_prime(zs), dtype=float) * np.asarray(
            flux.b_prime(zs), dtype=float)
        table = cumulative_trapezoid(integrand, zs, initial=0.0)
        table -= np.interp(0.0, zs, table)
        q_of = lambda z: np.interp(z, zs, table)

    steps = cfg.grid.steps
    vals = np.empty(steps)
    theta_int = np.array([M.integrate(np.asarray(theta(hist[m]), dtype=float))
                          for m in range(steps + 1)])
    for m in range(steps):
        u = hist[m]
        rhs = 0.0
        if flux is not None:
            qfield = flux.c * q_of(u)
            rhs -= dt * M.integrate(divergence(M, qfield))
        if cfg.viscosity > 0:
            rhs += dt * cfg.viscosity * M.integrate(
                laplace_beltrami(M, np.asarray(theta(u), dtype=float)))
        if noise is not None and not noise.is_zero:
            phi = noise(u)
            rhs += 0.5 * dt * M.integrate(phi * phi * np.asarray(theta_second(u), dtype=float))
            rhs += path.wiener.increments[m] * M.integrate(
                phi * np.asarray(theta_prime(u), dtype=float))
        vals[m] = rhs - (theta_int[m + 1] - theta_int[m])

    for a in (vals,):
        a.setflags(write=False)
    return DefectSeries(times=cfg.grid.times[1:], values=vals,
                        running_min=np.minimum.accumulate(vals),
                        cumulative=np.cumsum(vals))


def _axis_windows(M, axis: int, count: int) -> np.ndarray:
    """Overlapping cos^2 windows along one axis; a partition of unity on
    periodic axes and saturated at the ends otherwise. Returns (count, len)."""
    if count < 2:
        raise ConfigError("need at least 2 windows per axis")
    ax = M.grid.axes[axis]
    if M.periodic[axis]:
        length = ax[-1] + M.grid.spacing[axis] - ax[0]
        delta = length / count
        centers = ax[0] + delta * np.arange(count)
        sep = (ax[None, :] - centers[:, None] + length / 2) % length - length / 2
        w = np.cos(np.pi * sep / (2 * delta)) ** 2
        w[np.abs(sep) >= delta] = 0.0
        return w
    lo, hi = ax[0], ax[-1]
    delta = (hi - lo) / count
    centers = lo + delta * (np.arange(count) + 0.5)
    sep = ax[None, :] - centers[:, None]
    w = np.cos(np.pi * sep / (2 * delta)) ** 2
    w[np.abs(sep) >= delta] = 0.0
    w[0, ax <= centers[0]] = 1.0
    w[-1, ax >= centers[-1]] = 1.0
    return w


def spatial_windows(M, per_axis: int) -> np.ndarray:
    """Tensor window bank (n_windows, *shape); sums to 1 on all-periodic charts."""
    banks = [_axis_windows(M, a, per_axis) for a in range(M.dim)]
    out = banks[0]
    for b in banks[1:]:
        out = (out[:, None, ..., None] * b[None, :, None, ...]).reshape(
            out.shape[0] * b.shape[0], *out.shape[1:], b.shape[1])
    return out


class RampBank:
    """Antiderivative tests: psi_q rises linearly across xi-cell q and stays
    flat above it, so -int psi_q' dm isolates the mass of cell q."""

    def __init__(self, xi: XiGrid):
        self.xi = xi

    def psi(self, q: int, z: np.ndarray) -> np.ndarray:
        lo = self.xi.nodes[q]
        return np.clip(np.asarray(z, dtype=float) - lo, 0.0, self.xi.spacing)

    def psi_prime(self, q: int, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lo = self.xi.nodes[q]
        return ((z >= lo) & (z < lo + self.xi.spacing)).astype(float)

    def __len__(self) -> int:
        return self.xi.n_cells


@dataclass(frozen=True)
class KineticDefect:
    xi: XiGrid
    values: np.ndarray            # (steps, n_windows, n_cells)
    negative_fraction: float
    condition: float
    closure_residual: float

    def xi_integrated(self) -> np.ndarray:
        """Per-step total mass over all windows and cells."""
        return np.sum(self.values, axis=(1, 2))


def _design_matrix(bank, xi: XiGrid, samples: int = 9) -> np.ndarray:
    # response of test s to a unit mass spread over cell c
    cells = np.empty((len(bank), xi.n_cells))
    for c in range(xi.n_cells):
        zz = xi.nodes[c] + (np.arange(samples) + 0.5) * (xi.spacing / samples)
        for s in range(len(bank)):
            cells[s, c] = np.mean(bank.psi_prime(s, zz))
    return cells


def estimate_kinetic_measure(path: SolutionPath, xi: XiGrid,
                             bank=None, windows_per_axis: int = 4,
                             cond_cap: float = 1e8) -> KineticDefect:
    """Weak-form recovery of the kinetic measure from a stored trajectory.

    Tests the level-set balance against window(x) * psi(xi) pairs over each
    time step and solves for cellwise mass; the default ramp bank makes the
    xi system diagonal.
    """
    cfg = path.config
    M = cfg.manifold
    dt = cfg.grid.dt
    xin = xi.nodes
    if bank is None:
        bank = RampBank(xi)
    design = _design_matrix(bank, xi)
    condition = float(np.linalg.cond(design))
    if condition > cond_cap:
        raise ConfigError(f"test bank is ill conditioned: cond = {condition:.3g}")
    solver_mat = np.linalg.pinv(design)

    hist = _nodal_history(path)
    if float(np.max(np.abs(hist))) > xi.bound:
        raise ConfigError("trajectory leaves the kinetic window")

    win = spatial_windows(M, windows_per_axis)        # (P, *shape)
    P = win.shape[0]
    w = M.grid.weights
    X = (win * w).reshape(P, -1)                      # window quadrature rows
    if cfg.flux is not None:
        grads = np.stack([gradient(M, win[p]) for p in range(P)])
        G = (np.einsum("k...,pk...->p...", cfg.flux.c, grads) * w).reshape(P, -1)
    L = (np.stack([laplace_beltrami(M, win[p]) for p in range(P)]) * w).reshape(P, -1)

    # xi antiderivative tables for int_{-R}^{z}: psi, b'(xi)psi, and 1
    nt = 8193
    zs = np.linspace(-xi.bound, xi.bound, nt)
    S = len(bank)
    psi_tab = np.stack([bank.psi(s, zs) for s in range(S)])
    lam_tab = cumulative_trapezoid(psi_tab, zs, axis=1, initial=0.0)
    if cfg.flux is not None:
        bp = np.asarray(cfg.flux.b_prime(zs), dtype=float)
        theta_tab = cumulative_trapezoid(psi_tab * bp, zs, axis=1, initial=0.0)

    def interp_rows(tab: np.ndarray, z: np.ndarray) -> np.ndarray:
        out = np.empty((tab.shape[0], z.size))
        zf = np.ravel(z)
        for s in range(tab.shape[0]):
            out[s] = np.interp(zf, zs, tab[s])
        return out

    steps = cfg.grid.steps
    vals = np.empty((steps, P, xi.n_cells))
    closure = 0.0
    lam_next = interp_rows(lam_tab, hist[0])
    for m in range(steps):
        u = hist[m]
        uf = np.ravel(u)
        lam_here = lam_next
        lam_next = interp_rows(lam_tab, hist[m + 1])
        resid = -(lam_next - lam_here) @ X.T                    # (S, P)
        if cfg.flux is not None:
            resid += dt * interp_rows(theta_tab, u) @ G.T
        if cfg.viscosity > 0:
            resid += dt * cfg.viscosity * lam_here @ L.T
        if cfg.noise is not None and not cfg.noise.is_zero:
            phi = np.ravel(cfg.noise(u))
            psi_u = np.stack([bank.psi(s, uf) for s in range(S)])
            dpsi_u = np.stack([bank.psi_prime(s, uf) for s in range(S)])
            resid += 0.5 * dt * (dpsi_u * (phi * phi)) @ X.T
            resid += path.wiener.increments[m] * (psi_u * phi) @ X.T
        vals[m] = (solver_mat @ resid).T

        # closure: the same balance tested with psi = 1 carries no measure
        hplus = np.ravel(hist[m + 1]) + xi.bound
        hhere = uf + xi.bound
        c_resid = -(hplus - hhere) @ X.T
        if cfg.flux is not None:
            bofu = np.asarray(cfg.flux.b(uf), dtype=float) - float(
                np.asarray(cfg.flux.b(-xi.bound), dtype=float))
            c_resid = c_resid + dt * bofu @ G.T
        if cfg.viscosity > 0:
            c_resid = c_resid + dt * cfg.viscosity * hhere @ L.T
        if cfg.noise is not None and not cfg.noise.is_zero:
            c_resid = c_resid + path.wiener.increments[m] * phi @ X.T
        closure = max(closure, float(np.max(np.abs(c_resid))))

    total = float(np.sum(np.abs(vals)))
    neg = float(np.sum(np.maximum(-vals, 0.0)))
    vals.setflags(write=False)
    return KineticDefect(xi=xi, values=vals,
                         negative_fraction=neg / total if total > 0 else 0.0,
                         condition=condition, closure_residual=closure)


@dataclass(frozen=True)
class ContractionReport:
    n_paths: int
    mean_sq: np.ndarray         # E[D(t)^2] over the time grid
    rhs_initial: float          # E[D(0)^2]
    lhs_terminal: float         # E[D(T)^2]
    ratio: float
    max_ratio: float
    passed: Optional[bool]      # None when no stability constant was given


def contraction_experiment(cfg: SolverConfig, u10: np.ndarray, u20: np.ndarray,
                           n_paths: int, xi: Optional[XiGrid] = None,
                           c_stab: Optional[float] = None) -> ContractionReport:
    """Paired runs under a common Wiener path; D(t) is the kinetic pairing
    distance, equal to the L1 distance up to the xi resolution."""
    if xi is None:
        xi = XiGrid(cfg.bound, 128)
    if n_paths < 1:
        raise ConfigError("need at least one path pair")
    u10 = np.asarray(u10, dtype=float)
    u20 = np.asarray(u20, dtype=float)
    if u10.shape != u20.shape:
        raise ConfigError("initial data pair on mismatched grids")

    M = cfg.manifold
    steps = cfg.grid.steps
    acc = np.zeros(steps + 1)
    for pid in range(n_paths):
        p1 = run_path(cfg, u10, path_id=pid)
        p2 = run_path(cfg, u20, path_id=pid)
        h1 = _nodal_history(p1)
        h2 = _nodal_history(p2)
        for m in range(steps + 1):
            d = pair_count_distance(h1[m], h2[m], xi, M.grid.weights)
            acc[m] += d * d
    mean_sq = acc / n_paths
    rhs0 = float(mean_sq[0])
    lhsT = float(mean_sq[-1])
    if rhs0 > 0:
        ratio = lhsT / rhs0
        max_ratio = float(np.max(mean_sq) / rhs0)
    else:
        ratio = 0.0 if lhsT == 0.0 else np.inf
        max_ratio = 0.0 if float(np.max(mean_sq)) == 0.0 else np.inf
    mean_sq.setflags(write=False)
    return ContractionReport(n_paths=n_paths, mean_sq=mean_sq, rhs_initial=rhs0,
                             lhs_terminal=lhsT, ratio=ratio, max_ratio=max_ratio,
                             passed=None if c_stab is None else bool(max_ratio <= c_stab))
