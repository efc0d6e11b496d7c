"""Wiener paths from a counter-based generator, and discrete Ito tools.

Draws are a pure function of (seed, path id, cell index): a chained
64-bit mixing hash produces uniforms which go through the inverse normal
CDF.  No generator state exists, so any increment is reproducible in
isolation and path ensembles are order-insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SALT_PATH = np.uint64(0xC2B2AE3D27D4EB4F)
_SALT_CELL = np.uint64(0x165667B19E3779F9)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; modular wraparound is the whole point
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, path_id: int, cells: np.ndarray) -> np.ndarray:
    """Uniform(0,1) draws keyed by (seed, path_id, cell index)."""
    with np.errstate(over="ignore"):
        s = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _GAMMA)
        p = _mix64(s ^ (np.uint64(path_id & 0xFFFFFFFFFFFFFFFF) * _SALT_PATH))
        h = _mix64(p ^ (np.asarray(cells, dtype=np.uint64) * _SALT_CELL))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def counter_normals(seed: int, path_id: int, cells: np.ndarray) -> np.ndarray:
    """Standard normals via the inverse CDF, same keying as the uniforms."""
    return ndtri(counter_uniforms(seed, path_id, cells))


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0.0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ValueError(f"need at least one step, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class WienerPath:
    """One scalar Brownian path on a time grid.

    increments is defined as diff(w), so the increment identity holds
    bitwise.  substeps > 1 keys the draws on a finer virtual grid and
    sums them per cell, which makes paths at different resolutions
    consistent realizations of the same Brownian motion.
    """

    grid: TimeGrid
    seed: int
    path_id: int
    substeps: int
    w: np.ndarray           # (steps + 1,), w[0] = 0
    increments: np.ndarray  # (steps,), = diff(w)


def sample_wiener(seed: int, grid: TimeGrid, path_id: int = 0, substeps: int = 1) -> WienerPath:
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    n_fine = grid.steps * substeps
    dt_fine = grid.horizon / n_fine
    g = counter_normals(seed, path_id, np.arange(n_fine)) * np.sqrt(dt_fine)
    if substeps > 1:
        g = g.reshape(grid.steps, substeps).sum(axis=1)
    w = np.empty(grid.steps + 1)
    w[0] = 0.0
    np.cumsum(g, out=w[1:])
    inc = np.diff(w)
    w.setflags(write=False)
    inc.setflags(write=False)
    return WienerPath(grid=grid, seed=seed, path_id=path_id, substeps=substeps,
                      w=w, increments=inc)


def ito_integral(x: np.ndarray, path: WienerPath) -> float:
    """Left-point Ito sum of an adapted series against the path.

    x holds X(t_m); either steps values (left points only) or steps + 1
    values (the terminal one is ignored, as the left-point rule demands).
    """
    x = np.asarray(x, dtype=float)
    m = path.grid.steps
    if x.shape == (m + 1,):
        x = x[:m]
    elif x.shape != (m,):
        raise ValueError(f"series length {x.shape} does not fit a grid with {m} steps")
    return float(np.sum(x * path.increments))


@dataclass(frozen=True)
class IsometryReport:
    lhs: float          # E[(int X dW)^2]
    rhs: float          # E[int X^2 dt]
    stderr_lhs: float
    stderr_rhs: float
    n_paths: int
    passed: bool


def verify_ito_isometry(make_integrand, n_paths: int, grid: TimeGrid,
                        seed: int = 0, bias_tol: float = 0.0) -> IsometryReport:
    """Monte Carlo check of E[(int X dW)^2] = E[int X^2 dt].

    make_integrand(path) must return the adapted series X(t_m).  The
    check passes when the two sides agree within four combined standard
    errors plus bias_tol; for adapted simple integrands the discrete
    identity is exact in expectation so the default bias_tol is zero.
    """
    if n_paths < 100:
        raise ValueError(f"need at least 100 paths for the estimate, got {n_paths}")
    dt = grid.dt
    sq = np.empty(n_paths)
    qv = np.empty(n_paths)
    for p in range(n_paths):
        path = sample_wiener(seed, grid, path_id=p)
        x = np.asarray(make_integrand(path), dtype=float)
        sq[p] = ito_integral(x, path) ** 2
        qv[p] = np.sum(x[: grid.steps] ** 2) * dt
    lhs = float(np.mean(sq))
    rhs = float(np.mean(qv))
    se_l = float(np.std(sq, ddof=1) / np.sqrt(n_paths))
    se_r = float(np.std(qv, ddof=1) / np.sqrt(n_paths))
    passed = abs(lhs - rhs) <= 4.0 * (se_l + se_r) + bias_tol
    return IsometryReport(lhs=lhs, rhs=rhs, stderr_lhs=se_l, stderr_rhs=se_r,
                          n_paths=n_paths, passed=passed)


def product_rule_residual(x: np.ndarray, y: np.ndarray,
                          sigma_x: np.ndarray, sigma_y: np.ndarray,
                          grid: TimeGrid) -> float:
    """Defect of the discrete product rule for two Ito processes.

    x, y are process values on the grid nodes (steps + 1 entries);
    sigma_x, sigma_y the diffusion series at left points (steps entries,
    or constants).  Returns
        x_T y_T - x_0 y_0 - sum[x dY + y dX + sigma_x sigma_y dt],
    which for exact Ito pairs shrinks like sqrt(dt) in RMS.
    """
    m = grid.steps
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (m + 1,) or y.shape != (m + 1,):
        raise ValueError("process series must have steps + 1 node values")
    sx = np.broadcast_to(np.asarray(sigma_x, dtype=float), (m,))
    sy = np.broadcast_to(np.asarray(sigma_y, dtype=float), (m,))
    dx = np.diff(x)
    dy = np.diff(y)
    covar = np.sum(sx * sy) * grid.dt
    return float(x[-1] * y[-1] - x[0] * y[0]
                 - np.sum(x[:-1] * dy) - np.sum(y[:-1] * dx) - covar)
