"""Charted manifolds, quadrature, differential operators, and eigenbases.

Everything lives in a single chart: tensor-product node grids over a
coordinate box, with per-axis periodicity flags.  The metric is stored
nodewise together with its inverse, the Gramian sqrt(det g), and the
Christoffel trace needed by the divergence operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MANIFOLD_NAMES = ("torus1d", "torus2d", "sphere2")

_EIGEN_CAP_DEFAULT = 4096


def _gregory_weights(n: int, h: float) -> np.ndarray:
    # Endpoint-corrected trapezoid (fourth order).  Plain trapezoid is
    # second order, which is too coarse for the band-volume targets.
    w = np.ones(n)
    w[0] = w[-1] = 3.0 / 8.0
    w[1] = w[-2] = 7.0 / 6.0
    w[2] = w[-3] = 23.0 / 24.0
    return w * h


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product nodes with product-rule weights times the Gramian."""

    axes: tuple         # one 1-d coordinate array per axis
    spacing: tuple      # uniform spacing per axis
    periodic: tuple     # per-axis wrap flag
    axis_weights: tuple # bare 1-d rule per axis, Gramian not included
    weights: np.ndarray # full tensor weights, Gramian included

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)


@dataclass(frozen=True)
class ChartedManifold:
    name: str
    dim: int
    box: tuple
    periodic: tuple
    grid: QuadratureGrid
    metric: np.ndarray            # (*shape, d, d)
    metric_inv: np.ndarray        # (*shape, d, d)
    gram: np.ndarray              # (*shape), sqrt(det g)
    christoffel_trace: np.ndarray # (*shape, d), partial_k log gram
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple:
        return self.grid.shape

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def volume(self) -> float:
        return float(self.grid.weights.sum())

    def coords(self) -> np.ndarray:
        """Node coordinates as an array of shape (dim, *shape)."""
        return np.stack(np.meshgrid(*self.grid.axes, indexing="ij"))

    def integrate(self, f: np.ndarray) -> float:
        """Integral of a nodal scalar field against the volume measure."""
        return float(np.sum(self.grid.weights * f))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def build_manifold(name: str, nodes, theta_min: float = 0.15) -> ChartedManifold:
    """Construct one of the built-in charts.

    nodes is an int (same count per axis) or a per-axis tuple.  For the
    sphere the chart is the band theta in [theta_min, pi - theta_min],
    phi in [0, 2*pi); the polar caps are excluded so the metric stays
    uniformly positive definite.
    """
    if name not in MANIFOLD_NAMES:
        raise ValueError(f"unknown manifold {name!r}, expected one of {MANIFOLD_NAMES}")
    dim = 1 if name == "torus1d" else 2
    if np.isscalar(nodes):
        nodes = (int(nodes),) * dim
    nodes = tuple(int(n) for n in nodes)
    if len(nodes) != dim:
        raise ValueError(f"{name} needs {dim} node counts, got {nodes}")
    for n in nodes:
        if n < 8:
            raise ValueError(f"at least 8 nodes per axis required, got {n}")

    if name in ("torus1d", "torus2d"):
        axes, spacing, axw = [], [], []
        for n in nodes:
            h = 2.0 * math.pi / n
            axes.append(np.arange(n) * h)
            spacing.append(h)
            axw.append(np.full(n, h))
        periodic = (True,) * dim
        box = ((0.0, 2.0 * math.pi),) * dim
        shape = nodes
        g = np.zeros(shape + (dim, dim))
        for k in range(dim):
            g[..., k, k] = 1.0
        gram = np.ones(shape)
        christ = np.zeros(shape + (dim,))
        ginv = g.copy()
        params = {}
    else:
        if not (0.0 < theta_min < math.pi / 2):
            raise ValueError(f"theta_min must lie in (0, pi/2), got {theta_min}")
        n_th, n_ph = nodes
        th_lo, th_hi = theta_min, math.pi - theta_min
        h_th = (th_hi - th_lo) / (n_th - 1)
        h_ph = 2.0 * math.pi / n_ph
        theta = np.linspace(th_lo, th_hi, n_th)
        phi = np.arange(n_ph) * h_ph
        axes = [theta, phi]
        spacing = [h_th, h_ph]
        axw = [_gregory_weights(n_th, h_th), np.full(n_ph, h_ph)]
        periodic = (False, True)
        box = ((th_lo, th_hi), (0.0, 2.0 * math.pi))
        shape = (n_th, n_ph)
        sin_th = np.sin(theta)[:, None] * np.ones((1, n_ph))
        g = np.zeros(shape + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = sin_th**2
        ginv = np.zeros_like(g)
        ginv[..., 0, 0] = 1.0
        ginv[..., 1, 1] = 1.0 / sin_th**2
        gram = sin_th.copy()
        christ = np.zeros(shape + (2,))
        christ[..., 0] = np.cos(theta)[:, None] / sin_th
        params = {"theta_min": theta_min}

    # metric must be SPD at every node
    diag = np.einsum("...kk->...k", g)
    if np.any(diag <= 0.0) or np.any(np.linalg.det(g) <= 0.0):
        raise ValueError("metric is not positive definite on the grid")

    w = axw[0].copy()
    for aw in axw[1:]:
        w = np.multiply.outer(w, aw)
    weights = w * gram

    grid = QuadratureGrid(
        axes=tuple(_freeze(a) for a in axes),
        spacing=tuple(spacing),
        periodic=periodic,
        axis_weights=tuple(_freeze(a) for a in axw),
        weights=_freeze(weights),
    )
    return ChartedManifold(
        name=name, dim=dim, box=box, periodic=periodic, grid=grid,
        metric=_freeze(g), metric_inv=_freeze(ginv), gram=_freeze(gram),
        christoffel_trace=_freeze(christ), params=params,
    )


# ---------------------------------------------------------------------------
# finite differences

def _partial(M: ChartedManifold, f: np.ndarray, axis: int) -> np.ndarray:
    """Centered partial derivative along one chart axis, second order.

    Periodic axes wrap; otherwise one-sided second-order stencils close
    the ends.
    """
    h = M.grid.spacing[axis]
    if M.periodic[axis]:
        return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)
    return np.gradient(f, h, axis=axis, edge_order=2)


def gradient(M: ChartedManifold, v: np.ndarray) -> np.ndarray:
    """Contravariant gradient (grad v)^i = g^{ij} partial_j v, shape (d, *shape)."""
    parts = np.stack([_partial(M, v, k) for k in range(M.dim)])
    return np.einsum("...ij,j...->i...", M.metric_inv, parts)


def divergence(M: ChartedManifold, X: np.ndarray) -> np.ndarray:
    """Divergence of a contravariant field X with shape (d, *shape)."""
    if X.shape[0] != M.dim:
        raise ValueError(f"field has {X.shape[0]} components, chart dim is {M.dim}")
    out = np.zeros(M.shape)
    for k in range(M.dim):
        out += _partial(M, X[k], k)
        out += M.christoffel_trace[..., k] * X[k]
    return out


def laplace_beltrami(M: ChartedManifold, v: np.ndarray) -> np.ndarray:
    """Flux-form Laplacian (1/G) partial_i (G g^{ii} partial_i v).

    Staggered differencing keeps the integral of the result exactly zero
    on periodic axes.  Diagonal metrics only, which covers every built-in
    chart; ends of non-periodic axes get a zero-flux closure.
    """
    offdiag = M.metric_inv.copy()
    for k in range(M.dim):
        offdiag[..., k, k] = 0.0
    if np.any(offdiag != 0.0):
        raise NotImplementedError("flux-form Laplacian assumes a diagonal metric")

    out = np.zeros(M.shape)
    for k in range(M.dim):
        h = M.grid.spacing[k]
        A = M.gram * M.metric_inv[..., k, k]
        A_half = 0.5 * (A + np.roll(A, -1, k))
        dplus = (np.roll(v, -1, k) - v) / h
        flux = A_half * dplus
        if not M.periodic[k]:
            idx = [slice(None)] * M.dim
            idx[k] = -1
            flux[tuple(idx)] = 0.0  # no flux through the band edge
        out += (flux - np.roll(flux, 1, k)) / h
    return out / M.gram


# ---------------------------------------------------------------------------
# eigenbases

@dataclass(frozen=True)
class EigenBasis:
    """Laplace-Beltrami eigenmodes sampled on the chart grid.

    Modes are ordered by |lambda| ascending with deterministic
    tie-breaking, lambda_0 = 0 is the constant mode, and all stored
    eigenvalues are <= 0.
    """

    manifold: ChartedManifold
    kind: str                 # "analytic" or "discrete"
    values: np.ndarray        # (n, *shape)
    lams: np.ndarray          # (n,), all <= 0
    partials: np.ndarray      # (n, d, *shape) coordinate partials
    meta: tuple               # per-mode descriptors

    @property
    def n(self) -> int:
        return len(self.lams)

    def gram(self) -> np.ndarray:
        """Pairwise quadrature inner products, ideally the identity."""
        w = self.manifold.grid.weights
        V = self.values.reshape(self.n, -1)
        return (V * w.reshape(-1)) @ V.T

    def evaluate_at(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate analytic modes at arbitrary chart points.

        pts has shape (dim, m); returns (n, m).  Discrete modes are grid
        functions and cannot be evaluated off the grid.
        """
        if self.kind != "analytic":
            raise ValueError("off-grid evaluation needs an analytic basis")
        pts = np.atleast_2d(pts)
        out = np.empty((self.n, pts.shape[1]))
        for j, ms in enumerate(self.meta):
            out[j] = _eval_mode(self.manifold, ms, pts)
        return out

    def laplacian_closed_form(self, j: int) -> np.ndarray:
        """Closed-form Laplacian of mode j, evaluated fresh on the grid."""
        if self.kind != "analytic":
            raise ValueError("closed form only available for analytic bases")
        pts = self.manifold.coords().reshape(self.manifold.dim, -1)
        lam = _mode_lambda(self.meta[j])
        vals = _eval_mode(self.manifold, self.meta[j], pts)
        return (lam * vals).reshape(self.manifold.shape)


def _mode_lambda(ms) -> float:
    kind = ms[0]
    if kind == "const":
        return 0.0
    if kind in ("cos", "sin"):
        k = np.asarray(ms[1])
        return -float(k @ k)
    if kind == "sph":
        l = ms[1]
        return -float(l * (l + 1))
    raise ValueError(f"unknown mode {ms!r}")


def _eval_mode(M: ChartedManifold, ms, pts: np.ndarray) -> np.ndarray:
    kind = ms[0]
    if kind == "const":
        return np.full(pts.shape[1], ms[-1])
    if kind in ("cos", "sin"):
        k = np.asarray(ms[1], dtype=float)
        phase = k @ pts
        return (np.cos(phase) if kind == "cos" else np.sin(phase)) * ms[-1]
    if kind == "sph":
        _, l, m, scale = ms
        theta, phi = pts
        return _real_sph(l, m, theta, phi) * scale
    raise ValueError(f"unknown mode {ms!r}")


def _norm_plm_column(l_max: int, m: int, x: np.ndarray) -> np.ndarray:
    """Fully normalized associated Legendre values P̄_lm(x) for l = m..l_max.

    Normalization: integral over the full sphere of (P̄_lm)^2 times the
    azimuthal factor is one.  Standard stable upward recurrence in l.
    """
    out = np.zeros((l_max - m + 1,) + x.shape)
    # seed P̄_mm
    p = np.full(x.shape, 1.0 / math.sqrt(4.0 * math.pi))
    sx = np.sqrt(np.maximum(1.0 - x * x, 0.0))
    for k in range(1, m + 1):
        p = -math.sqrt((2.0 * k + 1.0) / (2.0 * k)) * sx * p
    out[0] = p
    if l_max > m:
        out[1] = math.sqrt(2.0 * m + 3.0) * x * p
    for l in range(m + 2, l_max + 1):
        a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
        b = math.sqrt(((2.0 * l + 1.0) * ((l - 1.0) ** 2 - m * m)) / ((2.0 * l - 3.0) * (l * l - m * m)))
        out[l - m] = a * x * out[l - m - 1] - b * out[l - m - 2]
    return out


def _real_sph(l: int, m: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    x = np.cos(theta)
    col = _norm_plm_column(l, abs(m), x)
    plm = col[l - abs(m)]
    if m == 0:
        return plm
    if m > 0:
        return math.sqrt(2.0) * plm * np.cos(m * phi)
    return math.sqrt(2.0) * plm * np.sin(abs(m) * phi)


def _real_sph_dtheta(l: int, m: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Analytic theta derivative via the degree-lowering identity."""
    x = np.cos(theta)
    am = abs(m)
    col = _norm_plm_column(l, am, x)
    plm = col[l - am]
    if l == am:
        lower = np.zeros_like(plm)
    else:
        lower = col[l - 1 - am]
    c = math.sqrt((2.0 * l + 1.0) / (2.0 * l - 1.0)) * math.sqrt(float(l * l - am * am)) if l > 0 else 0.0
    dth = (l * x * plm - c * lower) / np.sin(theta)
    if m == 0:
        return dth
    if m > 0:
        return math.sqrt(2.0) * dth * np.cos(m * phi)
    return math.sqrt(2.0) * dth * np.sin(am * phi)


def _torus_mode_list(dim: int, n: int):
    """First n torus modes ordered by |lambda| then lexicographic index."""
    modes = [("const",)]
    if dim == 1:
        k = 1
        while len(modes) < n:
            modes.append(("cos", (k,)))
            modes.append(("sin", (k,)))
            k += 1
        return modes[:n]
    # half lattice: k1 > 0, or k1 == 0 and k2 > 0; only shells with
    # |k|^2 <= kmax^2 are complete once components are capped at kmax
    kmax = 1
    while True:
        cand = []
        for k1 in range(0, kmax + 1):
            for k2 in range(-kmax, kmax + 1):
                if k1 == 0 and k2 <= 0:
                    continue
                q = k1 * k1 + k2 * k2
                if q <= kmax * kmax:
                    cand.append((q, k1, k2))
        cand.sort()
        if len(cand) * 2 + 1 >= n:
            modes = [("const",)]
            for _, k1, k2 in cand:
                modes.append(("cos", (k1, k2)))
                modes.append(("sin", (k1, k2)))
                if len(modes) >= n:
                    return modes[:n]
        kmax += 1


def build_eigenbasis(M: ChartedManifold, n: int, kind: str = "analytic",
                     cap: int = _EIGEN_CAP_DEFAULT) -> EigenBasis:
    """Assemble the first n eigenmodes on the chart.

    Analytic bases: Fourier modes on the tori (exact eigenpairs), real
    spherical harmonics on the sphere band (n must be a perfect square,
    eigenvalues -l(l+1), values renormalized against the band measure).
    kind="discrete" solves the dense symmetric eigenproblem of the
    flux-form Laplacian in the quadrature inner product instead.
    """
    if n < 1:
        raise ValueError("need at least one mode")
    if n > cap:
        raise ValueError(f"requested {n} modes exceeds the cap {cap}")
    if kind == "discrete":
        return _discrete_eigenbasis(M, n)
    if kind != "analytic":
        raise ValueError(f"unknown basis kind {kind!r}")

    shape = M.shape
    coords = M.coords()
    if M.name in ("torus1d", "torus2d"):
        modes = _torus_mode_list(M.dim, n)
        vol = M.volume
        values = np.empty((n,) + shape)
        partials = np.zeros((n, M.dim) + shape)
        lams = np.empty(n)
        meta = []
        for j, ms in enumerate(modes):
            if ms[0] == "const":
                scale = 1.0 / math.sqrt(vol)
                values[j] = scale
                lams[j] = 0.0
                meta.append(("const", scale))
                continue
            k = np.asarray(ms[1], dtype=float)
            scale = 1.0 / math.sqrt(vol / 2.0)
            phase = np.tensordot(k, coords, axes=(0, 0))
            if ms[0] == "cos":
                values[j] = np.cos(phase) * scale
                trig_d = -np.sin(phase) * scale
            else:
                values[j] = np.sin(phase) * scale
                trig_d = np.cos(phase) * scale
            for a in range(M.dim):
                partials[j, a] = k[a] * trig_d
            lams[j] = -float(k @ k)
            meta.append((ms[0], tuple(int(x) for x in ms[1]), scale))
    else:
        L = int(round(math.sqrt(n))) - 1
        if (L + 1) ** 2 != n:
            raise ValueError(f"sphere bases have (L+1)^2 modes, got n={n}")
        theta, phi = coords
        values = np.empty((n,) + shape)
        partials = np.zeros((n, 2) + shape)
        lams = np.empty(n)
        meta = []
        w = M.grid.weights
        j = 0
        for l in range(L + 1):
            for m in range(-l, l + 1):
                v = _real_sph(l, m, theta, phi)
                nb = math.sqrt(float(np.sum(w * v * v)))
                scale = 1.0 / nb
                values[j] = v * scale
                partials[j, 0] = _real_sph_dtheta(l, m, theta, phi) * scale
                # phi derivative swaps the azimuthal factor
                if m != 0:
                    x = np.cos(theta)
                    plm = _norm_plm_column(l, abs(m), x)[l - abs(m)]
                    if m > 0:
                        partials[j, 1] = -m * math.sqrt(2.0) * plm * np.sin(m * phi) * scale
                    else:
                        partials[j, 1] = abs(m) * math.sqrt(2.0) * plm * np.cos(abs(m) * phi) * scale
                lams[j] = -float(l * (l + 1)) + 0.0
                meta.append(("sph", l, m, scale))
                j += 1

    return EigenBasis(manifold=M, kind="analytic", values=_freeze(values),
                      lams=_freeze(lams), partials=_freeze(partials), meta=tuple(meta))


def _discrete_eigenbasis(M: ChartedManifold, n: int) -> EigenBasis:
    from scipy.linalg import eigh

    N = M.n_nodes
    if N > 4096:
        raise ValueError(f"dense eigensolve limited to 4096 nodes, grid has {N}")
    if n > N:
        raise ValueError(f"cannot extract {n} modes from {N} nodes")
    w = M.grid.weights.reshape(-1)
    # assemble the operator columnwise; symmetrize in the weighted product
    K = np.empty((N, N))
    e = np.zeros(M.shape)
    flat = e.reshape(-1)
    for i in range(N):
        flat[i] = 1.0
        K[:, i] = laplace_beltrami(M, e).reshape(-1)
        flat[i] = 0.0
    A = -0.5 * (w[:, None] * K + (w[:, None] * K).T)
    lam, V = eigh(A, np.diag(w))
    # eigh returns ascending; ours are -lam sorted by magnitude
    order = np.argsort(np.abs(lam), kind="stable")[:n]
    lams = -np.abs(lam[order]) + 0.0
    vals = V[:, order].T.reshape((n,) + M.shape).copy()
    # fix the sign convention: largest-magnitude entry positive
    for j in range(n):
        f = vals[j].reshape(-1)
        k = np.argmax(np.abs(f))
        if f[k] < 0:
            vals[j] = -vals[j]
    partials = np.zeros((n, M.dim) + M.shape)
    for j in range(n):
        for a in range(M.dim):
            partials[j, a] = _partial(M, vals[j], a)
    meta = tuple(("disc", j) for j in range(n))
    return EigenBasis(manifold=M, kind="discrete", values=_freeze(vals),
                      lams=_freeze(lams), partials=_freeze(partials), meta=meta)
