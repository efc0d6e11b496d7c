"""Separable flux fields, noise amplitudes, and the assumption checkers.

A flux is f(x, xi) = c(x) b(xi) with c a contravariant vector field on
the chart and b a scalar profile.  Geometry compatibility means the
divergence of f(., xi) vanishes for every frozen xi, which for separable
fluxes reduces to div c = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError
from .geometry import ChartedManifold, divergence

FLUX_PROFILES = ("transport", "burgers")
FLUX_FIELDS = ("constant", "stream", "rotation")
EDGE_VANISH_TOL = 1e-12


@dataclass(frozen=True)
class FluxField:
    """Separable flux c(x) * b(xi) together with its xi derivative."""

    name: str
    manifold: ChartedManifold
    c: np.ndarray                       # (d, *shape)
    b: Callable[[np.ndarray], np.ndarray]
    b_prime: Callable[[np.ndarray], np.ndarray]

    def __call__(self, xi) -> np.ndarray:
        """f(x, xi); xi may be a scalar or a nodal field."""
        return self.c * self.b(np.asarray(xi, dtype=float))

    def a(self, xi) -> np.ndarray:
        """partial_xi f, the kinetic velocity."""
        return self.c * self.b_prime(np.asarray(xi, dtype=float))


@dataclass(frozen=True)
class NoiseAmplitude:
    """Multiplicative noise amplitude s(x) * chi(xi) with compact xi support."""

    name: str
    manifold: ChartedManifold
    spatial: np.ndarray                  # (*shape)
    profile: Callable[[np.ndarray], np.ndarray]
    profile_prime: Callable[[np.ndarray], np.ndarray]
    support_radius: float

    def __call__(self, xi) -> np.ndarray:
        return self.spatial * self.profile(np.asarray(xi, dtype=float))

    def xi_derivative(self, xi) -> np.ndarray:
        return self.spatial * self.profile_prime(np.asarray(xi, dtype=float))

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.spatial == 0.0))


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_prime(t: np.ndarray) -> np.ndarray:
    out = 30.0 * t * t * (t - 1.0) ** 2
    return np.where((t > 0.0) & (t < 1.0), out, 0.0)


def make_bump_profile(radius: float, plateau: float = 0.5):
    """C^1 even bump: 1 on |xi| <= plateau*radius, 0 beyond |xi| >= radius.

    Returns (chi, chi_prime).  The taper is a quintic smoothstep, so the
    derivative vanishes at both junctions and the profile is C^2.
    """
    if radius <= 0:
        raise ConfigError("support radius must be positive")
    if not (0.0 <= plateau < 1.0):
        raise ConfigError(f"plateau fraction must lie in [0, 1), got {plateau}")
    taper = radius * (1.0 - plateau)

    def chi(xi):
        z = np.abs(np.asarray(xi, dtype=float))
        t = (radius - z) / taper
        return np.where(z >= radius, 0.0, np.where(z <= plateau * radius, 1.0, _smoothstep(t)))

    def chi_prime(xi):
        xi = np.asarray(xi, dtype=float)
        z = np.abs(xi)
        t = (radius - z) / taper
        inner = -np.sign(xi) / taper * _smoothstep_prime(t)
        return np.where((z >= radius) | (z <= plateau * radius), 0.0, inner)

    return chi, chi_prime


def _band_window(M: ChartedManifold) -> np.ndarray:
    th_lo, th_hi = M.box[0]
    th = M.grid.axes[0]
    s = np.sin(math.pi * (th - th_lo) / (th_hi - th_lo)) ** 2
    return s[:, None] * np.ones((1, M.shape[1]))


def _check_edge_vanishing(M: ChartedManifold, comp: np.ndarray, what: str) -> None:
    if M.name != "sphere2":
        return
    scale = max(float(np.max(np.abs(comp))), 1.0)
    edge = max(float(np.max(np.abs(comp[0]))), float(np.max(np.abs(comp[-1]))))
    if edge > EDGE_VANISH_TOL * scale:
        raise ConfigError(f"{what} does not vanish at the band edges (edge max {edge:.3e})")


def builtin_flux(name: str, M: ChartedManifold, params: Optional[dict] = None) -> FluxField:
    """Catalog fluxes, named '<profile>-<field>'.

    Profiles: transport (b = xi), burgers (b = xi^2/2).  Fields:
    constant (tori), stream (torus2d, perpendicular gradient of
    psi = sin x1 sin x2), rotation (sphere band, azimuthal with a
    profile vanishing at the band edges).
    """
    params = dict(params or {})
    try:
        profile, fieldname = name.split("-", 1)
    except ValueError:
        raise ConfigError(f"flux name must look like 'profile-field', got {name!r}")
    if profile not in FLUX_PROFILES:
        raise ConfigError(f"unknown flux profile {profile!r}, expected one of {FLUX_PROFILES}")
    if fieldname not in FLUX_FIELDS:
        raise ConfigError(f"unknown velocity field {fieldname!r}, expected one of {FLUX_FIELDS}")

    if fieldname == "constant":
        if M.name == "sphere2":
            # a constant chart field cannot vanish at the caps
            raise ConfigError("constant velocity field is not available on the sphere band")
        vel = params.get("velocity", (1.0,) * M.dim)
        vel = tuple(float(v) for v in np.atleast_1d(vel))
        if len(vel) != M.dim:
            raise ConfigError(f"velocity needs {M.dim} components, got {vel}")
        c = np.empty((M.dim,) + M.shape)
        for k in range(M.dim):
            c[k] = vel[k]
    elif fieldname == "stream":
        if M.name != "torus2d":
            raise ConfigError("stream-function field needs torus2d")
        amp = float(params.get("amplitude", 1.0))
        x = M.coords()
        # psi = amp sin x1 sin x2, c = (d2 psi, -d1 psi)
        c = np.stack([
            amp * np.sin(x[0]) * np.cos(x[1]),
            -amp * np.cos(x[0]) * np.sin(x[1]),
        ])
    else:
        if M.name != "sphere2":
            raise ConfigError("rotation field needs the sphere band")
        amp = float(params.get("amplitude", 1.0))
        c = np.zeros((2,) + M.shape)
        c[1] = amp * _band_window(M)
        _check_edge_vanishing(M, c[1], "rotation field")

    if profile == "transport":
        b = lambda xi: xi
        bp = lambda xi: np.ones_like(np.asarray(xi, dtype=float))
    else:
        b = lambda xi: 0.5 * xi * xi
        bp = lambda xi: xi

    c = np.ascontiguousarray(c)
    c.setflags(write=False)
    return FluxField(name=name, manifold=M, c=c, b=b, b_prime=bp)


def builtin_noise(name: str, M: ChartedManifold, params: Optional[dict] = None) -> NoiseAmplitude:
    """Catalog noise amplitudes: 'zero' or 'bump'.

    bump params: sigma (scale), support (xi radius), plateau (flat
    fraction of the support), spatial ('const' or 'cosine' on tori; the
    sphere always gets a band window so the field dies at the caps).
    """
    params = dict(params or {})
    if name == "zero":
        zero = lambda xi: np.zeros_like(np.asarray(xi, dtype=float))
        return NoiseAmplitude(name=name, manifold=M, spatial=np.zeros(M.shape),
                              profile=zero, profile_prime=zero, support_radius=1.0)
    if name != "bump":
        raise ConfigError(f"unknown noise {name!r}, expected 'zero' or 'bump'")
    sigma = float(params.get("sigma", 0.25))
    radius = float(params.get("support", 2.0))
    plateau = float(params.get("plateau", 0.5))
    chi, chi_p = make_bump_profile(radius, plateau)
    kind = params.get("spatial", "const")
    if kind == "const":
        s = np.full(M.shape, sigma)
    elif kind == "cosine":
        if M.name == "sphere2":
            raise ConfigError("cosine spatial factor is for tori")
        amp = float(params.get("spatial_amplitude", 0.5))
        if not (0.0 <= amp < 1.0):
            raise ConfigError("spatial_amplitude must keep the factor positive")
        x = M.coords()
        s = sigma * (1.0 + amp * np.cos(x[0]))
    else:
        raise ConfigError(f"unknown spatial factor {kind!r}")
    if M.name == "sphere2":
        s = s * _band_window(M)
        _check_edge_vanishing(M, s, "noise spatial factor")
    s = np.ascontiguousarray(s)
    s.setflags(write=False)
    return NoiseAmplitude(name=name, manifold=M, spatial=s, profile=chi,
                          profile_prime=chi_p, support_radius=radius)


# ---------------------------------------------------------------------------
# assumption checkers

@dataclass(frozen=True)
class CompatibilityReport:
    max_residual: float
    tol: float
    passed: bool
    per_probe: np.ndarray   # (n_probes,) max |div f(., xi_i)|
    probes: np.ndarray


def check_geometry_compatibility(M: ChartedManifold, flux: FluxField,
                                 working_radius: float = 2.0,
                                 n_probes: int = 33,
                                 tol: Optional[float] = None) -> CompatibilityReport:
    """Scan div_g f(., xi) over frozen-xi probes of the working interval.

    The default tolerance is 10 h^2 for the coarsest grid spacing, the
    accuracy of the centered divergence stencil.
    """
    if n_probes < 3:
        raise ValueError("need at least 3 probes")
    h = max(M.grid.spacing)
    if tol is None:
        tol = 10.0 * h * h
    probes = np.linspace(-working_radius, working_radius, n_probes)
    per = np.empty(n_probes)
    for i, xi in enumerate(probes):
        per[i] = float(np.max(np.abs(divergence(M, flux(xi)))))
    mx = float(per.max())
    return CompatibilityReport(max_residual=mx, tol=float(tol), passed=bool(mx <= tol),
                               per_probe=per, probes=probes)


@dataclass(frozen=True)
class NoiseReport:
    support_ok: bool
    sup_amplitude: float
    envelope_integral: float      # int_M sup_xi |Phi(x, xi) xi| dgamma
    envelope_bound: float         # sup|Phi| * support radius * volume
    growth_constant: Optional[float]
    growth_interval_only: Optional[bool]
    passed: bool


def check_noise_assumptions(M: ChartedManifold, noise: NoiseAmplitude,
                            flux: Optional[FluxField] = None,
                            working_radius: float = 2.0,
                            n_scan: int = 16385) -> NoiseReport:
    """Verify the support cutoff and integrability envelope of the noise.

    Optionally samples the flux growth ratio sup_x |f(., xi)|_g /
    (1 + |xi|); if the ratio is still climbing at the edge of the
    working interval the bound only holds there, which is reported
    rather than failed.
    """
    R = noise.support_radius
    xi_out = np.array([-2.0 * R, -R * (1.0 + 1e-9), R * (1.0 + 1e-9), 2.0 * R])
    out_vals = max(float(np.max(np.abs(noise(x)))) for x in xi_out)
    out_der = max(float(np.max(np.abs(noise.xi_derivative(x)))) for x in xi_out)
    support_ok = (out_vals == 0.0) and (out_der == 0.0)

    # the amplitude is spatial(x) * profile(xi), so the xi scan factors out
    scan = np.linspace(-R, R, n_scan)
    prof = np.abs(noise.profile(scan))
    env_profile = float(np.max(prof * np.abs(scan)))
    envelope = np.abs(noise.spatial) * env_profile
    sup_amp = float(np.max(np.abs(noise.spatial)) * prof.max())
    env_int = M.integrate(envelope)
    env_bound = sup_amp * R * M.volume

    growth_c = None
    interval_only = None
    if flux is not None:
        # separable flux: sup_x |f(., xi)|_g = |b(xi)| * sup_x |c(x)|_g
        cnorm2 = np.einsum("i...,...ij,j...->...", flux.c, M.metric, flux.c)
        cmax = math.sqrt(float(np.max(cnorm2)))

        def ratio(xi: float) -> float:
            return cmax * abs(float(flux.b(xi))) / (1.0 + abs(xi))

        lam = np.linspace(-working_radius, working_radius, 65)
        c_work = max(ratio(x) for x in lam)
        # probing far outside the interval separates a bounded asymptote
        # from genuinely superlinear growth
        c_far = max(ratio(s * working_radius) for s in (4.0, 64.0, 1024.0, 65536.0))
        if c_far > 2.0 * c_work:
            growth_c = c_work
            interval_only = True
        else:
            growth_c = max(c_work, c_far)
            interval_only = False

    passed = support_ok and env_int <= env_bound * (1.0 + 1e-12)
    return NoiseReport(support_ok=support_ok, sup_amplitude=sup_amp,
                       envelope_integral=float(env_int), envelope_bound=float(env_bound),
                       growth_constant=growth_c, growth_interval_only=interval_only,
                       passed=passed)
