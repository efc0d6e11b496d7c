import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sclm import (
    build_eigenbasis,
    build_manifold,
    divergence,
    gradient,
    laplace_beltrami,
)

rng = np.random.default_rng(1234)


def test_torus_volume_exact():
    M = build_manifold("torus1d", 32)
    assert_allclose(M.volume, 2 * math.pi, rtol=0, atol=1e-12)
    M2 = build_manifold("torus2d", 24)
    assert_allclose(M2.volume, (2 * math.pi) ** 2, rtol=0, atol=1e-10)


def test_torus_metric_fields():
    M = build_manifold("torus2d", 16)
    assert np.all(M.gram == 1.0)
    assert np.all(M.christoffel_trace == 0.0)
    assert np.all(M.metric[..., 0, 1] == 0.0)


def test_sphere_band_volume_closed_form():
    # oracle: area of the band is 2*pi*(cos(t0) - cos(pi - t0))
    t0 = 0.15
    exact = 2 * math.pi * (math.cos(t0) - math.cos(math.pi - t0))
    M = build_manifold("sphere2", (64, 128), theta_min=t0)
    assert abs(M.volume - exact) < 1e-4


def test_sphere_christoffel_is_cot_theta():
    M = build_manifold("sphere2", (64, 128))
    th = M.grid.axes[0]
    cot = np.cos(th) / np.sin(th)
    err = np.max(np.abs(M.christoffel_trace[..., 0] - cot[:, None]))
    assert err < 1e-10
    assert np.max(np.abs(M.christoffel_trace[..., 1])) == 0.0


def test_christoffel_matches_fd_of_log_gram():
    # the trace must be the derivative of log G to discretization accuracy;
    # measure on a fixed interior region so the cap-adjacent derivative
    # growth does not pollute the rate
    errs = []
    for n in (64, 128):
        M = build_manifold("sphere2", (n, 16))
        h = M.grid.spacing[0]
        th = M.grid.axes[0]
        sel = (th > 0.4) & (th < math.pi - 0.4)
        lng = np.log(M.gram)
        fd = np.gradient(lng, h, axis=0, edge_order=2)
        errs.append(np.max(np.abs(fd - M.christoffel_trace[..., 0])[sel]))
    assert errs[0] < 2e-2
    assert errs[1] < 0.30 * errs[0]  # second-order decay


def test_build_errors():
    with pytest.raises(ValueError):
        build_manifold("klein", 32)
    with pytest.raises(ValueError):
        build_manifold("torus1d", 4)
    with pytest.raises(ValueError):
        build_manifold("sphere2", (32, 32), theta_min=0.0)
    with pytest.raises(ValueError):
        build_manifold("torus2d", (16, 16, 16))


def test_gradient_torus():
    M = build_manifold("torus1d", 256)
    x = M.grid.axes[0]
    g = gradient(M, np.sin(x))
    assert_allclose(g[0], np.cos(x), atol=1e-3)


def test_gradient_sphere_zonal():
    M = build_manifold("sphere2", (96, 32))
    th = M.grid.axes[0]
    v = np.cos(th)[:, None] * np.ones((1, 32))
    g = gradient(M, v)
    assert_allclose(g[0], -np.sin(th)[:, None] * np.ones((1, 32)), atol=5e-4)
    assert np.max(np.abs(g[1])) < 1e-12


def test_divergence_constant_field_torus():
    M = build_manifold("torus2d", 32)
    X = np.zeros((2,) + M.shape)
    X[0] = 1.3
    X[1] = -0.7
    assert np.max(np.abs(divergence(M, X))) == 0.0


def test_divergence_convergence_rate():
    errs = []
    for n in (32, 64):
        M = build_manifold("torus2d", n)
        x = M.coords()
        X = np.stack([np.sin(x[0]) * np.cos(x[1]), np.zeros(M.shape)])
        exact = np.cos(x[0]) * np.cos(x[1])
        errs.append(np.max(np.abs(divergence(M, X) - exact)))
    assert errs[1] < 0.30 * errs[0]


def test_divergence_sphere_rotation_exact():
    # azimuthal field with theta-only profile is divergence free
    M = build_manifold("sphere2", (48, 64))
    th = M.grid.axes[0]
    X = np.zeros((2,) + M.shape)
    X[1] = np.sin(th)[:, None] ** 2
    assert np.max(np.abs(divergence(M, X))) < 1e-13


def test_laplacian_torus_mode():
    M = build_manifold("torus2d", 64)
    x = M.coords()
    v = np.sin(x[0])
    lap = laplace_beltrami(M, v)
    assert_allclose(lap, -v, atol=2e-3)


def test_laplacian_sphere_zonal():
    M = build_manifold("sphere2", (128, 16))
    th = M.grid.axes[0]
    v = np.cos(th)[:, None] * np.ones((1, 16))
    lap = laplace_beltrami(M, v)
    # band-edge closure is one-sided, check the interior
    assert_allclose(lap[3:-3], -2 * v[3:-3], atol=2e-3)


def test_laplacian_constant_zero_exact():
    for name, n in (("torus1d", 32), ("sphere2", (32, 32))):
        M = build_manifold(name, n)
        lap = laplace_beltrami(M, np.ones(M.shape))
        assert np.max(np.abs(lap)) == 0.0


def test_laplacian_conservation_torus_exact():
    M = build_manifold("torus2d", 32)
    v = rng.standard_normal(M.shape)
    total = M.integrate(laplace_beltrami(M, v))
    assert abs(total) < 1e-12


def test_integration_by_parts():
    # <grad v, grad v> == -int v (lap v) up to O(h^2)
    M = build_manifold("torus2d", 64)
    B = build_eigenbasis(M, 9)
    v = np.tensordot(rng.standard_normal(9), B.values, axes=(0, 0))
    g = gradient(M, v)
    lhs = M.integrate(np.einsum("i...,...ij,j...->...", g, M.metric, g))
    rhs = -M.integrate(v * laplace_beltrami(M, v))
    assert abs(lhs - rhs) < 5e-3 * max(1.0, abs(lhs))


def test_eigenbasis_torus1d_small():
    M = build_manifold("torus1d", 64)
    B = build_eigenbasis(M, 3)
    assert_allclose(B.lams, [0.0, -1.0, -1.0], atol=0)
    x = M.grid.axes[0]
    assert_allclose(B.values[0], 1.0 / math.sqrt(2 * math.pi), atol=1e-15)
    assert_allclose(B.values[1], np.cos(x) / math.sqrt(math.pi), atol=1e-14)
    assert_allclose(B.values[2], np.sin(x) / math.sqrt(math.pi), atol=1e-14)


def test_eigenbasis_ordering_and_signs():
    M = build_manifold("torus2d", 32)
    B = build_eigenbasis(M, 25)
    assert np.all(B.lams <= 0)
    assert np.all(np.diff(np.abs(B.lams)) >= 0)
    assert B.lams[0] == 0.0
    # shell sizes for |k|^2 = 0,1,2,4,5,8
    assert_allclose(np.abs(B.lams), [0] + [1] * 4 + [2] * 4 + [4] * 4 + [5] * 8 + [8] * 4, atol=0)


def test_eigenbasis_gram_torus():
    M = build_manifold("torus2d", 32)
    B = build_eigenbasis(M, 25)
    assert np.max(np.abs(B.gram() - np.eye(25))) < 1e-8


def test_eigenbasis_sphere_eigenvalues():
    M = build_manifold("sphere2", (48, 64))
    B = build_eigenbasis(M, 9)
    assert_allclose(B.lams, [0, -2, -2, -2, -6, -6, -6, -6, -6], atol=0)
    with pytest.raises(ValueError):
        build_eigenbasis(M, 7)  # not a perfect square


def test_eigenbasis_sphere_gram_low_degree():
    M = build_manifold("sphere2", (64, 128))
    B = build_eigenbasis(M, 4)
    assert np.max(np.abs(B.gram() - np.eye(4))) < 1e-6


def test_eigenbasis_cap():
    M = build_manifold("torus1d", 32)
    with pytest.raises(ValueError):
        build_eigenbasis(M, 5000)
    with pytest.raises(ValueError):
        build_eigenbasis(M, 9, cap=8)


def test_closed_form_residual_analytic():
    for M, n in ((build_manifold("torus2d", 32), 25),
                 (build_manifold("sphere2", (48, 64)), 9)):
        B = build_eigenbasis(M, n)
        res = max(
            math.sqrt(M.integrate((B.laplacian_closed_form(j) - B.lams[j] * B.values[j]) ** 2))
            for j in range(n)
        )
        assert res < 1e-8


def test_fd_laplacian_consistency_on_modes():
    # the discrete operator applied to analytic modes converges at O(h^2)
    errs = []
    for n in (32, 64):
        M = build_manifold("torus1d", n)
        B = build_eigenbasis(M, 5)
        err = max(
            np.max(np.abs(laplace_beltrami(M, B.values[j]) - B.lams[j] * B.values[j]))
            for j in range(5)
        )
        errs.append(err)
    assert errs[1] < 0.30 * errs[0]


def test_discrete_eigensolve_against_analytic():
    M = build_manifold("torus1d", 48)
    D = build_eigenbasis(M, 7, kind="discrete")
    A = build_eigenbasis(M, 7)
    assert np.max(np.abs(D.gram() - np.eye(7))) < 1e-6
    h = M.grid.spacing[0]
    for lam_d, lam_a in zip(D.lams, A.lams):
        assert abs(lam_d - lam_a) <= 2.0 * abs(lam_a) * h * h + 1e-10
    # discrete modes span the same low shells: project onto analytic ones
    w = M.grid.weights
    P = (A.values * w) @ D.values.T
    assert_allclose(np.sum(P**2, axis=0), np.ones(7), atol=1e-4)


def test_partial_derivatives_analytic_vs_fd_sphere():
    from sclm.geometry import _partial

    def worst(n_th, n_ph):
        M = build_manifold("sphere2", (n_th, n_ph))
        B = build_eigenbasis(M, 9)
        err = 0.0
        for j in range(9):
            for ax in range(2):
                fd = _partial(M, B.values[j], ax)
                err = max(err, np.max(np.abs(fd - B.partials[j, ax])))
        return err

    coarse, fine = worst(96, 64), worst(192, 128)
    assert coarse < 2e-2
    assert fine < 0.35 * coarse  # second order in both axes


def test_quadrature_grid_properties():
    M = build_manifold("sphere2", (32, 48))
    assert M.grid.shape == (32, 48)
    assert M.grid.periodic == (False, True)
    assert len(M.grid.axes[0]) == 32
    # weights are positive everywhere on the band
    assert np.all(M.grid.weights > 0)
