"""Spectral fields over an eigenbasis: projection, Sobolev norms, clamping."""

from __future__ import annotations

import math

import numpy as np

from .geometry import EigenBasis

SOBOLEV_ORDERS = (-1, 0, 1)


class SpectralField:
    """Coefficient vector over an EigenBasis with a lazy nodal cache.

    Writing to .coeffs (rebinding or in-place through set_coeffs)
    invalidates the cached nodal values.
    """

    def __init__(self, basis: EigenBasis, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (basis.n,):
            raise ValueError(f"expected {basis.n} coefficients, got shape {coeffs.shape}")
        self.basis = basis
        self._coeffs = coeffs.copy()
        self._nodal = None

    @property
    def coeffs(self) -> np.ndarray:
        view = self._coeffs.view()
        view.setflags(write=False)
        return view

    def set_coeffs(self, coeffs: np.ndarray) -> None:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != self._coeffs.shape:
            raise ValueError("coefficient count cannot change")
        self._coeffs = coeffs.copy()
        self._nodal = None

    def values(self) -> np.ndarray:
        """Nodal synthesis sum_k alpha_k e_k, cached."""
        if self._nodal is None:
            self._nodal = np.tensordot(self._coeffs, self.basis.values, axes=(0, 0))
        return self._nodal

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self._coeffs**2)))


def project(basis: EigenBasis, v: np.ndarray) -> SpectralField:
    """Quadrature projection of a nodal field onto the basis."""
    M = basis.manifold
    v = np.asarray(v, dtype=float)
    if v.shape != M.shape:
        raise ValueError(f"nodal field shape {v.shape} does not match grid {M.shape}")
    w = M.grid.weights
    coeffs = np.tensordot(basis.values, w * v, axes=(tuple(range(1, v.ndim + 1)), tuple(range(v.ndim))))
    return SpectralField(basis, coeffs)


def sobolev_norm(f: SpectralField, s: int) -> float:
    """Spectral Sobolev norm with weight max(|lambda_k|, 1)^s.

    The zero mode carries unit weight at every order, so constants keep
    the same norm in H^{-1}, L^2, and H^1.
    """
    if s not in SOBOLEV_ORDERS:
        raise ValueError(f"order must be one of {SOBOLEV_ORDERS}, got {s}")
    w = np.maximum(np.abs(f.basis.lams), 1.0) ** s
    return float(math.sqrt(np.sum(w * f.coeffs**2)))


def truncate(v, bound: float) -> np.ndarray:
    """Pointwise clamp to [-bound, bound] on nodal values.

    Accepts a nodal array or a SpectralField (which is synthesized
    first).  Always returns a nodal array; clamping leaves the spectral
    representation, so no coefficient-space result is offered.
    """
    if bound <= 0:
        raise ValueError("truncation bound must be positive")
    if isinstance(v, SpectralField):
        v = v.values()
    return np.clip(v, -bound, bound)
