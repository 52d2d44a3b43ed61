"""Exact free-space wave propagation on the periodic grid.

Each Fourier mode evolves by the 2x2 symbol

    G_t(k) = [[cos|k|t, sin(|k|t)/|k|], [-|k| sin|k|t, cos|k|t]]

acting on ``(u_hat, v_hat)``; the adjoint group acts by its transpose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import GridError, GridSpec, StateVector, TestFunction, irfft, rfft

__all__ = [
    "ConeReport",
    "symbol",
    "symbol_entries",
    "evolve",
    "adjoint_evolve",
    "kirchhoff_3d",
    "sphere_quadrature",
    "huygens_check",
    "sup_decay_profile",
    "loglog_slope",
]


def symbol_entries(kabs: np.ndarray, t: float, dk: float = 1.0):
    """Return ``(cos|k|t, sin(|k|t)/|k|, -|k| sin|k|t)`` elementwise.

    The removable singularity at ``k = 0`` is resolved by an explicit branch
    below ``1e-12 * dk``.
    """
    kabs = np.asarray(kabs, dtype=float)
    small = kabs < 1e-12 * dk
    kt = kabs * t
    c = np.cos(kt)
    s = np.sin(kt)
    safe = np.where(small, 1.0, kabs)
    s_over_k = np.where(small, t, s / safe)
    mks = np.where(small, 0.0, -kabs * s)
    return c, s_over_k, mks


def symbol(k, t: float) -> np.ndarray:
    """2x2 propagator symbol for a single wavevector (or its modulus)."""
    kabs = float(np.linalg.norm(np.atleast_1d(k)))
    c, sk, mks = symbol_entries(np.array(kabs), t)
    return np.array([[float(c), float(sk)], [float(mks), float(c)]])


def _half_symbol(grid: GridSpec, t: float):
    return symbol_entries(grid.kabs(half=True), t, grid.dk)


def evolve(Y0: StateVector, t: float) -> StateVector:
    """Free evolution ``U_0(t) Y0``."""
    grid = Y0.grid
    c, sk, mks = _half_symbol(grid, t)
    U, V = rfft(Y0.u, grid), rfft(Y0.v, grid)
    return StateVector(grid, irfft(c * U + sk * V, grid), irfft(mks * U + c * V, grid))


def adjoint_evolve(Psi: TestFunction | StateVector, t: float) -> StateVector:
    """Adjoint group ``U_0'(t) Psi`` (transposed symbol per mode)."""
    P = Psi.as_state() if isinstance(Psi, TestFunction) else Psi
    grid = P.grid
    c, sk, mks = _half_symbol(grid, t)
    A, B = rfft(P.u, grid), rfft(P.v, grid)
    return StateVector(grid, irfft(c * A + mks * B, grid), irfft(sk * A + c * B, grid))


def sphere_quadrature(order: int):
    """Unit-sphere nodes and weights: Gauss-Legendre in cos(theta), uniform azimuth.

    Weights sum to ``4*pi``.
    """
    mu, wmu = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    st = np.sqrt(1.0 - mu**2)
    pts = np.stack(
        [
            (st[:, None] * np.cos(phi)[None, :]).ravel(),
            (st[:, None] * np.sin(phi)[None, :]).ravel(),
            np.repeat(mu, nphi),
        ],
        axis=1,
    )
    w = np.repeat(wmu, nphi) * (2.0 * np.pi / nphi)
    return pts, w


def kirchhoff_3d(
    v0: Callable[[np.ndarray], np.ndarray],
    x,
    t: float,
    quad_order: int = 24,
    u0: Callable[[np.ndarray], np.ndarray] | None = None,
    u0_grad: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Solution of the 3-D wave equation at ``(x, t)`` from spherical means.

    ``v0`` (and ``u0``) map an array of points ``(P, 3)`` to values ``(P,)``.
    The time derivative of the ``u0`` mean uses ``u0_grad`` when supplied,
    otherwise a central difference in ``t``.
    """
    if not t > 0:
        raise ValueError(f"Kirchhoff evaluation needs t > 0, got {t}")
    if quad_order < 4:
        raise ValueError(f"quad_order must be at least 4, got {quad_order}")
    x = np.asarray(x, float).reshape(3)
    pts, w = sphere_quadrature(quad_order)

    def mean(f, r):
        return float(w @ f(x + r * pts)) / (4.0 * np.pi)

    u = t * mean(v0, t)
    if u0 is not None:
        if u0_grad is not None:
            g = u0_grad(x + t * pts)
            u += mean(u0, t) + t * float(w @ np.einsum("pi,pi->p", g, pts)) / (4.0 * np.pi)
        else:
            eps = 1e-5 * max(t, 1.0)
            u += ((t + eps) * mean(u0, t + eps) - (t - eps) * mean(u0, t - eps)) / (2 * eps)
    return u


@dataclass
class ConeReport:
    t: float
    r_bar: float
    leakage: float


def huygens_check(Psi: TestFunction, t: float, r_bar: float | None = None) -> ConeReport:
    """Mass fraction of ``U_0'(t) Psi`` outside the slab ``| |x| - t | <= r_bar``."""
    grid = Psi.grid
    r_bar = Psi.support_radius if r_bar is None else r_bar
    horizon = grid.horizon(Psi.support_radius)
    if t > horizon:
        raise GridError(f"t={t} exceeds the wrap horizon {horizon:.4g}")
    Phi = adjoint_evolve(Psi, t)
    m = Phi.u**2 + Phi.v**2
    outside = np.abs(grid.radius(Psi.center) - t) > r_bar
    total = m.sum()
    leak = float(m[outside].sum() / total) if total > 0 else 0.0
    return ConeReport(t, r_bar, leak)


def sup_decay_profile(Psi: TestFunction, times: Sequence[float]) -> list[tuple[float, float, float]]:
    """``(t, sup|Phi^0|, sup|Phi^1|)`` for ``Phi = U_0'(t) Psi``."""
    if len(times) == 0:
        raise ValueError("times must be non-empty")
    horizon = Psi.grid.horizon(Psi.support_radius)
    out = []
    for t in times:
        if t > horizon:
            raise GridError(f"t={t} exceeds the wrap horizon {horizon:.4g}")
        Phi = adjoint_evolve(Psi, t)
        out.append((float(t), float(np.abs(Phi.u).max()), float(np.abs(Phi.v).max())))
    return out


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
