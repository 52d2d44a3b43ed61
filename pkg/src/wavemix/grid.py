"""Periodic grids standing in for R^n, fields on them, and the transforms.

Array layout follows the FFT ordering: index ``i`` along an axis sits at
``x = h * i`` for ``i < N/2`` and at ``x = h * (i - N)`` otherwise, so the
origin is node ``(0, ..., 0)`` and the wavevector of index ``i`` is
``2*pi*fftfreq(N, h)[i]``.

Transform normalization::

    forward:  F(k) = h^n  * sum_x f(x) exp(-i k.x)
    inverse:  f(x) = L^-n * sum_k F(k) exp(+i k.x)

so spectral sums divided by ``L^n`` are Riemann sums of ``(2 pi)^-n dk``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridError",
    "GridSpec",
    "SpectralField",
    "StateVector",
    "TestFunction",
    "forward_transform",
    "inverse_transform",
    "gradient",
    "inner_product",
    "local_energy_seminorm",
    "weighted_norm",
    "mollifier",
    "mollified_bump",
    "polynomial_bump",
    "rfft",
    "irfft",
    "energy_integrand",
    "TrigInterpolant",
]

# scipy.fft worker count; --threads parallelizes ensemble members instead
FFT_WORKERS = 1


class GridError(ValueError):
    """Raised for inconsistent grids or out-of-range geometric arguments."""


@dataclass(frozen=True)
class GridSpec:
    """Periodic torus ``[-L/2, L/2)^n`` sampled with ``N`` points per axis."""

    n: int = 3
    N: int = 64
    L: float = 64.0

    def __post_init__(self):
        if self.n < 3 or self.n % 2 == 0:
            raise GridError(f"dimension n must be odd and at least 3, got {self.n}")
        if self.N < 2 or self.N % 2:
            raise GridError(f"points per axis N must be even, got {self.N}")
        if not self.L > 0:
            raise GridError(f"period L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def volume(self) -> float:
        return self.L**self.n

    @property
    def dk(self) -> float:
        """Spacing of the wavevector lattice, ``2 pi / L``."""
        return 2.0 * np.pi / self.L

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, d=1.0 / self.N) * self.h

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    @cached_property
    def axis_wavenumbers_half(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.rfftfreq(self.N, d=self.h)

    def _open(self, v: np.ndarray, axis: int, last: np.ndarray | None = None) -> np.ndarray:
        if axis == self.n - 1 and last is not None:
            v = last
        shape = [1] * self.n
        shape[axis] = v.size
        return v.reshape(shape)

    def coords(self) -> list[np.ndarray]:
        """Open (broadcastable) coordinate arrays, one per axis."""
        return [self._open(self.axis_coords, a) for a in range(self.n)]

    def wavevectors(self, half: bool = False) -> list[np.ndarray]:
        """Open wavevector component arrays; ``half`` gives the rfft layout."""
        last = self.axis_wavenumbers_half if half else None
        return [self._open(self.axis_wavenumbers, a, last) for a in range(self.n)]

    def deriv_wavevectors(self, half: bool = False) -> list[np.ndarray]:
        """Wavevector components with the Nyquist entry zeroed (odd symbols)."""
        kx = self.axis_wavenumbers.copy()
        kx[self.N // 2] = 0.0
        kh = self.axis_wavenumbers_half.copy()
        kh[-1] = 0.0
        return [self._open(kx, a, kh if half else None) for a in range(self.n)]

    def kabs(self, half: bool = False) -> np.ndarray:
        """Continuum modulus ``|k|`` on the (full or half) spectral grid."""
        return np.sqrt(sum(k * k for k in self.wavevectors(half)))

    def deriv_k2(self) -> np.ndarray:
        """``|k|^2`` of the spectral gradient (Nyquist entries dropped)."""
        return sum(k * k for k in self.deriv_wavevectors())

    def displacement(self, center=None) -> list[np.ndarray]:
        """Torus-minimal displacement ``x - center`` per axis (open arrays)."""
        c = np.zeros(self.n) if center is None else np.asarray(center, float)
        out = []
        for a, x in enumerate(self.coords()):
            d = x - c[a]
            out.append(d - self.L * np.round(d / self.L))
        return out

    def radius(self, center=None) -> np.ndarray:
        """Torus-minimal distance of every node to ``center`` (default origin)."""
        return np.sqrt(sum(d * d for d in self.displacement(center)))

    def horizon(self, r_test: float, r_data: float = 0.0) -> float:
        """Latest time before a wave from ``B_r_test`` can wrap onto ``B_r_data``."""
        return self.L / 2.0 - r_test - r_data

    def check_same(self, other: "GridSpec") -> None:
        if self != other:
            raise GridError(f"grid mismatch: {self} vs {other}")


@dataclass
class SpectralField:
    grid: GridSpec
    coefficients: np.ndarray

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        """Check ``F(-k) = conj(F(k))``, the signature of a real field."""
        c = self.coefficients
        flipped = np.conj(c)
        for ax in range(c.ndim):
            flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
        scale = max(np.abs(c).max(), 1e-300)
        return bool(np.abs(c - flipped).max() <= rtol * scale)


@dataclass
class StateVector:
    """Pair ``Y = (u, v)`` of real fields on one grid."""

    grid: GridSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.grid.shape or self.v.shape != self.grid.shape:
            raise GridError(
                f"field shapes {self.u.shape}, {self.v.shape} do not match grid {self.grid.shape}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "StateVector":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    def swap(self) -> "StateVector":
        return StateVector(self.grid, self.v, self.u)

    def __add__(self, other: "StateVector") -> "StateVector":
        self.grid.check_same(other.grid)
        return StateVector(self.grid, self.u + other.u, self.v + other.v)

    def __sub__(self, other: "StateVector") -> "StateVector":
        self.grid.check_same(other.grid)
        return StateVector(self.grid, self.u - other.u, self.v - other.v)

    def __mul__(self, c: float) -> "StateVector":
        return StateVector(self.grid, c * self.u, c * self.v)

    __rmul__ = __mul__

    def masked(self, mask: np.ndarray) -> "StateVector":
        return StateVector(self.grid, self.u * mask, self.v * mask)


@dataclass
class TestFunction:
    """Test function ``Psi = (psi0, psi1)`` declared to vanish outside ``B_r``.

    ``center`` is where the support ball sits; ``support_radius`` is ``r``.
    """

    __test__ = False  # keep pytest from collecting this class

    grid: GridSpec
    psi0: np.ndarray
    psi1: np.ndarray
    support_radius: float
    center: tuple = field(default=None)

    def __post_init__(self):
        self.psi0 = np.asarray(self.psi0, dtype=float)
        self.psi1 = np.asarray(self.psi1, dtype=float)
        if self.center is None:
            self.center = (0.0,) * self.grid.n
        if not 0 < self.support_radius < self.grid.L / 2:
            raise GridError(f"support radius {self.support_radius} must lie in (0, L/2)")
        if self.psi0.shape != self.grid.shape or self.psi1.shape != self.grid.shape:
            raise GridError("test function components do not match the grid")

    def as_state(self) -> StateVector:
        return StateVector(self.grid, self.psi0, self.psi1)

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(self.grid, c * self.psi0, c * self.psi1, self.support_radius, self.center)

    def tail_fraction(self) -> float:
        """Fraction of L2 mass lying outside the declared support ball."""
        out = self.grid.radius(self.center) > self.support_radius
        m = self.psi0**2 + self.psi1**2
        total = m.sum()
        return float(m[out].sum() / total) if total > 0 else 0.0


def forward_transform(f: np.ndarray, grid: GridSpec) -> SpectralField:
    f = np.asarray(f)
    if f.shape != grid.shape:
        raise GridError(f"field shape {f.shape} does not match grid {grid.shape}")
    return SpectralField(grid, sfft.fftn(f, workers=FFT_WORKERS) * grid.cell_volume)


def inverse_transform(F: SpectralField, real: bool = True) -> np.ndarray:
    grid = F.grid
    f = sfft.ifftn(F.coefficients, workers=FFT_WORKERS) / grid.cell_volume
    return f.real if real else f


def rfft(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Half-spectrum forward transform (same normalization)."""
    return sfft.rfftn(f, workers=FFT_WORKERS) * grid.cell_volume


def irfft(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    return sfft.irfftn(F, s=grid.shape, workers=FFT_WORKERS) / grid.cell_volume


def gradient(u: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    """Spectral gradient; the Nyquist row is dropped from each derivative."""
    U = rfft(u, grid)
    return [irfft(1j * k * U, grid) for k in grid.deriv_wavevectors(half=True)]


def inner_product(Y: StateVector, Psi: TestFunction | StateVector) -> float:
    """``<Y, Psi> = <u, psi0> + <v, psi1>`` with the ``h^n`` quadrature weight."""
    P = Psi.as_state() if isinstance(Psi, TestFunction) else Psi
    Y.grid.check_same(P.grid)
    s = np.vdot(Y.u.ravel(), P.u.ravel()) + np.vdot(Y.v.ravel(), P.v.ravel())
    return float(s) * Y.grid.cell_volume


def energy_integrand(Y: StateVector) -> np.ndarray:
    """Pointwise ``|v|^2 + |grad u|^2 + |u|^2``."""
    g = gradient(Y.u, Y.grid)
    return Y.v**2 + sum(gi * gi for gi in g) + Y.u**2


def local_energy_seminorm(Y: StateVector, R: float, center=None) -> float:
    """Squared local energy seminorm over the ball ``|x| < R``.

    Returns the integral itself (the squared seminorm), which is what the
    energy-density identities compare against.
    """
    if not 0 < R < Y.grid.L / 2:
        raise GridError(f"radius R={R} must lie in (0, L/2)")
    mask = Y.grid.radius(center) < R
    return float(energy_integrand(Y)[mask].sum() * Y.grid.cell_volume)


def weighted_norm(Y: StateVector, delta: float) -> float:
    """Norm of the exponentially weighted energy space with rate ``delta``."""
    if not delta > 0:
        raise GridError(f"weight rate delta must be positive, got {delta}")
    w = np.exp(-2.0 * delta * Y.grid.radius())
    return float(np.sqrt((w * energy_integrand(Y)).sum() * Y.grid.cell_volume))


def mollifier(r: np.ndarray, R: float) -> np.ndarray:
    """``exp(1 - 1/(1 - (r/R)^2))`` inside ``r < R``, zero outside; peak 1."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    m = r < R
    s = (r[m] / R) ** 2
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s))
    return out


def mollified_bump(grid: GridSpec, radius: float, center=None, weights=(1.0, 1.0), pad_cells: int = 0) -> TestFunction:
    """Smooth compactly supported test function with component weights.

    The declared support radius is ``radius + pad_cells * h``.
    """
    b = mollifier(grid.radius(center), radius)
    c = tuple(np.zeros(grid.n)) if center is None else tuple(center)
    return TestFunction(grid, weights[0] * b, weights[1] * b, radius + pad_cells * grid.h, c)


def polynomial_bump(grid: GridSpec, radius: float, power: int = 10, center=None, weights=(1.0, 1.0), pad_cells: int = 0) -> TestFunction:
    """``(1 - |x|^2 / radius^2)^power`` inside the ball: finite smoothness, narrow spectrum."""
    b = np.clip(1.0 - (grid.radius(center) / radius) ** 2, 0.0, None) ** power
    c = tuple(np.zeros(grid.n)) if center is None else tuple(center)
    return TestFunction(grid, weights[0] * b, weights[1] * b, radius + pad_cells * grid.h, c)


class TrigInterpolant:
    """Evaluate the trigonometric interpolant of a grid field anywhere.

    Only modes whose coefficient exceeds ``tol`` times the largest one are
    kept, so band-limited fields evaluate cheaply off the grid.
    """

    def __init__(self, values: np.ndarray, grid: GridSpec, tol: float = 1e-13):
        F = forward_transform(values, grid).coefficients
        keep = np.abs(F) > tol * np.abs(F).max() if F.any() else np.zeros(F.shape, bool)
        idx = np.nonzero(keep)
        self.grid = grid
        self.k = np.stack([grid.axis_wavenumbers[i] for i in idx], axis=1)
        self.coef = F[idx] / grid.volume

    @property
    def n_modes(self) -> int:
        return self.coef.size

    def __call__(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, float))
        out = np.exp(1j * p @ self.k.T) @ self.coef
        return out.real

    def gradient(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, float))
        e = np.exp(1j * p @ self.k.T) * self.coef
        return (1j * e @ self.k).real
