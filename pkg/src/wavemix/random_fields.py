"""Random initial data with zero mean, stationarity and finite-range mixing.

Every model here is a linear filter applied to i.i.d. per-node noise::

    Y_hat^i(k) = sum_c S_ic(k) xi_hat_c(k),    xi_c = h^(-n/2) * noise_c

where ``noise_c`` has zero mean and unit variance per node, so ``xi_c`` is
discrete white noise of unit spectral density and the spectral covariance of
``Y`` is ``S(k) S(k)^*``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    GridError,
    GridSpec,
    SpectralField,
    StateVector,
    forward_transform,
    inverse_transform,
    irfft,
    mollifier,
    rfft,
)

log = logging.getLogger(__name__)

NOISE_LAWS = ("gaussian", "rademacher", "uniform")

__all__ = [
    "NOISE_LAWS",
    "member_rng",
    "white_noise",
    "MixingProfile",
    "MovingAverageModel",
    "GaussianSpectralModel",
    "psd_sqrt",
    "sample_gaussian",
    "sample_moving_average",
    "exact_covariance",
    "energy_density",
    "verify_mixing_bound",
    "MixingReport",
]


def member_rng(master_seed: int, member: int, component: int = 0) -> np.random.Generator:
    """Independent stream for one (ensemble member, noise component)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(member), int(component)))
    return np.random.Generator(np.random.PCG64(ss))


def white_noise(rng: np.random.Generator, law: str, size: int) -> np.ndarray:
    """Zero-mean, unit-variance i.i.d. values."""
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "rademacher":
        bits = np.unpackbits(np.frombuffer(rng.bytes((size + 7) // 8), dtype=np.uint8))[:size]
        return bits.astype(np.float64) * 2.0 - 1.0
    if law == "uniform":
        s = np.sqrt(3.0)
        return rng.uniform(-s, s, size)
    raise ValueError(f"unknown noise law {law!r}; expected one of {NOISE_LAWS}")


@dataclass(frozen=True)
class MixingProfile:
    """Indicator-type mixing coefficient: 1 up to the dependence range, 0 after."""

    dependence_range: float
    n: int = 3

    def phi(self, r):
        return np.where(np.asarray(r) <= self.dependence_range, 1.0, 0.0)

    @property
    def phibar(self) -> float:
        """``int_0^inf r^(n-2) phi^(1/2)(r) dr``."""
        return self.dependence_range ** (self.n - 1) / (self.n - 1)


def psd_sqrt(q: np.ndarray) -> np.ndarray:
    """Hermitian square root of a field of 2x2 PSD matrices, shape (2, 2, ...)."""
    a, b, c, d = q[0, 0], q[0, 1], q[1, 0], q[1, 1]
    det = (a * d - b * c).real
    s = np.sqrt(np.clip(det, 0.0, None))
    tau = np.sqrt(np.clip((a + d).real + 2 * s, 0.0, None))
    safe = np.where(tau > 0, tau, 1.0)
    out = np.empty_like(q, dtype=complex)
    out[0, 0] = np.where(tau > 0, (a + s) / safe, 0)
    out[1, 1] = np.where(tau > 0, (d + s) / safe, 0)
    out[0, 1] = np.where(tau > 0, b / safe, 0)
    out[1, 0] = np.where(tau > 0, c / safe, 0)
    return out


class _LinearNoiseModel:
    """Shared sampling machinery; subclasses provide ``filter_symbol``."""

    grid: GridSpec
    noise: str

    def filter_symbol(self) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def spectral_density(self) -> np.ndarray:
        S = self.filter_symbol()
        return np.einsum("ic...,jc...->ij...", S, np.conj(S))

    @property
    def active_components(self) -> tuple[int, ...]:
        S = self.filter_symbol()
        return tuple(c for c in range(2) if np.any(np.abs(S[:, c]) > 0))

    def noise_fields(self, master_seed: int, member: int = 0) -> np.ndarray:
        g = self.grid
        out = np.zeros((2,) + g.shape)
        for c in self.active_components:
            out[c] = white_noise(member_rng(master_seed, member, c), self.noise, g.size).reshape(g.shape)
        return out

    def half_symbol(self) -> np.ndarray:
        """Filter symbol on the half spectrum used by the real transforms."""
        return self.filter_symbol()[..., : self.grid.N // 2 + 1]

    def apply(self, noise: np.ndarray) -> StateVector:
        """Filter per-node noise into a field pair."""
        g = self.grid
        S = self.half_symbol()
        xi = [rfft(noise[c], g) * g.h ** (-g.n / 2) if c in self.active_components else 0.0 for c in range(2)]
        comps = [irfft(S[i, 0] * xi[0] + S[i, 1] * xi[1], g) for i in range(2)]
        return StateVector(g, comps[0], comps[1])

    def sample(self, seed: int, member: int = 0) -> StateVector:
        return self.apply(self.noise_fields(seed, member))

    def noise_weights(self, w: StateVector) -> np.ndarray:
        """Per-node weights ``B`` with ``<Y, w> = sum_c sum_x noise_c(x) B_c(x)``."""
        g = self.grid
        g.check_same(w.grid)
        S = self.half_symbol()
        W = [rfft(w.u, g), rfft(w.v, g)]
        out = np.empty((2,) + g.shape)
        for c in range(2):
            out[c] = irfft(np.conj(S[0, c]) * W[0] + np.conj(S[1, c]) * W[1], g) * g.h ** (g.n / 2)
        return out


@dataclass
class MovingAverageModel(_LinearNoiseModel):
    """``u0 = K_u * xi``, ``v0 = K_v * eta`` with i.i.d. per-node noise.

    Kernels are grid arrays centred at the origin node and vanish outside
    radius ``a``. ``cross_correlation`` couples the two noise fields:
    ``eta = c xi + sqrt(1 - c^2) zeta``.
    """

    grid: GridSpec
    kernel_u: np.ndarray
    kernel_v: np.ndarray
    a: float
    noise: str = "rademacher"
    cross_correlation: float = 0.0
    _symbol: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        g = self.grid
        if self.noise not in NOISE_LAWS:
            raise ValueError(f"unknown noise law {self.noise!r}")
        if not self.a < g.L / 4:
            raise GridError(f"kernel radius a={self.a} must be below L/4={g.L / 4}")
        if not -1.0 <= self.cross_correlation <= 1.0:
            raise ValueError("cross_correlation must lie in [-1, 1]")
        for K in (self.kernel_u, self.kernel_v):
            if K.shape != g.shape:
                raise GridError("kernel shape does not match grid")
            outside = g.radius() > self.a + 1e-12
            if np.any(K[outside] != 0):
                raise GridError(f"kernel does not vanish outside radius a={self.a}")

    @classmethod
    def from_profile(
        cls,
        grid: GridSpec,
        a: float,
        profile: str = "bump",
        weights=(1.0, 1.0),
        noise: str = "rademacher",
        cross_correlation: float = 0.0,
    ) -> "MovingAverageModel":
        """Radial kernel family: ``bump`` (smooth), ``box`` (ball indicator) or ``delta``."""
        r = grid.radius()
        if profile == "bump":
            base = mollifier(r, a)
        elif profile == "box":
            base = (r <= a).astype(float)
        elif profile == "delta":
            base = np.zeros(grid.shape)
            base[(0,) * grid.n] = 1.0 / grid.cell_volume
            a = 0.0
        else:
            raise ValueError(f"unknown kernel profile {profile!r}")
        return cls(grid, weights[0] * base, weights[1] * base, a, noise, cross_correlation)

    @property
    def dependence_range(self) -> float:
        return 2.0 * self.a

    @property
    def mixing(self) -> MixingProfile:
        return MixingProfile(self.dependence_range, self.grid.n)

    def filter_symbol(self) -> np.ndarray:
        if self._symbol is None:
            g = self.grid
            Ku = forward_transform(self.kernel_u, g).coefficients
            Kv = forward_transform(self.kernel_v, g).coefficients
            c = self.cross_correlation
            S = np.zeros((2, 2) + g.shape, dtype=complex)
            S[0, 0] = Ku
            S[1, 0] = c * Kv
            S[1, 1] = np.sqrt(1.0 - c * c) * Kv
            self._symbol = S
        return self._symbol

    def bound(self) -> float:
        """Almost-sure bound on ``|u0| + |v0|`` for bounded noise laws."""
        if self.noise == "gaussian":
            return float("inf")
        m = 1.0 if self.noise == "rademacher" else np.sqrt(3.0)
        s = self.grid.h ** (self.grid.n / 2)
        c = abs(self.cross_correlation)
        kv = np.abs(self.kernel_v).sum() * (c + np.sqrt(1 - c * c))
        return float(m * s * (np.abs(self.kernel_u).sum() + kv))


@dataclass
class GaussianSpectralModel(_LinearNoiseModel):
    """Gaussian field with prescribed 2x2 spectral density ``q_hat(k)``."""

    grid: GridSpec
    density: np.ndarray
    noise: str = "gaussian"
    dependence_range: float | None = None
    _symbol: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        q = np.asarray(self.density)
        if q.shape != (2, 2) + self.grid.shape:
            raise GridError(f"density shape {q.shape} does not match grid")
        scale = max(np.abs(q).max(), 1e-300)
        tol = 1e-12 * scale
        if np.abs(q[0, 1] - np.conj(q[1, 0])).max() > tol:
            raise ValueError("spectral density is not Hermitian")
        a, d = q[0, 0].real, q[1, 1].real
        det = a * d - np.abs(q[0, 1]) ** 2
        bad = (a < -tol) | (d < -tol) | (det < -tol * scale)
        if bad.any():
            idx = tuple(int(i[0]) for i in np.nonzero(bad))
            raise ValueError(f"spectral density is indefinite at mode index {idx}")
        self.density = q.astype(complex)

    def filter_symbol(self) -> np.ndarray:
        if self._symbol is None:
            self._symbol = psd_sqrt(self.density)
        return self._symbol

    def spectral_density(self) -> np.ndarray:
        return self.density

    @property
    def mixing(self) -> MixingProfile | None:
        if self.dependence_range is None:
            return None
        return MixingProfile(self.dependence_range, self.grid.n)


def sample_gaussian(model: GaussianSpectralModel, seed: int) -> StateVector:
    return model.sample(seed)


def sample_moving_average(model: MovingAverageModel, seed: int) -> StateVector:
    return model.sample(seed)


def exact_covariance(model: MovingAverageModel):
    """Spectral covariance ``S S^*`` of a moving-average model."""
    from .covariance import SpectralCovariance

    return SpectralCovariance(model.grid, model.spectral_density())


def energy_density(model) -> float:
    """Mean energy density ``e0 = q11(0) - Lap q00(0) + q00(0)`` from the spectrum."""
    q = _density_of(model)
    g = model.grid
    # the gradient symbol, so e0 is the exact mean of the nodal energy integrand
    k2 = g.deriv_k2()
    return float((q[1, 1].real + (k2 + 1.0) * q[0, 0].real).sum() / g.volume)


def _density_of(model) -> np.ndarray:
    if hasattr(model, "spectral_density"):
        return model.spectral_density()
    return model.q


@dataclass
class MixingReport:
    passed: bool
    e0: float
    phibar: float
    max_ratio: float
    violations: list = field(default_factory=list)


def _multi_indices(n: int, order: int):
    for m in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(n), m):
            yield combo


def _central_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2.0 * h)


def verify_mixing_bound(model, atol: float = 1e-9, max_violations: int = 20) -> MixingReport:
    """Scan ``|D^alpha q^ij(z)| <= 2 e0 phi^(1/2)(|z|)`` over every grid offset.

    ``alpha`` runs over all multi-indices with ``|alpha| <= 2 - i - j``. ``D`` is
    the central difference, which keeps compact support (each factor reaches one
    cell, so the profile is read at ``|z| - |alpha| h``) and is dominated by the
    spectral gradient, so the bound follows from Cauchy-Schwarz against ``e0``.
    ``atol`` is relative to ``e0`` and only absorbs round-off.
    """
    mix = model.mixing
    if mix is None:
        raise ValueError("model carries no mixing profile")
    g = model.grid
    q = _density_of(model)
    e0 = energy_density(model)
    r = g.radius()
    violations = []
    max_ratio = 0.0
    for i, j in itertools.product(range(2), range(2)):
        base = inverse_transform(SpectralField(g, q[i, j]))
        for alpha in _multi_indices(g.n, 2 - i - j):
            d = base
            for ax in alpha:
                d = _central_diff(d, ax, g.h)
            d = np.abs(d)
            reach = len(alpha) * g.h
            bound = 2.0 * e0 * np.sqrt(mix.phi(np.maximum(r - reach, 0.0))) + atol * e0
            max_ratio = max(max_ratio, float((d / bound).max()))
            bad = np.argwhere(d > bound)
            for idx in bad[: max(0, max_violations - len(violations))]:
                z = tuple(float(g.axis_coords[k]) for k in idx)
                violations.append({"z": z, "alpha": alpha, "ij": (i, j), "value": float(d[tuple(idx)])})
    if violations:
        log.warning("mixing bound violated at %d offsets", len(violations))
    return MixingReport(not violations, e0, mix.phibar, max_ratio, violations)
