"""Spectral covariance matrices of random wave fields and their time evolution.

Conventions: ``q^ij(z) = E Y^i(x + z) Y^j(x)`` and ``q_hat`` is its forward
transform, so ``E Y_hat^i(k) conj(Y_hat^j(k)) = L^n q_hat^ij(k)``. Evolution is
the congruence ``q_hat_t = G_t q_hat G_t^T`` with the real propagator symbol.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import GridError, GridSpec, SpectralField, StateVector, TestFunction, forward_transform, inverse_transform
from .propagator import symbol_entries

log = logging.getLogger(__name__)

__all__ = [
    "SpectralCovariance",
    "LimitCovariance",
    "IsotropicDensity",
    "evolve_covariance",
    "closed_form_q00",
    "closed_form_q11",
    "limit_covariance",
    "time_average_covariance",
    "energy_density_t",
    "energy_bound_report",
    "position_covariance",
    "position_covariance_field",
    "radial_position_covariance",
    "quadratic_form",
    "quadratic_form_bruteforce",
    "ft_integrability_report",
    "integrability_refinement",
    "convergence_profile",
    "write_covariance_csv",
]


@dataclass
class SpectralCovariance:
    grid: GridSpec
    q: np.ndarray  # shape (2, 2, *grid.shape), complex

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=complex)
        if self.q.shape != (2, 2) + self.grid.shape:
            raise GridError(f"covariance shape {self.q.shape} does not match grid {self.grid.shape}")

    def __getitem__(self, ij) -> np.ndarray:
        return self.q[ij]

    def reflected(self) -> np.ndarray:
        """``q_hat(-k)`` on the FFT layout."""
        return np.roll(np.flip(self.q, axis=tuple(range(2, 2 + self.grid.n))), 1, axis=tuple(range(2, 2 + self.grid.n)))

    def check(self, rtol: float = 1e-10) -> None:
        """Raise if the matrix field is not that of a real stationary field."""
        scale = max(np.abs(self.q).max(), 1e-300)
        if np.abs(self.q - np.conj(np.swapaxes(self.q, 0, 1))).max() > rtol * scale:
            raise ValueError("covariance is not Hermitian per mode")
        if np.abs(self.reflected() - np.swapaxes(self.q, 0, 1)).max() > rtol * scale:
            raise ValueError("covariance violates q(-k) = q^T(k)")
        if min(self.q[0, 0].real.min(), self.q[1, 1].real.min()) < -rtol * scale:
            raise ValueError("negative diagonal entry")

    def min_eigenvalue(self) -> float:
        a, d = self.q[0, 0].real, self.q[1, 1].real
        b = np.abs(self.q[0, 1])
        return float((0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)).min())


class LimitCovariance(SpectralCovariance):
    """Covariance of the equilibrium (limit) Gaussian measure."""

    def structure_residual(self, support: np.ndarray | None = None) -> tuple[float, float]:
        """Residuals of the antisymmetric cross part and of ``q11 = |k|^2 q00``."""
        k2 = self.grid.kabs() ** 2
        anti = float(np.abs(self.q[0, 1] + self.q[1, 0]).max())
        diff = np.abs(self.q[1, 1] - k2 * self.q[0, 0])
        if support is not None:
            diff = diff[support]
        return anti, float(diff.max()) if diff.size else 0.0


@dataclass
class IsotropicDensity:
    """Real radial spectral density ``q_hat^ij(k) = f_ij(|k|)`` with ``f_10 = f_01``.

    ``kmax`` bounds the support of all three profiles; ``n`` is fixed to 3 for
    the radial quadrature path.
    """

    f00: Callable[[np.ndarray], np.ndarray]
    f11: Callable[[np.ndarray], np.ndarray]
    f01: Callable[[np.ndarray], np.ndarray] | None = None
    kmax: float = np.inf

    def entry(self, i: int, j: int, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if i == j:
            return (self.f00 if i == 0 else self.f11)(r)
        return self.f01(r) if self.f01 is not None else np.zeros_like(r)

    def on_grid(self, grid: GridSpec) -> SpectralCovariance:
        r = grid.kabs()
        q = np.zeros((2, 2) + grid.shape, dtype=complex)
        for i in range(2):
            for j in range(2):
                q[i, j] = self.entry(i, j, r)
        return SpectralCovariance(grid, q)

    def evolved_entry(self, i: int, j: int, r: np.ndarray, t: float) -> np.ndarray:
        G = _symbol_stack(r, t)
        Q = np.array([[self.entry(a, b, r) for b in range(2)] for a in range(2)])
        return np.einsum("a...,ab...,b...->...", G[i], Q, G[j])

    def limit_entry(self, i: int, j: int, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if i != j:
            return np.zeros_like(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            if i == 0:
                return 0.5 * (self.f00(r) + np.where(r > 0, self.f11(r) / r**2, 0.0))
            return 0.5 * (self.f11(r) + r**2 * self.f00(r))


def _symbol_stack(kabs: np.ndarray, t: float, dk: float = 1.0) -> np.ndarray:
    c, sk, mks = symbol_entries(np.asarray(kabs, dtype=float), t, dk)
    return np.array([[c, sk], [mks, c]])


def evolve_covariance(q0: SpectralCovariance, t: float) -> SpectralCovariance:
    g = q0.grid
    G = _symbol_stack(g.kabs(), t, g.dk)
    qt = np.einsum("ia...,ab...,jb...->ij...", G, q0.q, G)
    return SpectralCovariance(g, qt)


def closed_form_q00(q0: SpectralCovariance, t: float) -> np.ndarray:
    """Position-position entry written out with double-angle coefficients."""
    k = q0.grid.kabs()
    c2, s2 = np.cos(2 * k * t), np.sin(2 * k * t)
    pos = k > 0
    ks = np.where(pos, k, 1.0)
    a, b, c, d = q0.q[0, 0], q0.q[0, 1], q0.q[1, 0], q0.q[1, 1]
    return np.where(
        pos,
        0.5 * (1 + c2) * a + s2 / (2 * ks) * (b + c) + (1 - c2) / (2 * ks**2) * d,
        a + t * (b + c) + t * t * d,
    )


def closed_form_q11(q0: SpectralCovariance, t: float, q11_sign: int = 1) -> np.ndarray:
    """Velocity-velocity entry; the ``q11`` coefficient is ``(1 + q11_sign cos 2|k|t) / 2``.

    Only ``q11_sign = +1`` is correct: the other sign gives zero at ``t = 0``
    instead of reproducing ``q_hat^11``.
    """
    k = q0.grid.kabs()
    c2, s2 = np.cos(2 * k * t), np.sin(2 * k * t)
    a, b, c, d = q0.q[0, 0], q0.q[0, 1], q0.q[1, 0], q0.q[1, 1]
    return k**2 * 0.5 * (1 - c2) * a - k * 0.5 * s2 * (b + c) + 0.5 * (1 + q11_sign * c2) * d


def _inv_k2(grid: GridSpec) -> np.ndarray:
    k2 = grid.kabs() ** 2
    out = np.zeros_like(k2)
    np.divide(1.0, k2, out=out, where=k2 > 0)
    return out


def limit_covariance(q0: SpectralCovariance) -> LimitCovariance:
    """Equilibrium covariance; the zero mode of ``1/|k|^2`` is set to 0."""
    g = q0.grid
    origin = (1, 1) + (0,) * g.n
    scale = max(np.abs(q0.q).max(), 1e-300)
    if abs(q0.q[origin]) > 1e-12 * scale:
        msg = f"q_hat^11(0) = {q0.q[origin].real:.3e} != 0; zero mode of 1/|k|^2 set to 0"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        log.warning(msg)
    k2 = g.kabs() ** 2
    q = np.empty_like(q0.q)
    q[0, 0] = 0.5 * (q0.q[0, 0] + q0.q[1, 1] * _inv_k2(g))
    q[0, 1] = 0.5 * (q0.q[0, 1] - q0.q[1, 0])
    q[1, 0] = -q[0, 1]
    q[1, 1] = 0.5 * (q0.q[1, 1] + k2 * q0.q[0, 0])
    return LimitCovariance(g, q)


def time_average_covariance(q0: SpectralCovariance, T: float) -> SpectralCovariance:
    """Exact average of ``q_hat_t`` over ``t in [T, 2T]``, mode by mode."""
    if T <= 0:
        raise ValueError("T must be positive")
    g = q0.grid
    k = g.kabs()
    pos = k > 0
    ks = np.where(pos, k, 1.0)
    # averages of cos(2kt) and sin(2kt) over [T, 2T]
    mc = np.where(pos, (np.sin(4 * ks * T) - np.sin(2 * ks * T)) / (2 * ks * T), 1.0)
    ms = np.where(pos, (np.cos(2 * ks * T) - np.cos(4 * ks * T)) / (2 * ks * T), 0.0)
    a, b, c, d = q0.q[0, 0], q0.q[0, 1], q0.q[1, 0], q0.q[1, 1]
    inv = np.where(pos, 1.0 / ks, 0.0)
    # k = 0: G = [[1, t], [0, 1]]; averages of t and t^2 over [T, 2T]
    t1, t2 = 1.5 * T, 7.0 * T * T / 3.0
    q = np.empty_like(q0.q)
    q[0, 0] = np.where(
        pos,
        0.5 * (1 + mc) * a + 0.5 * ms * inv * (b + c) + 0.5 * (1 - mc) * inv**2 * d,
        a + t1 * (b + c) + t2 * d,
    )
    q[1, 1] = np.where(pos, 0.5 * (1 - mc) * k**2 * a - 0.5 * ms * k * (b + c) + 0.5 * (1 + mc) * d, d)
    # q01 = c (-k s) a + c^2 b - s^2 c + (s c / k) d, averaged
    q[0, 1] = np.where(
        pos,
        -0.5 * ms * k * a + 0.5 * (1 + mc) * b - 0.5 * (1 - mc) * c + 0.5 * ms * inv * d,
        b + t1 * d,
    )
    q[1, 0] = np.where(
        pos,
        -0.5 * ms * k * a - 0.5 * (1 - mc) * b + 0.5 * (1 + mc) * c + 0.5 * ms * inv * d,
        c + t1 * d,
    )
    return SpectralCovariance(g, q)


def energy_density_t(qt: SpectralCovariance) -> float:
    g = qt.grid
    k2 = g.deriv_k2()
    return float((qt.q[1, 1].real + (k2 + 1.0) * qt.q[0, 0].real).sum() / g.volume)


@dataclass
class EnergyBoundReport:
    e0: float
    times: list
    ratios: list
    mode_bound_ratio: float
    max_ratio: float = field(init=False)

    def __post_init__(self):
        self.max_ratio = max(self.ratios) if self.ratios else 0.0


def energy_bound_report(q0: SpectralCovariance, times: Sequence[float]) -> EnergyBoundReport:
    """Measured ``e_t / e0`` next to a mode-wise upper bound ``C1``.

    Per mode ``q_t^00 <= 2 q^00 + 2 min(t^2, |k|^-2) q^11`` (Cauchy-Schwarz on
    ``cos u + (sin/|k|) v``); the conserved part is unchanged, which gives
    ``C1 = sup_t sum(bound) / sum(e0 integrand)``. The energy uses the gradient
    symbol, which never exceeds ``|k|``, so the bound still holds.
    """
    g = q0.grid
    k2 = g.kabs() ** 2
    e0 = energy_density_t(q0)
    a, d = q0.q[0, 0].real, q0.q[1, 1].real
    conserved = d + k2 * a
    ratios, bounds = [], []
    for t in times:
        ratios.append(energy_density_t(evolve_covariance(q0, t)) / e0 if e0 > 0 else 0.0)
        cap = np.minimum(t * t, np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), np.inf))
        bounds.append(float((conserved + 2 * a + 2 * cap * d).sum() / g.volume) / e0 if e0 > 0 else 0.0)
    return EnergyBoundReport(e0, list(times), ratios, max(bounds) if bounds else 0.0)


def position_covariance_field(qh: SpectralCovariance) -> np.ndarray:
    """``q^ij(z)`` at every grid offset, shape (2, 2, *grid.shape)."""
    g = qh.grid
    return np.array([[inverse_transform(SpectralField(g, qh.q[i, j])) for j in range(2)] for i in range(2)])


def position_covariance(qh: SpectralCovariance, z) -> np.ndarray:
    """``q^ij(z)`` at an arbitrary offset by direct trigonometric summation."""
    g = qh.grid
    z = np.asarray(z, dtype=float)
    if z.shape != (g.n,):
        raise GridError(f"offset must have {g.n} components")
    phase = np.exp(1j * sum(kz * zz for kz, zz in zip(g.wavevectors(), z)))
    return np.array([[float((qh.q[i, j] * phase).sum().real / g.volume) for j in range(2)] for i in range(2)])


def _gl_panels(a: float, b: float, panels: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return (mid + half * x).ravel(), (half * w).ravel()


def _radial_transform(values: Callable[[np.ndarray], np.ndarray], zs: np.ndarray, kmax: float, freq: float) -> np.ndarray:
    """``(1 / (2 pi^2 |z|)) int_0^kmax r sin(r|z|) f(r) dr`` for each ``|z|`` (n = 3)."""
    zs = np.atleast_1d(np.asarray(zs, dtype=float))
    panels = int(np.ceil(kmax * (freq + zs.max() + 1.0) / np.pi)) + 64
    r, w = _gl_panels(0.0, kmax, panels)
    f = values(r)
    out = np.empty(zs.shape)
    for m, z in enumerate(zs):
        kern = r * r if z == 0 else r * np.sin(r * z) / z
        out[m] = (w * kern * f).sum() / (2 * np.pi**2)
    return out


def radial_position_covariance(density: IsotropicDensity, z, t: float | None = None, limit: bool = False) -> np.ndarray:
    """Continuum ``q^ij(|z|)`` (n = 3) by radial quadrature; independent of the torus.

    ``t`` selects the evolved covariance, ``limit`` the equilibrium one.
    """
    if not np.isfinite(density.kmax):
        raise ValueError("radial path needs a finite kmax")
    zs = np.atleast_1d(np.abs(np.asarray(z, dtype=float)))
    out = np.empty((2, 2) + zs.shape)
    for i in range(2):
        for j in range(2):
            if limit:
                fn = lambda r, i=i, j=j: density.limit_entry(i, j, r)
            elif t is not None:
                fn = lambda r, i=i, j=j: density.evolved_entry(i, j, r, t)
            else:
                fn = lambda r, i=i, j=j: density.entry(i, j, r)
            out[i, j] = _radial_transform(fn, zs, density.kmax, 2.0 * (t or 0.0))
    return out


def quadratic_form(qh: SpectralCovariance, Psi: TestFunction | StateVector) -> float:
    """``E <Y, Psi>^2`` for a field with spectral covariance ``qh``."""
    g = qh.grid
    S = Psi.as_state() if isinstance(Psi, TestFunction) else Psi
    g.check_same(S.grid)
    P = [forward_transform(S.u, g).coefficients, forward_transform(S.v, g).coefficients]
    total = 0.0 + 0.0j
    for i in range(2):
        for j in range(2):
            total += (qh.q[i, j] * np.conj(P[i]) * P[j]).sum()
    total /= g.volume
    scale = sum(float((np.abs(qh.q[i, i]) * np.abs(P[i]) ** 2).sum()) for i in range(2)) / g.volume
    if total.real < -1e-10 * max(scale, 1.0):
        raise ValueError(f"quadratic form is negative ({total.real:.3e}); covariance not positive")
    return float(total.real)


def quadratic_form_bruteforce(qh: SpectralCovariance, Psi: TestFunction | StateVector) -> float:
    """``sum_x sum_y q^ij(x - y) Psi^i(x) Psi^j(y) h^2n`` by explicit double loop (small grids only)."""
    g = qh.grid
    if g.size > 16**3:
        raise GridError("brute-force quadratic form is limited to 16^3 nodes")
    S = Psi.as_state() if isinstance(Psi, TestFunction) else Psi
    qz = position_covariance_field(qh)
    comps = [S.u.ravel(), S.v.ravel()]
    idx = np.array(np.unravel_index(np.arange(g.size), g.shape))
    diff = (idx[:, :, None] - idx[:, None, :]) % g.N
    total = 0.0
    for i in range(2):
        for j in range(2):
            Q = qz[i, j][tuple(diff)]
            total += comps[i] @ Q @ comps[j]
    return float(total * g.cell_volume**2)


@dataclass
class IntegrabilityReport:
    value: float
    per_entry: dict


def ft_integrability_report(qh: SpectralCovariance) -> IntegrabilityReport:
    """Normalized ``sum_k (|k|^(2-i-j) + |k|^-2) |q_hat^ij|`` over nonzero modes."""
    g = qh.grid
    k = g.kabs()
    nz = k > 0
    per = {}
    for i in range(2):
        for j in range(2):
            w = k[nz] ** (2 - i - j) + k[nz] ** -2.0
            per[(i, j)] = float((w * np.abs(qh.q[i, j][nz])).sum() / g.volume)
    return IntegrabilityReport(sum(per.values()), per)


@dataclass
class RefinementStudy:
    grids: list
    values: list
    rel_changes: list
    stable: bool


def integrability_refinement(build: Callable[[GridSpec], SpectralCovariance], grids: Sequence[GridSpec], rtol: float = 0.05) -> RefinementStudy:
    """Evaluate the integrability sum on a sequence of grids; stable if the last change is below ``rtol``."""
    values = [ft_integrability_report(build(g)).value for g in grids]
    changes = [abs(b - a) / max(abs(b), 1e-300) for a, b in zip(values, values[1:])]
    return RefinementStudy(list(grids), values, changes, bool(changes) and changes[-1] < rtol)


def convergence_profile(q0, offsets, times, path: str = "torus", grid: GridSpec | None = None) -> list[dict]:
    """``max_z |q_t^ij(z) - q_inf^ij(z)|`` per time and entry.

    ``path="torus"`` takes a SpectralCovariance; ``path="radial"`` takes an
    IsotropicDensity (n = 3) and is not limited by periodic wrap.
    """
    rows = []
    if path == "torus":
        if not isinstance(q0, SpectralCovariance):
            raise TypeError("torus path needs a SpectralCovariance")
        g = q0.grid
        offs = np.atleast_2d(np.asarray(offsets, dtype=float))
        zmax = float(np.sqrt((offs**2).sum(axis=1)).max())
        qinf = limit_covariance(q0)
        ref = np.array([position_covariance(qinf, z) for z in offs])
        for t in times:
            if 2 * t + zmax > g.L / 2:
                raise GridError(f"t={t} beyond wrap horizon {(g.L / 2 - zmax) / 2:.3g}")
            qt = evolve_covariance(q0, t)
            cur = np.array([position_covariance(qt, z) for z in offs])
            err = np.abs(cur - ref).max(axis=0)
            rows.append({"t": float(t), "err": err, "scale": float(np.abs(ref).max())})
    elif path == "radial":
        if not isinstance(q0, IsotropicDensity):
            raise TypeError("radial path needs an IsotropicDensity")
        zs = np.abs(np.asarray(offsets, dtype=float)).ravel()
        ref = radial_position_covariance(q0, zs, limit=True)
        for t in times:
            cur = radial_position_covariance(q0, zs, t=t)
            err = np.abs(cur - ref).max(axis=-1)
            rows.append({"t": float(t), "err": err, "scale": float(np.abs(ref).max())})
    else:
        raise ValueError(f"unknown path {path!r}")
    return rows


def write_covariance_csv(path, rows: list[dict]) -> None:
    """Rows of ``t, z, i, j, value``."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "z", "i", "j", "value"])
        for r in rows:
            w.writerow([r["t"], r["z"], r["i"], r["j"], r["value"]])
