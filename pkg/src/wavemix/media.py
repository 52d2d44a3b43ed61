"""Wave dynamics in a compactly perturbed medium.

The operator is ``A u = div(a grad u) - a0 u`` with ``a`` equal to the identity
outside a ball of radius ``R0``. Time stepping is kick-drift-kick leapfrog on a
symmetric second-order stencil, so the step matrix ``M`` satisfies
``M^T = P M P`` (``P`` swaps the two components) exactly on the grid.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .covariance import SpectralCovariance, limit_covariance, quadratic_form
from .grid import GridError, GridSpec, StateVector, TestFunction, local_energy_seminorm, mollifier, weighted_norm
from .propagator import adjoint_evolve, evolve

log = logging.getLogger(__name__)

__all__ = [
    "HyperbolicityError",
    "RadialBump",
    "CoefficientField",
    "check_hyperbolicity",
    "RayTrajectory",
    "ray_trace",
    "sample_rays",
    "evolve_fdtd",
    "evolve_fdtd_series",
    "adjoint_evolve_var",
    "fdtd_energy",
    "fdtd_step",
    "DecayProfile",
    "local_energy_decay",
    "wave_operator_approx",
    "cook_increments",
    "scattering_residuals",
    "variable_clt_experiment",
]


class HyperbolicityError(ValueError):
    pass


def _bump_and_slope(r: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Mollifier profile and its radial derivative."""
    r = np.asarray(r, dtype=float)
    b = np.zeros_like(r)
    db = np.zeros_like(r)
    m = r < R
    s = (r[m] / R) ** 2
    b[m] = np.exp(1.0 - 1.0 / (1.0 - s))
    db[m] = b[m] * (-2.0 * r[m] / R**2) / (1.0 - s) ** 2
    return b, db


@dataclass(frozen=True)
class RadialBump:
    """``a(x) = I + amplitude b(|x - c|) B`` and ``a0(x) = a0_amplitude b(|x - c|)``.

    ``b`` is the unit-peak mollifier of radius ``radius``; ``B`` is symmetric.
    """

    amplitude: float
    radius: float
    center: tuple = (0.0, 0.0, 0.0)
    matrix: tuple | None = None
    a0_amplitude: float = 0.0

    def B(self, n: int) -> np.ndarray:
        return np.eye(n) if self.matrix is None else np.asarray(self.matrix, dtype=float)

    def a(self, x: np.ndarray) -> np.ndarray:
        """Coefficient matrices at points of shape (P, n)."""
        x = np.atleast_2d(x)
        n = x.shape[1]
        b, _ = _bump_and_slope(np.linalg.norm(x - np.asarray(self.center), axis=1), self.radius)
        return np.eye(n) + self.amplitude * b[:, None, None] * self.B(n)

    def grad_a(self, x: np.ndarray) -> np.ndarray:
        """``d a_ij / d x_l`` at points, shape (P, n, n, n) indexed [p, l, i, j]."""
        x = np.atleast_2d(x)
        n = x.shape[1]
        d = x - np.asarray(self.center)
        r = np.linalg.norm(d, axis=1)
        _, db = _bump_and_slope(r, self.radius)
        unit = np.where(r[:, None] > 0, d / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return self.amplitude * (db[:, None] * unit)[:, :, None, None] * self.B(n)


@dataclass
class CoefficientField:
    """Symmetric matrix field ``a`` (shape (n, n, *grid)) and potential ``a0``."""

    grid: GridSpec
    a: np.ndarray
    a0: np.ndarray
    R0: float
    bump: RadialBump | None = None
    _half: list = field(default=None, init=False, repr=False)
    _cross: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        if self.a.shape != (g.n, g.n) + g.shape or self.a0.shape != g.shape:
            raise GridError("coefficient arrays do not match the grid")
        if not 0 <= self.R0 < g.L / 4:
            raise GridError(f"perturbation radius R0={self.R0} must lie below L/4={g.L / 4}")
        if np.abs(self.a - np.swapaxes(self.a, 0, 1)).max() > 1e-12:
            raise HyperbolicityError("coefficient matrix is not symmetric")
        if self.a0.min() < 0:
            raise ValueError("a0 must be nonnegative")
        outside = g.radius(self.center) > self.R0 + 1e-9
        if np.abs(self.a[..., outside] - np.eye(g.n)[:, :, None]).max(initial=0.0) > 1e-10 or np.abs(self.a0[outside]).max(initial=0.0) > 1e-10:
            raise GridError(f"coefficients differ from the free medium outside R0={self.R0}")

    @property
    def center(self) -> tuple:
        return tuple(self.bump.center) if self.bump is not None else (0.0,) * self.grid.n

    @classmethod
    def identity(cls, grid: GridSpec) -> "CoefficientField":
        a = np.broadcast_to(np.eye(grid.n)[:, :, None], (grid.n, grid.n, grid.size)).reshape((grid.n, grid.n) + grid.shape).copy()
        return cls(grid, a, np.zeros(grid.shape), 0.0, RadialBump(0.0, 1.0, (0.0,) * grid.n))

    @classmethod
    def from_bump(cls, grid: GridSpec, bump: RadialBump) -> "CoefficientField":
        n = grid.n
        if len(bump.center) != n:
            raise GridError("bump center dimension mismatch")
        b = mollifier(grid.radius(bump.center), bump.radius)
        a = np.eye(n)[:, :, None] + bump.amplitude * bump.B(n)[:, :, None] * b.ravel()[None, None, :]
        a = a.reshape((n, n) + grid.shape)
        return cls(grid, a, bump.a0_amplitude * b, bump.radius, bump)

    @property
    def is_identity(self) -> bool:
        return np.array_equal(self.a, CoefficientField.identity(self.grid).a) and not self.a0.any()

    def max_speed(self) -> float:
        return math.sqrt(float(_eigs(self.a).max()))

    def _prepare(self):
        if self._half is not None:
            return
        g = self.grid
        self._half = [0.5 * (self.a[i, i] + np.roll(self.a[i, i], -1, axis=i)) for i in range(g.n)]
        self._cross = [(i, j, self.a[i, j]) for i in range(g.n) for j in range(g.n) if i != j and np.any(self.a[i, j] != 0)]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``div(a grad u) - a0 u`` on the grid."""
        self._prepare()
        h = self.grid.h
        out = -self.a0 * u
        for i, A in enumerate(self._half):
            flux = A * (np.roll(u, -1, axis=i) - u)
            out = out + (flux - np.roll(flux, 1, axis=i)) / (h * h)
        for i, j, a in self._cross:
            dj = (np.roll(u, -1, axis=j) - np.roll(u, 1, axis=j)) / (2 * h)
            f = a * dj
            out = out + (np.roll(f, -1, axis=i) - np.roll(f, 1, axis=i)) / (2 * h)
        return out


def _eigs(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    mats = np.moveaxis(a.reshape(n, n, -1), -1, 0)
    return np.linalg.eigvalsh(mats)


def check_hyperbolicity(c: CoefficientField) -> float:
    """``alpha = min eigenvalue / 2`` over all nodes."""
    if np.abs(c.a - np.swapaxes(c.a, 0, 1)).max() > 1e-12:
        raise HyperbolicityError("coefficient matrix is not symmetric")
    alpha = 0.5 * float(_eigs(c.a).min())
    if alpha <= 0:
        raise HyperbolicityError(f"coefficients are not uniformly elliptic (alpha={alpha:.3g})")
    return alpha


@dataclass
class RayTrajectory:
    times: np.ndarray
    x: np.ndarray
    k: np.ndarray
    H: np.ndarray
    escaped: bool
    exit_time: float | None

    @property
    def energy_drift(self) -> float:
        return float(np.abs(self.H - self.H[0]).max() / abs(self.H[0]))


_GL_C = np.array([0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6])
_GL_A = np.array([[0.25, 0.25 - math.sqrt(3) / 6], [0.25 + math.sqrt(3) / 6, 0.25]])
_GL_B = np.array([0.5, 0.5])


def _ray_rhs(bump: RadialBump, x: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = bump.a(x[None])[0]
    da = bump.grad_a(x[None])[0]
    return a @ k, -0.5 * np.einsum("lij,i,j->l", da, k, k)


def ray_trace(c: CoefficientField | RadialBump, x0, k0, T: float, step: float = 0.05, tol: float = 1e-14) -> RayTrajectory:
    """Hamiltonian rays of ``H = k.a(x)k / 2`` by the two-stage Gauss-Legendre method.

    The method is symplectic and fourth order; stages are solved by fixed-point
    iteration. A ray has escaped once it leaves the perturbation ball and its
    distance to the centre keeps growing to the end of the run.
    """
    bump = c.bump if isinstance(c, CoefficientField) else c
    if bump is None:
        raise ValueError("ray tracing needs an analytic coefficient description")
    x = np.asarray(x0, dtype=float).copy()
    k = np.asarray(k0, dtype=float).copy()
    if not np.any(k):
        raise ValueError("initial covector k0 must be nonzero")
    n_steps = max(1, int(math.ceil(T / step)))
    dt = T / n_steps
    xs, ks = [x.copy()], [k.copy()]
    for _ in range(n_steps):
        fx0, fk0 = _ray_rhs(bump, x, k)
        Kx = np.array([fx0, fx0])
        Kk = np.array([fk0, fk0])
        for _ in range(100):
            new_x, new_k = np.empty_like(Kx), np.empty_like(Kk)
            for s in range(2):
                xs_ = x + dt * (_GL_A[s] @ Kx)
                ks_ = k + dt * (_GL_A[s] @ Kk)
                new_x[s], new_k[s] = _ray_rhs(bump, xs_, ks_)
            delta = max(np.abs(new_x - Kx).max(), np.abs(new_k - Kk).max())
            Kx, Kk = new_x, new_k
            if delta < tol:
                break
        x = x + dt * (_GL_B @ Kx)
        k = k + dt * (_GL_B @ Kk)
        xs.append(x.copy())
        ks.append(k.copy())
    X, K = np.array(xs), np.array(ks)
    A = bump.a(X)
    H = 0.5 * np.einsum("pi,pij,pj->p", K, A, K)
    times = np.linspace(0.0, T, n_steps + 1)
    dist = np.linalg.norm(X - np.asarray(bump.center), axis=1)
    R0 = bump.radius
    outside = dist > R0
    exit_time = None
    escaped = False
    if outside.any():
        # last entry into the exterior region
        inside_idx = np.nonzero(~outside)[0]
        first = 0 if inside_idx.size == 0 else inside_idx[-1] + 1
        if first < len(dist):
            tail = dist[first:]
            escaped = bool(np.all(np.diff(tail) > 0)) and first < len(dist) - 1
            exit_time = float(times[first]) if escaped else None
    return RayTrajectory(times, X, K, H, escaped, exit_time)


def sample_rays(c: CoefficientField, count: int = 24, T: float | None = None, seed: int = 0, step: float = 0.05) -> list[RayTrajectory]:
    """Rays from random points in the perturbation ball with random unit directions."""
    bump = c.bump
    if bump is None:
        raise ValueError("ray sampling needs an analytic coefficient description")
    rng = np.random.default_rng(seed)
    n = c.grid.n
    T = T if T is not None else 6.0 * bump.radius / math.sqrt(max(2 * check_hyperbolicity(c), 1e-12))
    out = []
    for _ in range(count):
        d = rng.standard_normal(n)
        x0 = np.asarray(bump.center) + bump.radius * rng.uniform() ** (1 / n) * d / np.linalg.norm(d)
        k0 = rng.standard_normal(n)
        out.append(ray_trace(bump, x0, k0 / np.linalg.norm(k0), T, step))
    return out


def _steps(c: CoefficientField, t: float, cfl: float) -> tuple[int, float]:
    if cfl > 0.5 or cfl <= 0:
        raise ValueError(f"CFL number {cfl} outside (0, 0.5]")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t == 0:
        return 0, 0.0
    n = int(math.ceil(t * c.max_speed() / (cfl * c.grid.h)))
    return n, t / n


def evolve_fdtd(c: CoefficientField, Y0: StateVector, t: float, cfl: float = 0.25) -> StateVector:
    """Kick-drift-kick leapfrog for ``u_tt = div(a grad u) - a0 u``."""
    c.grid.check_same(Y0.grid)
    n, dt = _steps(c, t, cfl)
    u, v = Y0.u.copy(), Y0.v.copy()
    if n == 0:
        return StateVector(c.grid, u, v)
    acc = c.apply(u)
    for _ in range(n):
        v += 0.5 * dt * acc
        u += dt * v
        acc = c.apply(u)
        v += 0.5 * dt * acc
    return StateVector(c.grid, u, v)


def evolve_fdtd_series(c: CoefficientField, Y0: StateVector, times: Sequence[float], cfl: float = 0.25) -> list[StateVector]:
    """States at increasing times; each interval is split into whole CFL-limited steps."""
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be nonnegative and increasing")
    c.grid.check_same(Y0.grid)
    u, v = Y0.u.copy(), Y0.v.copy()
    acc = c.apply(u)
    now = 0.0
    out = []
    for t in times:
        n, dt = _steps(c, t - now, cfl)
        for _ in range(n):
            v += 0.5 * dt * acc
            u += dt * v
            acc = c.apply(u)
            v += 0.5 * dt * acc
        now = t
        out.append(StateVector(c.grid, u.copy(), v.copy()))
    return out


def adjoint_evolve_var(c: CoefficientField, Psi: TestFunction | StateVector, t: float, cfl: float = 0.25) -> StateVector:
    """Dual dynamics: evolve the swapped pair, then swap back."""
    S = Psi.as_state() if isinstance(Psi, TestFunction) else Psi
    return evolve_fdtd(c, S.swap(), t, cfl).swap()


def _backward(c: CoefficientField, Y: StateVector, t: float, cfl: float) -> StateVector:
    """``U(-t)`` via time reversal ``(u, v) -> (u, -v)``."""
    Yr = StateVector(Y.grid, Y.u, -Y.v)
    Z = evolve_fdtd(c, Yr, t, cfl)
    return StateVector(Z.grid, Z.u, -Z.v)


def fdtd_energy(c: CoefficientField, Y: StateVector, dt: float | None = None) -> float:
    """Discrete energy ``(|v|^2 - u A u) h^n / 2`` matching the stencil.

    With ``dt`` the leapfrog correction ``-dt^2 |A u|^2 / 8`` is included; that
    staggered energy is invariant under the scheme at fixed step.
    """
    Au = c.apply(Y.u)
    e = float((Y.v**2).sum() - (Y.u * Au).sum())
    if dt is not None:
        e -= 0.25 * dt * dt * float((Au**2).sum())
    return 0.5 * e * c.grid.cell_volume


def fdtd_step(c: CoefficientField, t: float, cfl: float = 0.25) -> float:
    """Step size used by the leapfrog for an interval of length ``t``."""
    return _steps(c, t, cfl)[1]


@dataclass
class DecayProfile:
    times: np.ndarray
    norms: np.ndarray
    R: float
    onset: float
    end: float
    alpha_fit: float = float("nan")
    r_squared: float = float("nan")

    def fit(self) -> "DecayProfile":
        w = (self.times >= self.onset) & (self.times <= self.end) & (self.norms > 0)
        if w.sum() < 3:
            raise ValueError("fewer than three samples in the fit window")
        x, y = self.times[w], np.log(self.norms[w])
        slope, icpt = np.polyfit(x, y, 1)
        resid = y - (slope * x + icpt)
        ss = float(((y - y.mean()) ** 2).sum())
        self.alpha_fit = float(-slope)
        self.r_squared = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
        return self


def local_energy_decay(
    c: CoefficientField,
    Y0: StateVector,
    R: float,
    times: Sequence[float],
    support_radius: float,
    onset: float | None = None,
    cfl: float = 0.25,
    tail_tol: float = 1e-10,
    solver: str = "fdtd",
) -> DecayProfile:
    """``||U(t) Y0||_R`` (square root of the local energy) with a log-linear fit.

    The fit window starts at ``onset`` (default: when the free front has left
    ``B_R``) and ends before energy returns through the periodic images.
    """
    g = c.grid
    out = g.radius(c.center) > support_radius
    scale = max(np.abs(Y0.u).max(), np.abs(Y0.v).max(), 1e-300)
    if max(np.abs(Y0.u[out]).max(initial=0.0), np.abs(Y0.v[out]).max(initial=0.0)) > tail_tol * scale:
        raise GridError(f"initial data not supported in radius {support_radius}")
    end = g.L - R - support_radius
    times = np.asarray(times, dtype=float)
    if times.max() > end:
        raise GridError(f"times beyond wrap-free window {end:.4g}")
    if solver == "fdtd":
        states = evolve_fdtd_series(c, Y0, times, cfl)
    elif solver == "spectral":
        if not c.is_identity:
            raise ValueError("spectral solver only applies to the free medium")
        states = [evolve(Y0, t) for t in times]
    else:
        raise ValueError(f"unknown solver {solver!r}")
    norms = np.array([math.sqrt(local_energy_seminorm(S, R, c.center)) for S in states])
    on = onset if onset is not None else R + support_radius
    return DecayProfile(times, norms, R, on, float(times.max()))


def wave_operator_approx(c: CoefficientField, Psi: TestFunction, T: float, free: str = "fdtd", cfl: float = 0.25) -> StateVector:
    """``W(T) Psi = U0'(-T) U'(T) Psi``.

    ``free="fdtd"`` runs the free backward step on the same stencil, so the
    identity medium returns ``Psi`` to round-off; ``free="spectral"`` uses the
    exact free propagator.
    """
    g = c.grid
    t_max = g.L / 2 - Psi.support_radius
    if T > t_max + 1e-12:
        raise GridError(f"T={T} exceeds horizon {t_max:.4g}")
    Phi = adjoint_evolve_var(c, Psi, T, cfl)
    if free == "fdtd":
        c0 = CoefficientField.identity(g)
        return _backward(c0, Phi.swap(), T, cfl).swap()
    if free == "spectral":
        return adjoint_evolve(Phi, -T)
    raise ValueError(f"unknown free propagator {free!r}")


def cook_increments(c: CoefficientField, Psi: TestFunction, Ts: Sequence[float], delta: float | None = None, free: str = "fdtd", cfl: float = 0.25) -> list[dict]:
    """``||W(T_k) Psi - W(T_(k-1)) Psi||_delta`` along increasing ``T``."""
    g = c.grid
    delta = delta if delta is not None else 0.1 * 2 * math.pi / g.L
    Ws = [wave_operator_approx(c, Psi, T, free, cfl) for T in Ts]
    rows = []
    for k in range(1, len(Ts)):
        rows.append({"T": float(Ts[k]), "increment": weighted_norm(Ws[k] - Ws[k - 1], delta)})
    return rows


def scattering_residuals(c: CoefficientField, Psi: TestFunction, q0: SpectralCovariance, times: Sequence[float], T_w: float, free: str = "fdtd", cfl: float = 0.25) -> list[dict]:
    """RMS of ``<U(t) Y0, Psi> - <U0(t) Y0, W Psi>`` over the initial measure.

    With ``Y0`` of spectral covariance ``q0`` this is
    ``sqrt(Q0(U'(t) Psi - U0'(t) W Psi))``, reported relative to
    ``sqrt(Q0(U'(t) Psi))``. ``W`` is taken at ``T_w``.
    """
    g = c.grid
    W = wave_operator_approx(c, Psi, T_w, free, cfl)
    c0 = CoefficientField.identity(g)
    rows = []
    for t in times:
        left = adjoint_evolve_var(c, Psi, t, cfl)
        right = adjoint_evolve_var(c0, W, t, cfl) if free == "fdtd" else adjoint_evolve(W, t)
        scale = quadratic_form(q0, left)
        res = quadratic_form(q0, left - right)
        rows.append({"t": float(t), "residual": math.sqrt(res), "scale": math.sqrt(scale), "relative": math.sqrt(res / scale) if scale > 0 else 0.0})
    return rows


def variable_clt_experiment(c: CoefficientField, model, Psi: TestFunction, t: float, members: int, seed: int = 0, T_w: float | None = None, threads: int = 1, cfl: float = 0.25) -> dict:
    """Characteristic functional of ``<U(t) Y0, Psi>`` against ``exp(-Q_inf(W Psi, W Psi) / 2)``."""
    from .clt import Probe, characteristic_functional_from_samples, run_ensemble

    g = c.grid
    Phi = adjoint_evolve_var(c, Psi, t, cfl)
    (res,) = run_ensemble(model, [Probe(Phi, None, t)], seed, members, threads)
    est, se = characteristic_functional_from_samples(res.values)
    W = wave_operator_approx(c, Psi, T_w if T_w is not None else t, cfl=cfl)
    q0 = SpectralCovariance(g, model.spectral_density())
    with warnings.catch_warnings():
        # zero-mode convention is already logged by limit_covariance
        warnings.simplefilter("ignore", RuntimeWarning)
        q_inf = quadratic_form(limit_covariance(q0), W)
    target = math.exp(-0.5 * q_inf)
    var, var_se = res.variance_se()
    return {
        "t": t,
        "estimate": est,
        "se": se,
        "target": target,
        "error": abs(est - target),
        "q_inf": q_inf,
        "q_t": quadratic_form(q0, Phi),
        "variance": var,
        "variance_se": var_se,
        "values": res.values,
    }
