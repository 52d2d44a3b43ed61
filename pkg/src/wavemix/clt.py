"""Monte Carlo harness for the central limit behaviour of random wave fields.

The functional ``<U0(t) Y0, Psi>`` is evaluated through the dual dynamics as
``<Y0, Phi>`` with ``Phi = U0'(t) Psi``, and split over slabs of a room and
corridor partition along one axis.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .covariance import SpectralCovariance, evolve_covariance, limit_covariance, quadratic_form
from .grid import GridError, GridSpec, StateVector, TestFunction, inner_product
from .propagator import adjoint_evolve, evolve

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleError",
    "RoomCorridorPartition",
    "Schedule",
    "SlabDecomposition",
    "decompose",
    "Probe",
    "EnsembleResult",
    "run_ensemble",
    "ScalingCase",
    "moment_scalings",
    "lindeberg_statistic",
    "characteristic_functional",
    "characteristic_functional_from_samples",
    "NormalityReport",
    "normality_report",
    "no_mixing_counterexample",
]


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class RoomCorridorPartition:
    """Slabs along ``axis``: room ``[j p, j p + d)``, corridor ``[j p + d, (j + 1) p)``, ``p = d + rho``."""

    d: float
    rho: float
    axis: int = -1

    def __post_init__(self):
        if self.d <= 0 or self.rho < 0:
            raise ValueError("room width must be positive and corridor width nonnegative")

    @property
    def period(self) -> float:
        return self.d + self.rho

    @classmethod
    def on_grid(cls, grid: GridSpec, d: float, rho: float, axis: int = -1) -> "RoomCorridorPartition":
        """Round both widths to whole cells (room at least one cell)."""
        h = grid.h
        return cls(max(1, round(d / h)) * h, max(0, round(rho / h)) * h, axis)

    def _axis(self, grid: GridSpec) -> int:
        ax = self.axis % grid.n if -grid.n <= self.axis < grid.n else None
        if ax is None:
            raise GridError(f"partition axis {self.axis} exceeds dimension {grid.n}")
        return ax

    def labels(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        """Slab index and room flag for every node coordinate along the axis."""
        self._axis(grid)
        x = grid.axis_coords
        # half-cell nudge keeps nodes sitting on a slab edge on the correct side
        j = np.floor((x + 1e-9 * grid.h) / self.period).astype(int)
        room = (x - j * self.period) < self.d - 1e-9 * grid.h
        return j, room

    def indicator(self, grid: GridSpec, j: int, room: bool) -> np.ndarray:
        ax = self._axis(grid)
        jj, rr = self.labels(grid)
        line = ((jj == j) & (rr == room)).astype(float)
        shape = [1] * grid.n
        shape[ax] = grid.N
        return np.broadcast_to(line.reshape(shape), grid.shape)

    def slab_range(self, grid: GridSpec) -> tuple[int, int]:
        jj, _ = self.labels(grid)
        return int(jj.min()), int(jj.max())

    def active_range(self, center: float, t: float, r_bar: float) -> tuple[int, int]:
        """Indices whose slab meets ``[center - t - r_bar, center + t + r_bar]``."""
        lo, hi = center - t - r_bar, center + t + r_bar
        return math.floor(lo / self.period), math.floor(hi / self.period)

    def interior_rooms(self, center: float, t: float, r_bar: float) -> list[int]:
        """Rooms lying inside ``[center - t + r_bar, center + t - r_bar]``, away from the caps."""
        lo, hi = center - t + r_bar, center + t - r_bar
        j0, j1 = math.ceil(lo / self.period), math.floor((hi - self.d) / self.period)
        return list(range(j0, j1 + 1))


@dataclass(frozen=True)
class Schedule:
    """``d_t = c_d t / ln t`` and ``rho_t = c_rho t^(1 - delta)``."""

    delta: float = 0.5
    c_d: float = 1.0
    c_rho: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    def d(self, t: float) -> float:
        if t <= 1:
            raise ValueError("schedule needs t > 1")
        return self.c_d * t / math.log(t)

    def rho(self, t: float) -> float:
        return self.c_rho * t ** (1.0 - self.delta)

    def n_rooms(self, t: float) -> float:
        return 2 * t / (self.d(t) + self.rho(t))

    def partition(self, grid: GridSpec, t: float, axis: int = -1) -> RoomCorridorPartition:
        return RoomCorridorPartition.on_grid(grid, self.d(t), self.rho(t), axis)


def _center_along(Psi: TestFunction, ax: int) -> float:
    return 0.0 if Psi.center is None else float(Psi.center[ax])


@dataclass
class SlabDecomposition:
    rooms: dict
    corridors: dict
    total: float
    active: tuple[int, int]

    def reconstruct(self) -> float:
        return math.fsum(self.rooms.values()) + math.fsum(self.corridors.values())


class _SlabReducer:
    """Node-to-slab bookkeeping for fast per-member slab sums."""

    def __init__(self, grid: GridSpec, p: RoomCorridorPartition):
        self.grid = grid
        self.axis = p._axis(grid)
        jj, room = p.labels(grid)
        self.j0 = int(jj.min())
        self.n_slabs = int(jj.max()) - self.j0 + 1
        self.label = 2 * (jj - self.j0) + (~room).astype(int)
        self.other = tuple(a for a in range(grid.n) if a != self.axis)

    def __call__(self, integrand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        prof = integrand.sum(axis=self.other) * self.grid.cell_volume
        s = np.bincount(self.label, weights=prof, minlength=2 * self.n_slabs)
        return s[0::2], s[1::2]

    def ids(self) -> np.ndarray:
        return np.arange(self.j0, self.j0 + self.n_slabs)


def decompose(Y0: StateVector, Psi: TestFunction, t: float, p: RoomCorridorPartition) -> SlabDecomposition:
    """Room and corridor contributions ``<Y0, chi Phi>`` with ``Phi = U0'(t) Psi``."""
    g = Y0.grid
    ax = p._axis(g)
    t_max = g.horizon(Psi.support_radius)
    if t > t_max + 1e-12:
        raise GridError(f"t={t} exceeds horizon {t_max:.4g}")
    Phi = adjoint_evolve(Psi, t)
    red = _SlabReducer(g, p)
    r, c = red(Y0.u * Phi.u + Y0.v * Phi.v)
    ids = red.ids()
    return SlabDecomposition(
        dict(zip(ids.tolist(), r.tolist())),
        dict(zip(ids.tolist(), c.tolist())),
        inner_product(evolve(Y0, t), Psi),
        p.active_range(_center_along(Psi, ax), t, Psi.support_radius),
    )


@dataclass
class Probe:
    """A weight ``Phi`` (already propagated) with an optional slab partition."""

    weight: StateVector
    partition: RoomCorridorPartition | None = None
    label: float = 0.0


@dataclass
class EnsembleResult:
    seed: int
    members: int
    label: float
    values: np.ndarray
    rooms: np.ndarray | None = None
    corridors: np.ndarray | None = None
    slab_ids: np.ndarray | None = None

    def mean_se(self, x: np.ndarray | None = None) -> tuple[float, float]:
        x = self.values if x is None else x
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))

    def variance_se(self) -> tuple[float, float]:
        """Sample variance (known zero mean) and its standard error."""
        sq = self.values**2
        return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(len(sq)))

    def slab_columns(self, ids: Sequence[int], which: str = "rooms") -> np.ndarray:
        arr = self.rooms if which == "rooms" else self.corridors
        pos = [int(np.searchsorted(self.slab_ids, j)) for j in ids]
        return arr[:, pos]


def run_ensemble(model, probes: Sequence[Probe], seed: int, members: int, threads: int = 1, block: int = 64) -> list[EnsembleResult]:
    """Sample ``members`` initial fields and evaluate every probe on each.

    Members are keyed by index, so results do not depend on ``threads``.
    """
    if members < 1:
        raise ValueError("need at least one member")
    g = model.grid
    reducers = [_SlabReducer(g, p.partition) if p.partition is not None else None for p in probes]
    vals = np.zeros((len(probes), members))
    rooms = [np.zeros((members, r.n_slabs)) if r else None for r in reducers]
    cors = [np.zeros((members, r.n_slabs)) if r else None for r in reducers]

    def work(lo: int, hi: int):
        for m in range(lo, hi):
            Y = model.sample(seed, m)
            for k, (pr, red) in enumerate(zip(probes, reducers)):
                dens = Y.u * pr.weight.u + Y.v * pr.weight.v
                vals[k, m] = dens.sum() * g.cell_volume
                if red is not None:
                    rooms[k][m], cors[k][m] = red(dens)

    blocks = [(lo, min(lo + block, members)) for lo in range(0, members, block)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda b: work(*b), blocks))
    else:
        for b in blocks:
            work(*b)
    out = []
    for k, pr in enumerate(probes):
        ids = reducers[k].ids() if reducers[k] else None
        out.append(EnsembleResult(seed, members, pr.label, vals[k], rooms[k], cors[k], ids))
    return out


@dataclass
class ScalingCase:
    """One point of a scaling study: model on its own grid, test function, time."""

    model: object
    Psi: TestFunction
    t: float


def _loglog_fit(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def moment_scalings(cases: Sequence[ScalingCase], schedule: Schedule, members: int, seed: int = 0, threads: int = 1, axis: int = -1) -> dict:
    """Second and fourth room moments along the schedule, with log-log fits.

    Moments are averaged over interior rooms (slabs away from the cone caps),
    where every room cuts the same shell area.
    """
    if members < 1000:
        raise EnsembleError("moment scalings need at least 1000 members")
    rows = []
    for case in cases:
        g = case.model.grid
        t = case.t
        t_max = g.horizon(case.Psi.support_radius, getattr(case.model, "a", 0.0))
        if t > t_max + 1e-12:
            raise GridError(f"t={t} exceeds horizon {t_max:.4g}")
        p = schedule.partition(g, t, axis)
        ax = p._axis(g)
        Phi = adjoint_evolve(case.Psi, t)
        (res,) = run_ensemble(case.model, [Probe(Phi, p, t)], seed, members, threads)
        center = _center_along(case.Psi, ax)
        ids = [j for j in p.interior_rooms(center, t, case.Psi.support_radius) if j in set(res.slab_ids.tolist())]
        if not ids:
            log.warning("no interior rooms at t=%g; using all active rooms", t)
            j0, j1 = p.active_range(center, t, case.Psi.support_radius)
            ids = [j for j in range(j0, j1 + 1) if j in set(res.slab_ids.tolist())]
        r = res.slab_columns(ids, "rooms")
        c = res.slab_columns(ids, "corridors")
        r2 = (r**2).mean(axis=1)
        r4 = (r**4).mean(axis=1)
        c2 = (c**2).mean(axis=1)
        m4, se4 = float(r4.mean()), float(r4.std(ddof=1) / math.sqrt(members))
        if se4 > 0.25 * m4:
            raise EnsembleError(f"fourth moment unstable at t={t}: SE {se4:.3g} vs estimate {m4:.3g}")
        q0 = SpectralCovariance(g, case.model.spectral_density())
        exact = np.mean([quadratic_form(q0, Phi.masked(p.indicator(g, j, True))) for j in ids])
        rows.append(
            {
                "t": t,
                "d": p.d,
                "rho": p.rho,
                "rooms": ids,
                "d_over_t": p.d / t,
                "rho_over_d": p.rho / p.d,
                "r2": float(r2.mean()),
                "r2_se": float(r2.std(ddof=1) / math.sqrt(members)),
                "r2_exact": float(exact),
                "c2": float(c2.mean()),
                "c2_se": float(c2.std(ddof=1) / math.sqrt(members)),
                "r4": m4,
                "r4_se": se4,
            }
        )
    fits = {}
    if len(rows) >= 2:
        x = [row["d_over_t"] for row in rows]
        fits["r2_slope"] = _loglog_fit(x, [row["r2"] for row in rows])
        fits["r2_exact_slope"] = _loglog_fit(x, [row["r2_exact"] for row in rows])
        fits["r4_slope"] = _loglog_fit([v * v for v in x], [row["r4"] for row in rows])
        fits["corridor_ratio"] = [(row["c2"] / row["r2"]) / row["rho_over_d"] for row in rows]
    return {"rows": rows, "fits": fits}


def lindeberg_statistic(r: np.ndarray, eps: float) -> float:
    """``(1/sigma) sum_j E[r_j^2; r_j^2 > eps^2 sigma]`` with ``sigma = sum_j E r_j^2``.

    ``r`` has shape (members, rooms).
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    sq = r**2
    sigma = float(sq.mean(axis=0).sum())
    if not sigma > 0:
        raise EnsembleError("degenerate variance in Lindeberg statistic")
    tail = np.where(sq > eps * eps * sigma, sq, 0.0)
    return float(tail.mean(axis=0).sum() / sigma)


def characteristic_functional_from_samples(values: np.ndarray) -> tuple[complex, float]:
    """Sample mean of ``exp(i X)`` with its jackknife standard error."""
    z = np.exp(1j * np.asarray(values, dtype=float))
    M = len(z)
    est = complex(z.mean())
    loo = (z.sum() - z) / (M - 1)
    se = math.sqrt((M - 1) / M * float((np.abs(loo - loo.mean()) ** 2).sum()))
    return est, se


def characteristic_functional(model, Psi: TestFunction, t: float, members: int, seed: int = 0, threads: int = 1) -> dict:
    """Estimate ``E exp(i <Y(t), Psi>)`` next to ``exp(-Q_inf(Psi, Psi) / 2)``."""
    if members < 1000:
        raise EnsembleError("characteristic functional needs at least 1000 members")
    (res,) = run_ensemble(model, [Probe(adjoint_evolve(Psi, t), None, t)], seed, members, threads)
    est, se = characteristic_functional_from_samples(res.values)
    q0 = SpectralCovariance(model.grid, model.spectral_density())
    target = math.exp(-0.5 * quadratic_form(limit_covariance(q0), Psi))
    return {"t": t, "estimate": est, "se": se, "target": target, "error": abs(est - target), "values": res.values}


@dataclass
class NormalityReport:
    members: int
    variance: float
    skew: float
    exkurt: float
    skew_se: float
    exkurt_se: float
    ks_stat: float
    ks_p: float


def normality_report(samples: np.ndarray, variance: float, min_members: int = 4096) -> NormalityReport:
    """Skewness, excess kurtosis and a KS test against ``Normal(0, variance)``."""
    x = np.asarray(samples, dtype=float)
    M = len(x)
    if M < min_members:
        raise EnsembleError(f"normality report needs at least {min_members} members, got {M}")
    if not variance > 0:
        raise ValueError("reference variance must be positive")
    ks = stats.kstest(x, stats.norm(scale=math.sqrt(variance)).cdf)
    return NormalityReport(
        M,
        float(variance),
        float(stats.skew(x)),
        float(stats.kurtosis(x)),
        math.sqrt(6.0 / M),
        math.sqrt(24.0 / M),
        float(ks.statistic),
        float(ks.pvalue),
    )


def no_mixing_counterexample(grid: GridSpec | None = None, Psi: TestFunction | None = None, t: float = 2.0, members: int = 100, seed: int = 0) -> dict:
    """Fields ``u0 = 0``, ``v0 = +-1`` (one sign per member): perfectly correlated, never mixing."""
    from .grid import mollified_bump

    grid = grid or GridSpec(3, 16, 16.0)
    Psi = Psi or mollified_bump(grid, 3.0)
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=members)
    vals = np.empty(members)
    err = 0.0
    base = {}
    for s in (-1.0, 1.0):
        Y0 = StateVector(grid, np.zeros(grid.shape), np.full(grid.shape, s))
        Yt = evolve(Y0, t)
        err = max(err, float(np.abs(Yt.u - s * t).max()), float(np.abs(Yt.v - s).max()))
        base[s] = inner_product(Yt, Psi)
    for m, s in enumerate(signs):
        vals[m] = base[s]
    atoms = np.unique(np.round(vals, 12))
    mu, sd = float(vals.mean()), float(vals.std(ddof=1))
    ks_fit = stats.kstest(vals, stats.norm(loc=mu, scale=sd).cdf) if sd > 0 else None
    ks_var = stats.kstest(vals, stats.norm(scale=math.sqrt(float((vals**2).mean()))).cdf)
    # the closest Gaussian to a symmetric two-point law still misses by 1/4 in sup norm
    return {
        "t": t,
        "members": members,
        "max_u_error": err,
        "atoms": atoms.tolist(),
        "n_atoms": len(atoms),
        "ks_fitted_stat": float(ks_fit.statistic) if ks_fit else 1.0,
        "ks_fitted_p": float(ks_fit.pvalue) if ks_fit else 0.0,
        "ks_variance_matched_p": float(ks_var.pvalue),
        "best_gaussian_distance": 0.25,
        "values": vals,
    }
