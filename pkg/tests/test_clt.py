import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemix.clt import (
    EnsembleError,
    Probe,
    RoomCorridorPartition,
    ScalingCase,
    Schedule,
    characteristic_functional,
    characteristic_functional_from_samples,
    decompose,
    lindeberg_statistic,
    moment_scalings,
    no_mixing_counterexample,
    normality_report,
    run_ensemble,
)
from wavemix.grid import GridError, GridSpec, inner_product, mollified_bump
from wavemix.propagator import adjoint_evolve, evolve
from wavemix.random_fields import GaussianSpectralModel, MovingAverageModel

from conftest import random_state


@pytest.fixture
def ma16():
    return MovingAverageModel.from_profile(GridSpec(3, 16, 16.0), 1.0, "bump", (1.0, 1.0))


@pytest.mark.parametrize("d,rho", [(2.0, 1.0), (3.0, 0.0), (1.0, 2.5), (16.0, 4.0)])
def test_partition_of_unity(grid16, d, rho):
    p = RoomCorridorPartition.on_grid(grid16, d, rho)
    lo, hi = p.slab_range(grid16)
    total = sum(p.indicator(grid16, j, room) for j in range(lo, hi + 1) for room in (True, False))
    assert np.array_equal(total, np.ones(grid16.shape))


def test_partition_validation(grid16):
    with pytest.raises(ValueError):
        RoomCorridorPartition(0.0, 1.0)
    with pytest.raises(ValueError):
        RoomCorridorPartition(1.0, -1.0)
    with pytest.raises(GridError):
        RoomCorridorPartition(1.0, 1.0, axis=5).labels(grid16)


def test_rooms_without_corridors_hold_everything(grid16, rng):
    Y = random_state(grid16, rng)
    Psi = mollified_bump(grid16, 2.0)
    dec = decompose(Y, Psi, 1.5, RoomCorridorPartition(grid16.L, 0.0))
    assert all(v == 0.0 for v in dec.corridors.values())
    assert math.fsum(dec.rooms.values()) == pytest.approx(dec.total, rel=1e-10)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.floats(0.5, 6.0), rho=st.floats(0.0, 4.0), t=st.floats(0.0, 4.0))
def test_decomposition_reconstructs_total(seed, d, rho, t):
    g = GridSpec(3, 16, 16.0)
    Y = random_state(g, np.random.default_rng(seed))
    Psi = mollified_bump(g, 2.0)
    dec = decompose(Y, Psi, t, RoomCorridorPartition.on_grid(g, d, rho))
    assert dec.reconstruct() == pytest.approx(dec.total, rel=1e-9, abs=1e-9)


def test_decompose_rejects_late_time(grid16, rng):
    Psi = mollified_bump(grid16, 2.0)
    with pytest.raises(GridError):
        decompose(random_state(grid16, rng), Psi, 20.0, RoomCorridorPartition(2.0, 1.0))


def test_active_range_covers_cone():
    p = RoomCorridorPartition(2.0, 1.0)
    assert p.active_range(0.0, 4.0, 1.0) == (-2, 1)
    rooms = p.interior_rooms(0.0, 10.0, 1.0)
    assert all(-9.0 <= j * p.period and j * p.period + p.d <= 9.0 for j in rooms)
    assert rooms == list(range(-3, 3))


def test_weight_outside_cone_is_negligible():
    g = GridSpec(3, 64, 32.0)
    Psi = mollified_bump(g, 3.0)
    t = 6.0
    Phi = adjoint_evolve(Psi, t)
    p = RoomCorridorPartition(1.0, 0.0)
    lo, hi = p.active_range(0.0, t, Psi.support_radius)
    jj, _ = p.labels(g)
    outside = (jj < lo) | (jj > hi)
    mass = Phi.u**2 + Phi.v**2
    assert mass[:, :, outside].sum() <= 1e-3 * mass.sum()


def test_schedule_limits():
    s = Schedule(0.5, 1.0, 1.0)
    for t in (10.0, 1e3, 1e6):
        assert s.d(t) == pytest.approx(t / math.log(t))
        assert s.rho(t) == pytest.approx(math.sqrt(t))
    ratios = [s.rho(t) / s.d(t) for t in (1e2, 1e4, 1e8)]
    assert ratios[0] > ratios[1] > ratios[2]
    assert s.d(1e8) / 1e8 < 0.06
    with pytest.raises(ValueError):
        s.d(1.0)
    with pytest.raises(ValueError):
        Schedule(delta=1.0)


def test_lindeberg_limits():
    r = np.random.default_rng(0).standard_normal((20000, 400))
    assert lindeberg_statistic(r, 0.5) < 1e-3
    assert lindeberg_statistic(r, 1e-6) == pytest.approx(1.0)
    one_room = np.random.default_rng(1).standard_normal((5000, 1))
    assert lindeberg_statistic(one_room, 0.2) > 0.99
    with pytest.raises(EnsembleError):
        lindeberg_statistic(np.zeros((10, 3)), 0.2)


def test_lindeberg_decreases_with_more_rooms():
    rng = np.random.default_rng(2)
    vals = [lindeberg_statistic(rng.standard_normal((4000, n)), 0.2) for n in (2, 8, 32, 128)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_characteristic_functional_of_zero_weight():
    est, se = characteristic_functional_from_samples(np.zeros(1000))
    assert est == 1.0 and se == 0.0


def test_characteristic_functional_gaussian_samples():
    x = np.random.default_rng(3).normal(0.0, 1.0, 20000)
    est, se = characteristic_functional_from_samples(x)
    assert abs(est - math.exp(-0.5)) <= 4 * se


def test_characteristic_functional_needs_members(ma16):
    with pytest.raises(EnsembleError):
        characteristic_functional(ma16, mollified_bump(ma16.grid, 2.0), 1.0, members=999)


def test_normality_report_on_gaussian():
    x = np.random.default_rng(4).normal(0.0, 2.0, 4096)
    rep = normality_report(x, 4.0)
    assert abs(rep.skew) < 0.1 and abs(rep.exkurt) < 0.2 and rep.ks_p > 0.01
    assert rep.skew_se == pytest.approx(math.sqrt(6 / 4096))
    with pytest.raises(EnsembleError):
        normality_report(x[:999], 4.0)
    with pytest.raises(ValueError):
        normality_report(x, 0.0)


def test_ensemble_values_match_forward_solve(ma16):
    g = ma16.grid
    Psi = mollified_bump(g, 2.0, weights=(0.5, 1.0))
    t = 2.0
    (res,) = run_ensemble(ma16, [Probe(adjoint_evolve(Psi, t), None, t)], seed=5, members=3)
    for m in range(3):
        assert res.values[m] == pytest.approx(inner_product(evolve(ma16.sample(5, m), t), Psi), rel=1e-10)


def test_ensemble_independent_of_threads(ma16):
    g = ma16.grid
    Psi = mollified_bump(g, 2.0)
    probes = [Probe(adjoint_evolve(Psi, 1.0), RoomCorridorPartition.on_grid(g, 2.0, 1.0), 1.0)]
    a = run_ensemble(ma16, probes, seed=9, members=40, threads=1, block=7)[0]
    b = run_ensemble(ma16, probes, seed=9, members=40, threads=4, block=5)[0]
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.rooms, b.rooms) and np.array_equal(a.corridors, b.corridors)
    with pytest.raises(ValueError):
        run_ensemble(ma16, probes, seed=9, members=0)


def test_slab_sums_reconstruct_values(ma16):
    g = ma16.grid
    Psi = mollified_bump(g, 2.0)
    (res,) = run_ensemble(ma16, [Probe(adjoint_evolve(Psi, 2.0), RoomCorridorPartition.on_grid(g, 1.5, 1.0), 2.0)], 1, 10)
    assert np.allclose(res.rooms.sum(axis=1) + res.corridors.sum(axis=1), res.values, rtol=1e-10, atol=1e-12)


def test_moment_scalings_guards(ma16):
    case = ScalingCase(ma16, mollified_bump(ma16.grid, 2.0), 2.0)
    with pytest.raises(EnsembleError):
        moment_scalings([case], Schedule(), members=10)
    late = ScalingCase(ma16, mollified_bump(ma16.grid, 2.0), 50.0)
    with pytest.raises(GridError):
        moment_scalings([late], Schedule(), members=1000)


def test_gaussian_field_stays_gaussian():
    g = GridSpec(3, 16, 16.0)
    ma = MovingAverageModel.from_profile(g, 1.0, "bump", (1.0, 1.0))
    model = GaussianSpectralModel(g, ma.spectral_density())
    Psi = mollified_bump(g, 2.0, weights=(0.0, 1.0))
    (res,) = run_ensemble(model, [Probe(adjoint_evolve(Psi, 2.0), None, 2.0)], 11, 4096)
    var = float((res.values**2).mean())
    rep = normality_report(res.values, var)
    assert abs(rep.skew) < 4 * rep.skew_se and abs(rep.exkurt) < 4 * rep.exkurt_se


def test_counterexample_two_atoms():
    rep = no_mixing_counterexample(members=100, seed=0)
    assert rep["max_u_error"] <= 1e-12 * rep["t"]
    assert rep["n_atoms"] == 2
    assert rep["ks_fitted_p"] < 1e-6
    assert rep["best_gaussian_distance"] == 0.25
    vals = rep["values"]
    assert np.allclose(np.abs(vals), abs(vals[0]))
