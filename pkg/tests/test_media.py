import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemix.grid import GridError, GridSpec, StateVector, inner_product, mollified_bump
from wavemix.media import (
    CoefficientField,
    HyperbolicityError,
    RadialBump,
    adjoint_evolve_var,
    check_hyperbolicity,
    cook_increments,
    evolve_fdtd,
    evolve_fdtd_series,
    fdtd_energy,
    fdtd_step,
    local_energy_decay,
    ray_trace,
    sample_rays,
    wave_operator_approx,
)
from wavemix.propagator import evolve

from conftest import random_state


@pytest.fixture
def bump_medium():
    g = GridSpec(3, 32, 16.0)
    return CoefficientField.from_bump(g, RadialBump(0.5, 3.0, (0.0, 0.0, 0.0), None, 0.2))


def test_identity_alpha_is_half(grid16):
    assert check_hyperbolicity(CoefficientField.identity(grid16)) == 0.5


@pytest.mark.parametrize("amp,alpha", [(0.6, 0.5), (-0.5, 0.25)])
def test_bump_alpha(amp, alpha):
    g = GridSpec(3, 32, 16.0)
    c = CoefficientField.from_bump(g, RadialBump(amp, 3.0))
    # the unit-peak mollifier attains 1 at the origin node
    assert check_hyperbolicity(c) == pytest.approx(alpha, rel=1e-12)


def test_indefinite_medium_raises():
    g = GridSpec(3, 32, 16.0)
    c = CoefficientField.from_bump(g, RadialBump(-1.5, 3.0))
    with pytest.raises(HyperbolicityError):
        check_hyperbolicity(c)


def test_coefficient_validation(grid16):
    a = CoefficientField.identity(grid16).a.copy()
    a[0, 1, 0, 0, 0] = 0.3
    with pytest.raises(HyperbolicityError):
        CoefficientField(grid16, a, np.zeros(grid16.shape), 1.0)
    with pytest.raises(GridError):
        CoefficientField.from_bump(grid16, RadialBump(0.2, 5.0))
    with pytest.raises(ValueError):
        CoefficientField(grid16, CoefficientField.identity(grid16).a, -np.ones(grid16.shape), 1.0)


def test_free_ray_is_straight():
    x0, k0 = np.array([5.0, 0.0, 0.0]), np.array([0.6, 0.8, 0.0])
    ray = ray_trace(RadialBump(0.5, 2.0), x0, k0, 3.0)
    assert np.allclose(ray.x[-1], x0 + 3.0 * k0, atol=1e-13)
    assert np.allclose(ray.k[-1], k0)


def test_ray_hamiltonian_conserved_and_escapes(bump_medium):
    ray = ray_trace(bump_medium, [0.5, 0.2, -0.1], [1.0, 0.3, 0.0], 15.0)
    fine = ray_trace(bump_medium, [0.5, 0.2, -0.1], [1.0, 0.3, 0.0], 15.0, step=0.025)
    assert ray.energy_drift < 1e-6
    # fourth-order method
    assert fine.energy_drift < ray.energy_drift / 10
    assert ray.escaped and ray.exit_time is not None
    with pytest.raises(ValueError):
        ray_trace(bump_medium, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], 1.0)


def test_sampled_rays_escape_for_weak_bump(bump_medium):
    rays = sample_rays(bump_medium, count=6, seed=1)
    assert all(r.escaped for r in rays)


def test_fdtd_time_zero_and_cfl(bump_medium, rng):
    Y = random_state(bump_medium.grid, rng)
    Z = evolve_fdtd(bump_medium, Y, 0.0)
    assert np.array_equal(Z.u, Y.u) and np.array_equal(Z.v, Y.v)
    with pytest.raises(ValueError):
        evolve_fdtd(bump_medium, Y, 1.0, cfl=0.8)
    with pytest.raises(ValueError):
        evolve_fdtd(bump_medium, Y, -1.0)


def test_fdtd_series_matches_single_runs(bump_medium, rng):
    Y = random_state(bump_medium.grid, rng)
    series = evolve_fdtd_series(bump_medium, Y, [0.5, 1.25])
    single = evolve_fdtd(bump_medium, evolve_fdtd(bump_medium, Y, 0.5), 0.75)
    assert np.allclose(series[-1].u, single.u, atol=1e-12) and np.allclose(series[-1].v, single.v, atol=1e-12)


def test_fdtd_staggered_energy_exact(bump_medium):
    g = bump_medium.grid
    r = g.radius()
    Y = StateVector(g, np.exp(-(r**2) / 4), np.zeros(g.shape))
    t = 3.0
    dt = fdtd_step(bump_medium, t)
    e0 = fdtd_energy(bump_medium, Y, dt)
    e1 = fdtd_energy(bump_medium, evolve_fdtd(bump_medium, Y, t), dt)
    assert e1 == pytest.approx(e0, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(t=st.floats(0.1, 4.0), seed=st.integers(0, 1000))
def test_fdtd_duality(t, seed):
    g = GridSpec(3, 16, 8.0)
    c = CoefficientField.from_bump(g, RadialBump(0.4, 1.8, (0.0, 0.0, 0.0), None, 0.3))
    r = np.random.default_rng(seed)
    Y, P = random_state(g, r), random_state(g, r)
    lhs = inner_product(evolve_fdtd(c, Y, t), P)
    rhs = inner_product(Y, adjoint_evolve_var(c, P, t))
    scale = math.sqrt(inner_product(Y, Y) * inner_product(P, P))
    assert abs(lhs - rhs) <= 1e-10 * scale


def test_fdtd_free_medium_approaches_exact():
    errs = []
    for N in (32, 64):
        g = GridSpec(3, N, 32.0)
        r = g.radius()
        Y = StateVector(g, np.exp(-(r**2) / (2 * 2.5**2)), np.zeros(g.shape))
        a = evolve_fdtd(CoefficientField.identity(g), Y, 4.0)
        b = evolve(Y, 4.0)
        errs.append(np.abs(a.u - b.u).max() / np.abs(b.u).max())
    # second-order stencil
    assert errs[1] < errs[0] / 3


def test_identity_wave_operator_is_exact():
    g = GridSpec(3, 32, 16.0)
    Psi = mollified_bump(g, 2.0, weights=(0.5, 1.0))
    W = wave_operator_approx(CoefficientField.identity(g), Psi, 4.0)
    assert np.abs(W.u - Psi.psi0).max() <= 1e-12 and np.abs(W.v - Psi.psi1).max() <= 1e-12
    with pytest.raises(GridError):
        wave_operator_approx(CoefficientField.identity(g), Psi, 20.0)


def test_cook_increments_vanish_in_free_medium():
    g = GridSpec(3, 32, 16.0)
    Psi = mollified_bump(g, 2.0)
    rows = cook_increments(CoefficientField.identity(g), Psi, [1.0, 2.0, 4.0])
    assert max(r["increment"] for r in rows) < 1e-12


def test_free_local_energy_drops_to_floor():
    g = GridSpec(3, 64, 32.0)
    r = g.radius()
    R = 3.0
    # odd smooth data: the x1 factor kills the slowly decaying spherical mean
    Y = StateVector(g, np.zeros(g.shape), g.coords()[0] * np.where(r < R, (1 - (r / R) ** 2) ** 4, 0.0))
    c = CoefficientField.identity(g)
    prof = local_energy_decay(c, Y, 2.0, [0.0, 2.0, 8.0, 12.0], R, solver="spectral")
    assert prof.norms[-1] < 1e-3 * prof.norms[0]
    with pytest.raises(ValueError):
        local_energy_decay(CoefficientField.from_bump(g, RadialBump(0.3, 3.0)), Y, 2.0, [0.0, 1.0], R, solver="spectral")
    with pytest.raises(GridError):
        local_energy_decay(c, Y, 2.0, [0.0, 40.0], R)


def test_trapping_contrast_slows_decay():
    g = GridSpec(3, 48, 24.0)
    r = g.radius()
    R = 3.0
    Y = StateVector(g, np.zeros(g.shape), g.coords()[0] * np.where(r < R, (1 - (r / R) ** 2) ** 4, 0.0))
    times = [0.0, 4.0, 8.0, 12.0]
    free = local_energy_decay(CoefficientField.identity(g), Y, 3.0, times, R)
    slow = CoefficientField.from_bump(g, RadialBump(-0.7, 4.0))
    held = local_energy_decay(slow, Y, 3.0, times, R)
    # a slow region holds energy longer than the free medium
    assert held.norms[-1] > 3 * free.norms[-1]
