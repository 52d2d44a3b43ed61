import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavemix.grid import (
    GridError,
    GridSpec,
    SpectralField,
    StateVector,
    TestFunction,
    TrigInterpolant,
    forward_transform,
    gradient,
    inner_product,
    inverse_transform,
    irfft,
    local_energy_seminorm,
    mollified_bump,
    polynomial_bump,
    rfft,
    weighted_norm,
)

from conftest import random_state


@pytest.mark.parametrize("n,N,L", [(2, 16, 1.0), (3, 15, 1.0), (3, 16, 0.0), (3, 16, -2.0), (1, 16, 1.0)])
def test_gridspec_rejects_bad_shapes(n, N, L):
    with pytest.raises(GridError):
        GridSpec(n, N, L)


def test_wavevector_lattice(grid16):
    k = grid16.axis_wavenumbers
    assert 0.0 in k
    m = np.round(k / grid16.dk).astype(int)
    assert sorted(m) == list(range(-8, 8))
    # closed under negation except the Nyquist entry
    assert set(-m) - set(m) == {8}


@pytest.mark.parametrize("c", [1.0, -2.5, 3.0])
def test_constant_field_maps_to_zero_mode(c):
    # unit spacing makes h^n N^n = N^n
    g = GridSpec(3, 8, 8.0)
    F = forward_transform(np.full(g.shape, c), g).coefficients
    assert F[0, 0, 0] == pytest.approx(c * g.N**3)
    F[0, 0, 0] = 0
    assert np.abs(F).max() < 1e-9


def test_constant_field_general_spacing_scales_with_volume():
    g = GridSpec(3, 8, 4.0)
    F = forward_transform(np.full(g.shape, 2.0), g).coefficients
    assert F[0, 0, 0] == pytest.approx(2.0 * g.volume)


def test_single_cosine_has_two_coefficients(grid16):
    x = grid16.coords()[0]
    f = np.broadcast_to(np.cos(2 * np.pi * x / grid16.L), grid16.shape)
    F = np.abs(forward_transform(f, grid16).coefficients)
    nz = np.argwhere(F > 1e-9 * F.max())
    assert sorted(map(tuple, nz)) == [(1, 0, 0), (15, 0, 0)]


def test_parseval_against_direct_sum(grid16, rng):
    f = rng.standard_normal(grid16.shape)
    F = forward_transform(f, grid16).coefficients
    nodal = (f**2).sum() * grid16.cell_volume
    spectral = (np.abs(F) ** 2).sum() / grid16.volume
    assert spectral == pytest.approx(nodal, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), N=st.sampled_from([4, 8, 12]), L=st.floats(0.5, 50.0))
def test_round_trip_identity(seed, N, L):
    g = GridSpec(3, N, L)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    back = inverse_transform(forward_transform(f, g))
    assert np.abs(back - f).max() <= 1e-12 * np.abs(f).max()


def test_real_transforms_match_complex(grid16, rng):
    f = rng.standard_normal(grid16.shape)
    F = forward_transform(f, grid16).coefficients
    assert np.allclose(rfft(f, grid16), F[..., : grid16.N // 2 + 1], rtol=1e-12, atol=1e-12)
    assert np.allclose(irfft(rfft(f, grid16), grid16), f, atol=1e-12)


def test_transform_of_real_field_is_hermitian(grid16, rng):
    F = forward_transform(rng.standard_normal(grid16.shape), grid16)
    assert F.is_hermitian()
    assert not SpectralField(grid16, F.coefficients * 1j + 1.0).is_hermitian()


def test_transform_shape_mismatch(grid16):
    with pytest.raises(GridError):
        forward_transform(np.zeros((4, 4, 4)), grid16)


def test_spectral_gradient_of_sine(grid16):
    x = grid16.coords()[0]
    u = np.broadcast_to(np.sin(2 * np.pi * x / grid16.L), grid16.shape).copy()
    gx, gy, gz = gradient(u, grid16)
    exact = 2 * np.pi / grid16.L * np.cos(2 * np.pi * x / grid16.L)
    assert np.abs(gx - exact).max() < 1e-12
    assert np.abs(gy).max() < 1e-12 and np.abs(gz).max() < 1e-12


def test_inner_product_matches_loop(grid16, rng):
    Y, P = random_state(grid16, rng), random_state(grid16, rng)
    direct = 0.0
    for idx in np.ndindex(*grid16.shape):
        direct += Y.u[idx] * P.u[idx] + Y.v[idx] * P.v[idx]
    assert inner_product(Y, P) == pytest.approx(direct * grid16.cell_volume, rel=1e-12)


def test_inner_product_trivial_cases(grid16, rng):
    Y = random_state(grid16, rng)
    zero = TestFunction(grid16, np.zeros(grid16.shape), np.zeros(grid16.shape), 1.0)
    assert inner_product(Y, zero) == 0.0
    # unit L2 mass per component gives 2
    b = mollified_bump(grid16, 4.0)
    s = 1.0 / math.sqrt((b.psi0**2).sum() * grid16.cell_volume)
    unit = b.scaled(s)
    assert inner_product(unit.as_state(), unit) == pytest.approx(2.0, rel=1e-12)


def test_inner_product_grid_mismatch(grid16, rng):
    other = GridSpec(3, 8, 16.0)
    with pytest.raises(GridError):
        inner_product(random_state(grid16, rng), random_state(other, rng))


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_inner_product_bilinear_and_symmetric(a, b, seed):
    g = GridSpec(3, 4, 4.0)
    r = np.random.default_rng(seed)
    X, Y, P = (random_state(g, r) for _ in range(3))
    lhs = inner_product(X * a + Y * b, P)
    rhs = a * inner_product(X, P) + b * inner_product(Y, P)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
    assert inner_product(X, P) == pytest.approx(inner_product(P, X), rel=1e-14)


def test_local_energy_of_unit_velocity_is_ball_volume():
    g = GridSpec(3, 64, 32.0)
    Y = StateVector(g, np.zeros(g.shape), np.ones(g.shape))
    R = 6.0
    # O(h) boundary error on the node count
    assert local_energy_seminorm(Y, R) == pytest.approx(4 / 3 * math.pi * R**3, rel=0.05)


def test_local_energy_single_mode_closed_form():
    g = GridSpec(3, 64, 32.0)
    L = g.L
    x = g.displacement()[0]
    kx = 2 * np.pi / L
    u = np.broadcast_to(np.sin(kx * x), g.shape).copy()
    R = L / 4
    got = local_energy_seminorm(StateVector(g, u, np.zeros(g.shape)), R)
    # integrand sin^2(kx x) + kx^2 cos^2(kx x); the ball integral of cos(q x) is
    # 4 pi (sin qR - qR cos qR) / q^3
    q = 2 * kx
    ball_cos = 4 * np.pi * (math.sin(q * R) - q * R * math.cos(q * R)) / q**3
    sin2 = 0.5 * (4 / 3 * math.pi * R**3 - ball_cos)
    cos2 = 0.5 * (4 / 3 * math.pi * R**3 + ball_cos)
    exact = sin2 + kx**2 * cos2
    assert got == pytest.approx(exact, rel=0.01)


def test_local_energy_zero_and_range(grid16):
    assert local_energy_seminorm(StateVector.zeros(grid16), 3.0) == 0.0
    with pytest.raises(GridError):
        local_energy_seminorm(StateVector.zeros(grid16), 8.0)


def test_local_energy_monotone_in_radius(grid16, rng):
    Y = random_state(grid16, rng)
    vals = [local_energy_seminorm(Y, R) for R in (1.0, 2.0, 3.5, 5.0, 7.9)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_weighted_norm_unit_velocity_matches_quadrature():
    g = GridSpec(3, 16, 16.0)
    delta = 0.2
    Y = StateVector(g, np.zeros(g.shape), np.ones(g.shape))
    oracle = 0.0
    for idx in np.ndindex(*g.shape):
        x = np.array([g.axis_coords[i] for i in idx])
        oracle += math.exp(-2 * delta * np.linalg.norm(x)) * g.cell_volume
    assert weighted_norm(Y, delta) ** 2 == pytest.approx(oracle, rel=1e-6)


def test_weighted_norm_approaches_continuum_integral():
    delta = 0.2
    vals = []
    for N in (16, 32, 64):
        g = GridSpec(3, N, 16.0)
        vals.append(weighted_norm(StateVector(g, np.zeros(g.shape), np.ones(g.shape)), delta) ** 2)
    # kink at the origin: second-order convergence of the node sum
    e1, e2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert e2 < e1 / 3


def test_weighted_norm_monotone_and_errors(grid16, rng):
    Y = random_state(grid16, rng)
    assert weighted_norm(Y, 0.05) >= weighted_norm(Y, 0.3)
    assert weighted_norm(StateVector.zeros(grid16), 0.1) == 0.0
    with pytest.raises(GridError):
        weighted_norm(Y, 0.0)


def test_test_function_validation(grid16):
    z = np.zeros(grid16.shape)
    with pytest.raises(GridError):
        TestFunction(grid16, z, z, 8.0)
    with pytest.raises(GridError):
        TestFunction(grid16, np.zeros((2, 2, 2)), z, 1.0)


@pytest.mark.parametrize("builder", [mollified_bump, polynomial_bump])
def test_bumps_respect_declared_support(builder):
    g = GridSpec(3, 32, 16.0)
    Psi = builder(g, 3.0, center=(1.0, -2.0, 0.5), weights=(1.0, 2.0), pad_cells=2)
    assert Psi.support_radius == pytest.approx(3.0 + 2 * g.h)
    assert Psi.tail_fraction() == 0.0
    assert np.allclose(Psi.psi1, 2 * Psi.psi0)


def test_trig_interpolant_reproduces_nodes_and_gradient():
    g = GridSpec(3, 16, 2 * np.pi)
    X = g.coords()
    f = np.cos(X[0] + 2 * X[1]) + np.sin(3 * X[2]) + 0 * X[0]
    f = np.broadcast_to(f, g.shape)
    I = TrigInterpolant(f, g)
    assert I.n_modes == 4
    pts = np.array([[0.3, -1.2, 2.0], [1.0, 1.0, 1.0]])
    exact = np.cos(pts[:, 0] + 2 * pts[:, 1]) + np.sin(3 * pts[:, 2])
    assert np.allclose(I(pts), exact, atol=1e-13)
    grad = I.gradient(pts)
    s = -np.sin(pts[:, 0] + 2 * pts[:, 1])
    assert np.allclose(grad, np.stack([s, 2 * s, 3 * np.cos(3 * pts[:, 2])], axis=1), atol=1e-12)
