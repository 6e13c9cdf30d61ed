"""Series composition of the vector field: oracles and cross-checks."""

import numpy as np
import pytest

from fourbody.crfbp import EQUAL_MASSES, equilibrium_named, primary_positions, vector_field, vector_field_jacobian
from fourbody.errors import SingularLeadingTermError
from fourbody.flow import flow
from fourbody.jets import (
    AdvectionJet,
    jacobian_series,
    power_series_1d,
    reciprocal_series_1d,
    vector_field_series,
)
from fourbody.series import Taylor2

RNG = np.random.default_rng(1234)
CFG = primary_positions(EQUAL_MASSES)


def small_series_near(state, M, N, scale=0.005, rng=RNG):
    c = scale * rng.standard_normal((M, N, 4))
    c[0, 0] = state
    return Taylor2(c)


def test_power_series_1d_binomial():
    w = np.zeros(12)
    w[0], w[1] = 1.0, 1.0
    q = power_series_1d(w, -1.5)
    ref = [1.0]
    for k in range(1, 12):
        ref.append(ref[-1] * (-1.5 - (k - 1)) / k)
    assert np.max(np.abs(q - np.array(ref))) < 1e-13


def test_reciprocal_series_1d():
    w = 0.2 * RNG.standard_normal(15)
    w[0] = 2.0
    r = reciprocal_series_1d(w)
    prod = np.convolve(w, r)[:15]
    unit = np.zeros(15)
    unit[0] = 1.0
    assert np.max(np.abs(prod - unit)) < 1e-13


def test_constant_series_at_equilibrium_maps_to_zero():
    c = np.zeros((5, 5, 4))
    f = vector_field_series(Taylor2(c), CFG)  # origin is the central point
    assert np.max(np.abs(f.coeffs)) < 1e-12


def test_field_series_eval_commutes_real():
    state = np.array([0.05, 0.02, -0.03, 0.01])
    gamma = small_series_near(state, 7, 7)
    f = vector_field_series(gamma, CFG)
    for _ in range(12):
        z1, z2 = RNG.uniform(-1, 1, 2) * 0.02
        lhs = f(z1, z2)
        rhs = vector_field(gamma(z1, z2), CFG)
        assert np.max(np.abs(lhs - rhs)) < 1e-11


def test_field_series_eval_commutes_complex():
    state = np.array([0.05, 0.02, -0.03, 0.01])
    c = 0.005 * (RNG.standard_normal((7, 7, 4)) + 1j * RNG.standard_normal((7, 7, 4)))
    c[0, 0] = state
    gamma = Taylor2(c)
    f = vector_field_series(gamma, CFG)
    z1 = 0.02 * np.exp(1j * 0.7)
    z2 = 0.015 * np.exp(-1j * 0.3)
    lhs = f(z1, z2)
    rhs_state = gamma(z1, z2)
    # evaluate the complex field by the same algebraic formulas
    x, xd, y, yd = rhs_state
    w = (x - CFG.positions[:, 0]) ** 2 + (y - CFG.positions[:, 1]) ** 2
    u = w**-1.5
    gx = x - np.sum(CFG.mass_values * (x - CFG.positions[:, 0]) * u)
    gy = y - np.sum(CFG.mass_values * (y - CFG.positions[:, 1]) * u)
    rhs = np.array([xd, 2 * yd + gx, yd, -2 * xd + gy])
    assert np.max(np.abs(lhs - rhs)) < 1e-11


def test_jacobian_series_constant_term():
    state = np.array([0.1, 0.0, -0.05, 0.02])
    gamma = small_series_near(state, 4, 4, scale=0.01)
    A = jacobian_series(gamma, CFG)
    ref = vector_field_jacobian(state, CFG)
    assert np.max(np.abs(A.coeffs[0, 0] - ref)) < 1e-12
    # finite-difference cross-check of the constant block
    h = 1e-6
    fd = np.zeros((4, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        fd[:, i] = (vector_field(state + e, CFG) - vector_field(state - e, CFG)) / (2 * h)
    assert np.max(np.abs(A.coeffs[0, 0] - fd)) < 1e-6


def test_jacobian_series_eval_commutes():
    state = np.array([0.05, 0.02, -0.03, 0.01])
    gamma = small_series_near(state, 7, 7)
    A = jacobian_series(gamma, CFG)
    z1, z2 = 0.015, -0.012
    lhs = A(z1, z2)
    rhs = vector_field_jacobian(gamma(z1, z2), CFG)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_field_series_singular_near_primary():
    c = np.zeros((3, 3, 4))
    c[0, 0] = np.array([CFG.positions[0, 0], 0.0, CFG.positions[0, 1], 0.0])
    with pytest.raises(SingularLeadingTermError):
        vector_field_series(Taylor2(c), CFG)


# ---------------------------------------------------------------------------
# advection jet


def test_advection_of_equilibrium_is_constant():
    eq = equilibrium_named(EQUAL_MASSES, "L0")
    arc = np.zeros((8, 4))
    arc[0] = eq.state
    jet = AdvectionJet(CFG, arc, M=12, tau=0.3)
    grid = jet.run()
    assert grid is not None
    assert np.max(np.abs(grid[1:])) < 1e-13
    assert np.max(np.abs(grid[0] - arc)) == 0.0


def test_advection_matches_reference_integration():
    # analytic arc of initial conditions near the central point
    arc = np.zeros((20, 4))
    arc[0] = np.array([0.30, 0.05, 0.20, -0.02])
    arc[1] = np.array([0.02, 0.005, -0.015, 0.003])
    arc[2] = np.array([-0.003, 0.00, 0.005, 0.002])
    tau = 0.05
    grid = AdvectionJet(CFG, arc, M=30, tau=tau).run()
    chart = Taylor2(grid)
    for s0 in np.linspace(-1, 1, 7):
        y0 = Taylor2(arc[None, :, :])(0.0, s0)
        ref = flow(y0, tau, CFG)
        val = chart(1.0, s0)  # t = 1 edge corresponds to elapsed time tau
        assert np.max(np.abs(val - ref)) < 1e-10


def test_advection_field_blocks_match_diag_engine():
    arc = 0.01 * RNG.standard_normal((6, 4))
    arc[0] += np.array([0.3, 0.0, 0.25, 0.0])
    M = 8
    grid = AdvectionJet(CFG, arc, M=M, tau=0.05).run()
    chart = Taylor2(grid)
    f = vector_field_series(chart, CFG)
    # d/dt Gamma = tau * f(Gamma) as a coefficient identity
    m = np.arange(1, M)[:, None, None]
    lhs = grid[1:] * m
    rhs = 0.05 * f.coeffs[: M - 1]
    assert np.max(np.abs(lhs - rhs)) < 1e-11


def test_advection_tau_rescaling_law():
    arc = 0.01 * RNG.standard_normal((8, 4))
    arc[0] += np.array([0.28, 0.02, 0.22, -0.01])
    g1 = AdvectionJet(CFG, arc, M=12, tau=0.1).run()
    g2 = AdvectionJet(CFG, arc, M=12, tau=0.05).run()
    m = np.arange(12).reshape(-1, 1, 1)
    scaled = g1 / 2.0**m
    mask = np.abs(g1) > 1e-300
    rel = np.abs(g2 - scaled)[mask] / np.maximum(np.abs(scaled[mask]), 1e-30)
    assert np.max(rel) < 1e-12
