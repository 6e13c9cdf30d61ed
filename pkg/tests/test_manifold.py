"""Local manifold solvers, error indicators, and the scaling heuristic."""

import numpy as np
import pytest

from fourbody.crfbp import EQUAL_MASSES, equilibrium_named, primary_positions
from fourbody.flow import flow
from fourbody.manifold import (
    LocalManifold,
    choose_scaling,
    conjugacy_error,
    defect,
    layer_max_norms,
    linear_manifold,
    newton_refine,
    pseudo_newton_refine,
    rescale,
    solve_manifold,
    solve_recursion,
)


@pytest.fixture(scope="module")
def l0():
    return equilibrium_named(EQUAL_MASSES, "L0")


@pytest.fixture(scope="module")
def stable_25(l0):
    scale = choose_scaling(l0, "stable", 25)
    return solve_recursion(l0, "stable", scale, 25)


def test_first_order_block_is_scaled_eigenvector(l0):
    man = solve_recursion(l0, "stable", 0.05, 6)
    lam, xi = l0.stable_pair()
    assert np.max(np.abs(man.P.coeffs[0, 0] - l0.state)) < 1e-14
    assert np.max(np.abs(man.P.coeffs[1, 0] - 0.05 * xi)) < 1e-14
    assert np.max(np.abs(man.P.coeffs[0, 1] - 0.05 * np.conj(xi))) < 1e-14


def test_conjugate_symmetry(stable_25):
    assert stable_25.conj_symmetry_defect() < 1e-13


def test_real_trace(stable_25):
    assert stable_25.real_trace_defect(K=128) < 1e-11


def test_defect_order_25_heuristic_scale(stable_25):
    # reported defect at this configuration is 1.6e-15; allow slack
    assert defect(stable_25) <= 1e-13


def test_conjugacy_error_order_25(stable_25):
    assert conjugacy_error(stable_25) <= 1e-12


def test_defect_tiny_scale_order_one(l0):
    man = linear_manifold(l0, "stable", 1e-8, 1)
    assert defect(man, sum_order=6) < 5e-14


def test_defect_unit_scale_order_one_is_large(l0):
    man = linear_manifold(l0, "stable", 1.0, 1)
    d = defect(man, sum_order=6)
    assert 1.0 < d < 1e3


def test_newton_zero_correction_at_solution(l0):
    man = solve_recursion(l0, "stable", 0.1, 12)
    refined = newton_refine(man, 12)
    assert np.max(np.abs(refined.P.coeffs - man.P.coeffs)) < 1e-13


def test_pseudo_newton_zero_correction_at_solution(l0):
    man = solve_recursion(l0, "stable", 0.1, 12)
    refined = pseudo_newton_refine(man, 12)
    assert np.max(np.abs(refined.P.coeffs - man.P.coeffs)) < 1e-13


def test_three_solvers_agree(l0):
    scale = 0.1
    N = 16
    rec = solve_recursion(l0, "stable", scale, N)
    seed = linear_manifold(l0, "stable", scale, N)
    newt = newton_refine(seed, N)
    pseu = pseudo_newton_refine(seed, N)
    assert np.max(np.abs(newt.P.coeffs - rec.P.coeffs)) < 1e-11
    assert np.max(np.abs(pseu.P.coeffs - rec.P.coeffs)) < 1e-11


def test_newton_from_linear_seed_reaches_small_defect(l0):
    scale = choose_scaling(l0, "stable", 20)
    seed = linear_manifold(l0, "stable", scale, 20)
    man = newton_refine(seed, 20)
    assert defect(man) <= 1e-13


def test_hybrid_probe_production_split(l0):
    man = solve_manifold(l0, "stable", 25)
    assert layer_max_norms(man)[25] <= 1e-13
    assert defect(man) <= 1e-13


def test_rescaling_covariance(l0):
    man = solve_recursion(l0, "stable", 0.05, 10)
    man2 = solve_recursion(l0, "stable", 0.10, 10)
    doubled = rescale(man, 2.0)
    mask = np.abs(man2.P.coeffs) > 1e-250
    rel = np.abs(doubled.P.coeffs - man2.P.coeffs)[mask] / np.abs(man2.P.coeffs[mask])
    assert np.max(rel) < 1e-12


def test_choose_scaling_band(l0):
    scale = choose_scaling(l0, "stable", 25)
    man = solve_recursion(l0, "stable", scale, 25)
    assert layer_max_norms(man)[25] <= 1e-13


def test_unstable_side_solves_same_equation(l0):
    man = solve_manifold(l0, "unstable", 15)
    assert man.lam.real > 0
    assert defect(man) <= 1e-12
    assert conjugacy_error(man) <= 1e-11


def test_flow_containment_stable_side(l0):
    man = solve_manifold(l0, "stable", 25)
    cfg = man.cfg
    lam = man.lam
    rng = np.random.default_rng(5)
    t_final = 3.0
    for th in rng.uniform(0, 2 * np.pi, 12):
        z = np.exp(1j * th)
        x0 = man.eval_real(z)
        xf = flow(x0, t_final, cfg)
        target = man.eval_real(np.exp(lam * t_final) * z)
        assert np.linalg.norm(xf - target) < 1e-9
        # contraction toward the equilibrium in a windowed-average sense
        times = np.linspace(0.0, t_final, 7)
        dists = []
        x = x0
        for t0, t1 in zip(times[:-1], times[1:]):
            dists.append(np.linalg.norm(x - l0.state))
            x = flow(x, t1 - t0, cfg)
        avg_first = np.mean(dists[:3])
        avg_last = np.mean(dists[-3:])
        assert avg_last < avg_first


def test_manifolds_at_l5(l0):
    eq = equilibrium_named(EQUAL_MASSES, "L5")
    man = solve_manifold(eq, "unstable", 15)
    assert defect(man) <= 1e-12
