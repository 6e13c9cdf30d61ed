"""Acceptance gates: one pass/fail line per criterion.

Heavy artifacts (production manifolds, atlases, the mined connection set,
continuations) are built once per session and shared by the criteria that
need them.  Expect a wall-clock on the order of tens of minutes for the
full module; criteria 1-5 alone run in seconds.
"""

import numpy as np
import pytest

from fourbody import series as fs
from fourbody.advection import BoundaryArc
from fourbody.atlas import (
    AtlasParams,
    charts_up_to_time,
    grow,
    new_atlas,
    remesh,
    symmetry_expand,
)
from fourbody.connections import (
    ContinuationControls,
    continue_ensemble,
    order_connections,
    reconverge,
    refine,
    rotate_connection,
    winding_vector,
)
from fourbody.crfbp import (
    EQUAL_MASSES,
    MassParameters,
    classify_stability,
    equilibrium_named,
    find_equilibria,
    jacobi_integral,
    primary_positions,
    rotation_matrix,
    vector_field,
)
from fourbody.flow import flow, sample_orbit
from fourbody.manifold import (
    conjugacy_error,
    defect,
    linear_manifold,
    newton_refine,
    pseudo_newton_refine,
    solve_manifold,
    solve_recursion,
)
from fourbody.series import Taylor1, Taylor2

RNG = np.random.default_rng(20260809)
CFG = primary_positions(EQUAL_MASSES)


def report(criterion: int, ok: bool, detail: str):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# -- criterion 1: model correctness ------------------------------------------


def test_criterion_1_model_correctness():
    expected = np.array(
        [
            [-np.sqrt(3.0) / 3.0, 0.0],
            [np.sqrt(3.0) / 6.0, -0.5],
            [np.sqrt(3.0) / 6.0, 0.5],
        ]
    )
    pos_err = np.max(np.abs(CFG.positions - expected))

    R = rotation_matrix(+1)
    states = []
    while len(states) < 1000:
        s = RNG.uniform(-1.4, 1.4, 4)
        r = np.hypot(s[0] - CFG.positions[:, 0], s[2] - CFG.positions[:, 1])
        if np.min(r) > 0.05:
            states.append(s)
    states = np.array(states)
    comm = np.max(
        np.abs(vector_field(states @ R.T, CFG) - vector_field(states, CFG) @ R.T)
    )

    drift = 0.0
    n_orbits = 0
    while n_orbits < 20:
        s = RNG.uniform(-0.8, 0.8, 4) * np.array([1, 0.5, 1, 0.5])
        r = np.hypot(s[0] - CFG.positions[:, 0], s[2] - CFG.positions[:, 1])
        if np.min(r) < 0.25:
            continue
        e0 = jacobi_integral(s, CFG)
        try:
            _, orbit = sample_orbit(s, (0.0, 5.0), CFG, 26)
        except Exception:
            continue
        r_orbit = np.min(
            np.hypot(
                orbit[:, None, 0] - CFG.positions[None, :, 0],
                orbit[:, None, 2] - CFG.positions[None, :, 1],
            )
        )
        if r_orbit < 0.05:
            continue  # close approaches are excluded by the collision guard
        drift = max(drift, np.max(np.abs(jacobi_integral(orbit, CFG) - e0) / abs(e0)))
        n_orbits += 1

    ok = pos_err < 1e-13 and comm <= 1e-12 and drift <= 1e-10
    report(
        1,
        ok,
        f"positions {pos_err:.1e} (<1e-13), symmetry {comm:.1e} (<=1e-12), "
        f"energy drift {drift:.1e} (<=1e-10 over {n_orbits} orbits)",
    )


# -- criterion 2: equilibria and stability -----------------------------------


def test_criterion_2_equilibria():
    eqs = find_equilibria(EQUAL_MASSES)
    by_label = {e.label: e for e in eqs}
    focus = {"L0", "L4", "L5", "L6"}
    classes_ok = all(
        classify_stability(by_label[lab]) == "saddle-focus" for lab in focus
    ) and all(
        classify_stability(by_label[f"L{k}"]) == "saddle-center"
        for k in (1, 2, 3, 7, 8, 9)
    )
    eqs45 = find_equilibria(MassParameters(0.45, 0.275, 0.275))
    lost = {e.label: e for e in eqs45}["L0"].stability != "saddle-focus"
    ok = len(eqs) == 10 and classes_ok and lost
    report(
        2,
        ok,
        f"{len(eqs)} equilibria (want 10), classes {'ok' if classes_ok else 'WRONG'}, "
        f"L0 at m1=0.45 {'lost' if lost else 'KEPT'} saddle-focus",
    )


# -- criterion 3: parameterization quality -----------------------------------


def test_criterion_3_parameterization(l0):
    man = solve_manifold(l0, "stable", 25)
    d = defect(man)
    c = conjugacy_error(man)
    rec = solve_recursion(l0, "stable", 0.1, 16)
    seed = linear_manifold(l0, "stable", 0.1, 16)
    newt = newton_refine(seed, 16)
    pseu = pseudo_newton_refine(seed, 16)
    agree = max(
        np.max(np.abs(newt.P.coeffs - rec.P.coeffs)),
        np.max(np.abs(pseu.P.coeffs - rec.P.coeffs)),
    )
    ok = d <= 1e-13 and c <= 1e-12 and agree <= 1e-11
    report(
        3,
        ok,
        f"N=25 defect {d:.2e} (<=1e-13), conjugacy {c:.2e} (<=1e-12), "
        f"solver agreement {agree:.2e} (<=1e-11)",
    )


# -- criterion 4: series kernel ----------------------------------------------


def test_criterion_4_series_kernel():
    c = np.zeros((11, 11))
    c[0, 0] = 1.0
    c[1, 0] = 1.0
    q = fs.fractional_power(Taylor2(c), -1.5)
    ref = [1.0]
    for k in range(1, 11):
        ref.append(ref[-1] * (-1.5 - (k - 1)) / k)
    binom_err = np.max(np.abs(q.coeffs[:, 0] - np.array(ref)))

    pow_err = 0.0
    for _ in range(20):
        c = 0.05 * RNG.standard_normal((8, 8))
        c[0, 0] = RNG.uniform(1.0, 2.0)
        p = Taylor2(c)
        q = fs.fractional_power(p, -1.5)
        z1 = 0.04 * RNG.uniform(-1, 1, 20)
        z2 = 0.04 * RNG.uniform(-1, 1, 20)
        pow_err = max(pow_err, np.max(np.abs(q(z1, z2) - p(z1, z2) ** -1.5)))

    prod_err = 0.0
    for _ in range(100):
        a = Taylor2(RNG.standard_normal((10, 10)))
        b = Taylor2(RNG.standard_normal((10, 10)))
        prod = fs.cauchy_product(a, b, degrees=(19, 19))
        z1 = RNG.uniform(-1, 1, 10)
        z2 = RNG.uniform(-1, 1, 10)
        prod_err = max(
            prod_err, np.max(np.abs(prod(z1, z2) - a(z1, z2) * b(z1, z2)))
        )
    ok = binom_err < 1e-13 and pow_err < 1e-13 and prod_err < 1e-13
    report(
        4,
        ok,
        f"binomial {binom_err:.2e}, pointwise power {pow_err:.2e}, "
        f"cauchy product {prod_err:.2e} (all <1e-13)",
    )


# -- criterion 5: tail-ratio control ------------------------------------------


def test_criterion_5_tail_ratio_control(manifolds45):
    man_u, _ = manifolds45
    params = AtlasParams(symmetric=True, boundary_arcs=10)
    atlas = new_atlas(man_u, params)
    eps, cutoff = 1e-10, 10
    worst_eval = 0.0
    count = 0
    for k in range(50):
        rate = 0.5 + 0.0095 * k
        c = np.zeros((20, 4))
        c[:, 0] = rate ** np.arange(20)
        c[:, 1] = (-rate) ** np.arange(20) * 0.5
        c[:, 2] = rate ** np.arange(20) * 0.25
        c[0] += 1.0
        arc = BoundaryArc(
            series=Taylor1(c),
            generation=0,
            arc_id=atlas.new_arc_id(),
            parent_chart=None,
            angle_map=(0.0, 1.0),
            time_from_manifold=0.0,
        )
        atlas.register_arc(arc)
        pieces = remesh(atlas, arc, eps=eps, cutoff=cutoff)
        assert pieces, f"arc {k} fully retired"
        for piece in pieces:
            count += 1
            assert fs.tail_ratio(piece.series, cutoff) < eps
            a, b = piece.angle_map
            s = np.linspace(-1, 1, 7)
            worst_eval = max(
                worst_eval,
                float(np.max(np.abs(piece.series(s) - arc.series(a + b * s)))),
            )
    ok = worst_eval < 1e-12 and not atlas.retired
    report(
        5,
        ok,
        f"50 steep arcs -> {count} subarcs, all below eps=1e-10, "
        f"evaluation agreement {worst_eval:.1e} (<1e-12)",
    )


# -- criterion 6: advection fidelity ------------------------------------------


def test_criterion_6_advection_fidelity(atlas_k3):
    e0 = jacobi_integral(atlas_k3.manifold.equilibrium.state, CFG)
    worst = 0.0
    drift = 0.0
    for gen in atlas_k3.generations[:3]:
        for chart in gen:
            parent = atlas_k3.arcs_by_id[chart.parent_arc]
            svals = np.linspace(-1, 1, 20)
            vals = chart.series(np.ones(20), svals)
            for s0, val in zip(svals, vals):
                ref = flow(parent.eval(s0), chart.tau, CFG)
                worst = max(worst, float(np.linalg.norm(val - ref)))
                drift = max(
                    drift, abs(jacobi_integral(val, CFG) - e0) / abs(e0)
                )
    ok = worst < 1e-10 and drift <= 1e-9
    report(
        6,
        ok,
        f"chart vs reference {worst:.2e} (<1e-10) at 20 samples/chart over 3 "
        f"generations, energy drift {drift:.2e} (<=1e-9)",
    )


# -- criterion 7: atlas scale ------------------------------------------------


def test_criterion_7_atlas_scale(atlas_k3):
    n_qtr = charts_up_to_time(atlas_k3, 0.25)
    n_one = atlas_k3.chart_count()
    ok = 39 / 2 <= n_qtr <= 39 * 2 and 700 / 2 <= n_one <= 700 * 2
    report(
        7,
        ok,
        f"chart counts: {n_qtr} at T=0.25 (reported 39), "
        f"{n_one} at T=1.0 (reported 700); factor-2 windows",
    )


# -- criterion 8: connection recovery -----------------------------------------


REPORTED_TIMES = (1.717, 2.331, 4.198, 4.520, 4.715)
# winding signatures of the five shortest connections, as (sorted |alpha|,
# sorted |beta|); rotation of an orbit permutes centers, so magnitudes
# sorted per block are the invariant classifier
REPORTED_SIGNATURES = (
    ((0, 0, 1), (0, 0, 0)),
    ((0, 0, 0), (0, 0, 1)),
    ((0, 1, 1), (0, 0, 0)),
    ((0, 0, 1), (0, 0, 1)),
    ((0, 0, 0), (0, 0, 2)),
)


def signature(winding):
    a = tuple(sorted(abs(w) for w in winding[:3]))
    b = tuple(sorted(abs(w) for w in winding[3:]))
    return (a, b)


def test_criterion_8_connection_recovery(l0_connections):
    homs = l0_connections["homoclinics"]
    n_distinct = len(homs)
    sigs = [signature(h.winding) for h in homs]
    # the reported five must appear in time order (symmetric twins with
    # equal times may interleave at their shared time)
    idx = 0
    matched = []
    for h, s in zip(homs, sigs):
        if idx < 5 and s == REPORTED_SIGNATURES[idx]:
            matched.append(h)
            idx += 1
    order_ok = idx == 5
    time_dev = (
        max(
            abs(h.connection_time - t)
            for h, t in zip(matched, REPORTED_TIMES)
        )
        if order_ok
        else float("inf")
    )
    soft_ok = time_dev <= 5e-2
    ok = n_distinct >= 5 and order_ok
    report(
        8,
        ok,
        f"{n_distinct} certified orbits (>=5); winding/order "
        f"{'match' if order_ok else 'MISMATCH'} rows 1-5; time deviation "
        f"{time_dev:.3f} (soft check <=0.05: {'ok' if soft_ok else 'EXCEEDED'})",
    )
    if not soft_ok:
        import warnings

        warnings.warn(f"soft time check exceeded: {time_dev:.3f} > 0.05")


# -- criterion 9: refinement --------------------------------------------------


def test_criterion_9_refinement(l0_connections, manifolds45):
    man_u, man_s = manifolds45
    homs = l0_connections["homoclinics"]
    max_resid = max(h.residual for h in homs)
    cand = [c for c in l0_connections["candidates"] if c.status == "certified"][0]
    h10 = refine(cand, man_u, man_s, segments=10)
    h20 = refine(cand, man_u, man_s, segments=20)
    t_dev = abs(h10.connection_time - h20.connection_time)
    iters = []
    for sign in (+1, -1):
        rot = rotate_connection(homs[0], sign, man_u, man_s)
        iters.append(rot.newton_iterations)
    ok = max_resid <= 1e-11 and t_dev <= 1e-9 and max(iters) <= 3
    report(
        9,
        ok,
        f"max shooting residual {max_resid:.2e} (<=1e-11), node-count "
        f"T-invariance {t_dev:.2e} (<=1e-9), symmetric counterparts in "
        f"{max(iters)} Newton iterations (<=3)",
    )


# -- criterion 10: continuation -----------------------------------------------


def test_criterion_10a_l0a_family(l0_connections, manifolds45):
    man_u, man_s = manifolds45
    homs = l0_connections["homoclinics"]
    l0a = [homs[0]]
    run = continue_ensemble(
        l0a, man_u, man_s, [(0.415, 0.2425)], ContinuationControls(step=0.05)
    )
    reached = run.parameters[-1]
    max_res = max(max(o.get("residuals", [0.0])) for o in run.outcomes)
    ok = (
        run.connections
        and abs(reached[0] - 0.415) < 1e-9
        and abs(reached[1] - 0.2425) < 1e-9
        and max_res <= 1e-10
    )
    report(
        10,
        bool(ok),
        f"L0A family continued to (m1, m3) = ({reached[0]:.4f}, {reached[1]:.4f}) "
        f"target (0.415, 0.2425); max residual {max_res:.2e} (<=1e-10); "
        f"status: {run.status}",
    )


def test_criterion_10b_l5_ensemble(l5_letters):
    man_u, man_s, homs = l5_letters
    letters = homs[:6]
    assert len(letters) >= 6, f"only {len(letters)} L5 connections mined"
    run = continue_ensemble(
        letters,
        man_u,
        man_s,
        [(0.89, 0.01)],
        ContinuationControls(step=0.02),
    )
    m1_reached = run.parameters[-1][0]
    ok = m1_reached >= 0.6 and len(run.connections) > 0
    report(
        10,
        ok,
        f"L5 letter ensemble reached m1 = {m1_reached:.4f} (>=0.6 required; "
        f"full path to 0.89 is a stretch goal); {len(run.connections)} of "
        f"{len(letters)} connections alive; status: {run.status}",
    )
