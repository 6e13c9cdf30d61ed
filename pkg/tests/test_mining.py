"""Box prefilter and Newton intersection on constructed chart pairs."""

import numpy as np
import pytest

from fourbody.advection import Chart
from fourbody.mining import (
    FAR_THRESHOLD,
    box_overlap,
    newton_intersect,
    _edge_box,
    _overlap_matrix,
)
from fourbody.series import Taylor2

RNG = np.random.default_rng(31415)


def make_chart(coeffs, chart_id=0, tau=0.1, generation=1, base_time=0.0):
    return Chart(
        series=Taylor2(coeffs),
        tau=tau,
        generation=generation,
        chart_id=chart_id,
        parent_arc=0,
        angle_map=(0.0, 1.0),
        base_time=base_time,
    )


def crossing_pair(root=(0.3, 0.5, -0.2), w4u=0.5, w4s=0.5):
    """Unstable chart and stable chart meeting at the prescribed root."""
    s0, t0, g0 = root
    cu = np.zeros((4, 4, 4))
    cu[0, 0] = [0.1, 0.2, -0.1, 0.0]
    cu[0, 1, 0] = 1.0  # x = 0.1 + s
    cu[1, 0, 1] = 1.0  # xdot = 0.2 + t
    cu[1, 1, 2] = 1.0  # y = -0.1 + s t
    cu[0, 0, 3] = w4u
    cu[1, 1, 3] = 0.3  # mild variation in the fourth coordinate
    target = np.array(
        [0.1 + s0, 0.2 + t0, -0.1 + s0 * t0]
    )
    cs = np.zeros((3, 4, 4))
    # stable base arc: affine in sigma, passing through the target at g0
    slopes = np.array([0.7, -0.4, 0.9])
    cs[0, 0, :3] = target - slopes * g0
    cs[0, 1, :3] = slopes
    cs[0, 0, 3] = w4s
    cs[1, 0] = RNG.standard_normal(4) * 0.01  # irrelevant interior content
    return make_chart(cu, 1), make_chart(cs, 2)


def test_box_overlap_identical():
    box = np.array([[0.0, 1.0]] * 4)
    assert box_overlap(box, box)


def test_box_overlap_separated_coordinate():
    a = np.array([[0.0, 1.0]] * 4)
    b = np.array([[2.0, 3.0]] + [[0.0, 1.0]] * 3)
    assert not box_overlap(a, b, margin=0.0)


def test_box_soundness_random_pairs():
    # box_overlap false implies a positive dense-sample separation
    violations = 0
    for _ in range(10_000 // 10):
        ca = 0.2 * RNG.standard_normal((3, 3, 4))
        cb = 0.2 * RNG.standard_normal((3, 3, 4))
        cb[0, 0] += RNG.uniform(-1.5, 1.5, 4)
        a, b = make_chart(ca), make_chart(cb)
        if box_overlap(a.box, b.box, margin=0.0):
            continue
        sa = a.series(
            RNG.uniform(-1, 1, 40), RNG.uniform(-1, 1, 40)
        )
        sb = b.series(RNG.uniform(-1, 1, 40), RNG.uniform(-1, 1, 40))
        d = np.min(
            np.linalg.norm(sa[:, None, :] - sb[None, :, :], axis=2)
        )
        if d <= 0.0:
            violations += 1
    assert violations == 0


def test_box_contains_chart_values():
    c = 0.3 * RNG.standard_normal((5, 6, 4))
    chart = make_chart(c)
    vals = chart.series(RNG.uniform(-1, 1, 200), RNG.uniform(-1, 1, 200))
    assert np.all(vals >= chart.box[None, :, 0] - 1e-12)
    assert np.all(vals <= chart.box[None, :, 1] + 1e-12)


def test_overlap_matrix_matches_scalar():
    boxes_a = np.stack(
        [make_chart(0.2 * RNG.standard_normal((3, 3, 4))).box for _ in range(8)]
    )
    boxes_b = np.stack(
        [make_chart(0.2 * RNG.standard_normal((3, 3, 4))).box for _ in range(9)]
    )
    mat = _overlap_matrix(boxes_a, boxes_b, margin=1e-6)
    for i in range(8):
        for j in range(9):
            assert mat[i, j] == box_overlap(boxes_a[i], boxes_b[j], 1e-6)


def test_newton_recovers_constructed_root():
    cu, cs = crossing_pair()
    roots = newton_intersect(cu, cs)
    assert roots, "no root found"
    best = min(
        roots, key=lambda r: np.linalg.norm(np.array(r["root"]) - (0.3, 0.5, -0.2))
    )
    assert np.linalg.norm(np.array(best["root"]) - (0.3, 0.5, -0.2)) < 1e-10
    assert best["status"] == "certified"


def test_newton_pseudo_intersection_by_mirrored_fourth():
    cu, cs = crossing_pair(w4u=0.35, w4s=-0.35)
    rec = [
        r
        for r in newton_intersect(cu, cs)
        if np.linalg.norm(np.array(r["root"]) - (0.3, 0.5, -0.2)) < 1e-8
    ]
    assert rec and rec[0]["status"] == "pseudo"


def test_newton_ambiguous_near_zero_fourth():
    cu, cs = crossing_pair(w4u=1e-6, w4s=1e-6)
    # kill its fourth-coordinate variation so w4 stays tiny at the root
    c = np.array(cu.series.coeffs)
    c[1, 1, 3] = 0.0
    cu = make_chart(c, 1)
    rec = [
        r
        for r in newton_intersect(cu, cs)
        if np.linalg.norm(np.array(r["root"]) - (0.3, 0.5, -0.2)) < 1e-8
    ]
    assert rec and rec[0]["status"] == "ambiguous"


def test_newton_no_false_root_for_separated_charts():
    cu, _ = crossing_pair()
    far = np.zeros((3, 3, 4))
    far[0, 0] = [5.0, 5.0, 5.0, 5.0]
    cs = make_chart(far, 3)
    assert newton_intersect(cu, cs) == []


def test_edge_box_tighter_than_chart_box():
    c = 0.5 * RNG.standard_normal((6, 5, 4))
    chart = make_chart(c)
    eb = _edge_box(chart)
    assert np.all(eb[:, 0] >= chart.box[:, 0] - 1e-12)
    assert np.all(eb[:, 1] <= chart.box[:, 1] + 1e-12)
    # edge box still encloses the base edge values
    vals = chart.series(np.zeros(50), RNG.uniform(-1, 1, 50))
    assert np.all(vals >= eb[None, :, 0] - 1e-12)
    assert np.all(vals <= eb[None, :, 1] + 1e-12)
