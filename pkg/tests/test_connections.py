"""Winding arithmetic and connection ordering on synthetic data.

Shooting refinement and continuation against real mined candidates run in
the acceptance module; here the pieces are exercised in isolation.
"""

import numpy as np
import pytest

from fourbody.connections import (
    Homoclinic,
    _winding_of_polyline,
    order_connections,
)
from fourbody.crfbp import EQUAL_MASSES
from fourbody.errors import FourBodyError


def circle_loop(center, radius, n=500, turns=1, orientation=+1):
    th = np.linspace(0, 2 * np.pi * turns * orientation, n)
    return np.stack(
        [center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)],
        axis=1,
    )


def test_winding_of_circle_about_inside_point():
    loop = circle_loop((0.5, -0.2), 0.3)
    w = _winding_of_polyline(loop, np.array([0.5, -0.2]))
    assert abs(w - 1.0) < 1e-12
    w_off = _winding_of_polyline(loop, np.array([0.55, -0.15]))
    assert abs(w_off - 1.0) < 1e-12


def test_winding_of_circle_about_outside_point():
    loop = circle_loop((0.5, -0.2), 0.3)
    w = _winding_of_polyline(loop, np.array([1.5, 0.0]))
    assert abs(w) < 1e-12


def test_winding_orientation_and_multiplicity():
    loop = circle_loop((0.0, 0.0), 1.0, n=2000, turns=3, orientation=-1)
    w = _winding_of_polyline(loop, np.array([0.0, 0.0]))
    assert abs(w + 3.0) < 1e-10


def test_winding_guard_near_center():
    loop = circle_loop((0.0, 0.0), 1e-8)
    with pytest.raises(FourBodyError):
        _winding_of_polyline(loop, np.array([0.0, 0.0]))


def hom_stub(T, label=""):
    return Homoclinic(
        label=label,
        phi_unstable=0.0,
        phi_stable=0.0,
        connection_time=T,
        nodes=np.zeros((2, 4)),
        durations=np.array([T]),
        residual=0.0,
        energy=0.0,
        masses=EQUAL_MASSES,
    )


def test_order_connections_singleton():
    h = hom_stub(1.0)
    assert order_connections([h]) == [h]


def test_order_connections_sorts_and_keeps_ties_adjacent():
    hs = [hom_stub(2.3, "b"), hom_stub(1.7, "a"), hom_stub(2.3, "a"), hom_stub(4.7, "c")]
    out = order_connections(hs)
    assert [h.connection_time for h in out] == [1.7, 2.3, 2.3, 4.7]
    assert out[1].label == "a" and out[2].label == "b"
