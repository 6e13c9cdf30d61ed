"""Session-scoped production artifacts shared by acceptance and audit tests.

Building these (order-45 manifolds, T=2.5 atlases, the mined connection
set) takes a few minutes; every consumer shares one instance.
"""

import numpy as np
import pytest

from fourbody.atlas import AtlasParams, grow, new_atlas, symmetry_expand
from fourbody.connections import order_connections, refine, winding_vector
from fourbody.crfbp import EQUAL_MASSES, equilibrium_named, find_equilibria
from fourbody.manifold import solve_manifold
from fourbody.mining import mine


@pytest.fixture(scope="session")
def l0():
    return equilibrium_named(EQUAL_MASSES, "L0")


@pytest.fixture(scope="session")
def manifolds45(l0):
    return (
        solve_manifold(l0, "unstable", 45),
        solve_manifold(l0, "stable", 45),
    )


@pytest.fixture(scope="session")
def atlas_k3(manifolds45):
    man_u, _ = manifolds45
    params = AtlasParams(symmetric=True, boundary_arcs=10, kappa=3.0)
    return grow(new_atlas(man_u, params), 1.0)


@pytest.fixture(scope="session")
def l0_connections(manifolds45):
    man_u, man_s = manifolds45
    params = AtlasParams(symmetric=True, boundary_arcs=10, kappa=2.0)
    atlas_u = grow(new_atlas(man_u, params), 2.5)
    atlas_s = grow(new_atlas(man_s, params), 2.5)
    expanded = symmetry_expand(atlas_s)
    cands = mine(atlas_u, expanded)
    eqs = find_equilibria(EQUAL_MASSES)
    homs = []
    for k, c in enumerate([c for c in cands if c.status == "certified"]):
        h = refine(c, man_u, man_s, label=f"c{k}")
        h.winding = winding_vector(h, man_u, man_s, eqs)
        homs.append(h)
    return {
        "atlas_u": atlas_u,
        "atlas_s": atlas_s,
        "expanded_s": expanded,
        "candidates": cands,
        "homoclinics": order_connections(homs),
    }


@pytest.fixture(scope="session")
def l5_letters():
    eq = equilibrium_named(EQUAL_MASSES, "L5")
    man_u = solve_manifold(eq, "unstable", 45)
    man_s = solve_manifold(eq, "stable", 45)
    params = AtlasParams(symmetric=False, boundary_arcs=30, kappa=2.0)
    atlas_u = grow(new_atlas(man_u, params), 3.0)
    atlas_s = grow(new_atlas(man_s, params), 3.0)
    cands = mine(atlas_u, atlas_s)
    homs = []
    for k, c in enumerate([c for c in cands if c.status == "certified"]):
        homs.append(refine(c, man_u, man_s, label=f"L5c{k}"))
    return man_u, man_s, order_connections(homs)
