"""Generation-by-generation atlases of the global stable/unstable manifolds.

Growth alternates remeshing (tail-ratio control), speed clipping (cut
subarcs that run too close to a primary), time-step selection, advection,
and edge evaluation, with full parent/child lineage bookkeeping so the
miner can walk connections across generations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .advection import (
    BoundaryArc,
    Chart,
    advect_arc,
    choose_timestep,
    evaluate_edge,
)
from .crfbp import PrimaryConfig, rotation_matrix
from .errors import FourBodyError, StallError, StepRejectedError
from .manifold import LocalManifold
from .series import Taylor1, Taylor2, tail_ratio

TWO_THIRDS_PI = 2.0 * math.pi / 3.0


@dataclass
class AtlasParams:
    space_degree: int = 20
    time_degree: int = 40
    tail_eps: float = 1e-10
    tail_cutoff: int = 10
    split_factor: int = 2
    remesh_depth_cap: int = 8
    kappa: float = 2.0
    boundary_arcs: int = 10
    symmetric: bool = False
    initial_tau_guess: float = 0.065
    tau_max: float = 0.065


@dataclass
class Atlas:
    side: str
    manifold: LocalManifold
    params: AtlasParams
    generations: list = field(default_factory=list)  # list[list[Chart]]
    frontiers: list = field(default_factory=list)  # list[list[BoundaryArc]]
    retired: list = field(default_factory=list)  # (arc_id, reason)
    clipped: list = field(default_factory=list)  # (arc_id, (lo, hi))
    charts_by_id: dict = field(default_factory=dict)
    arcs_by_id: dict = field(default_factory=dict)
    children: dict = field(default_factory=dict)  # chart_id -> [arc ids]
    _next_chart: int = 0
    _next_arc: int = 0

    @property
    def cfg(self) -> PrimaryConfig:
        return self.manifold.cfg

    @property
    def tau_sign(self) -> int:
        return +1 if self.side == "unstable" else -1

    def chart_count(self) -> int:
        return sum(len(g) for g in self.generations)

    def new_arc_id(self) -> int:
        self._next_arc += 1
        return self._next_arc - 1

    def new_chart_id(self) -> int:
        self._next_chart += 1
        return self._next_chart - 1

    def register_arc(self, arc: BoundaryArc):
        self.arcs_by_id[arc.arc_id] = arc
        if arc.parent_chart is not None:
            self.children.setdefault(arc.parent_chart, []).append(arc.arc_id)

    def register_chart(self, chart: Chart):
        self.charts_by_id[chart.chart_id] = chart


def initial_boundary(man: LocalManifold, K0: int, symmetric: bool,
                     space_degree: int = 20) -> list[Taylor1]:
    """Lift K0 equal angular sectors of the unit circle through the chart.

    Under the equal-mass rotational symmetry only the sector [0, 2pi/3)
    needs globalizing; otherwise the full circle is meshed.
    """
    span = TWO_THIRDS_PI if symmetric else 2.0 * math.pi
    half = span / (2.0 * K0)
    P = np.asarray(man.P.coeffs)
    Np = P.shape[0]
    # group coefficients by the difference of powers: the circle restriction
    # is a trigonometric polynomial with frequency m - n
    d_values = np.arange(-(Np - 1), Np)
    A = np.zeros((len(d_values), 4), dtype=np.complex128)
    for m in range(Np):
        for n in range(Np):
            A[(m - n) + (Np - 1)] += P[m, n]
    k = np.arange(space_degree)
    # (i d h)^k / k! as a (k, d) matrix
    base = 1j * d_values * half
    W = base[None, :] ** k[:, None]
    W /= np.array([math.factorial(int(kk)) for kk in k])[:, None]
    arcs = []
    for j in range(K0):
        phi_c = (2 * j + 1) * half
        phases = np.exp(1j * d_values * phi_c)
        coeffs = np.einsum("kd,dv->kv", W * phases[None, :], A)
        if np.max(np.abs(coeffs.imag)) > 1e-10:
            raise FourBodyError("lifted boundary arc is not real")
        arcs.append((Taylor1(coeffs.real), (phi_c, half)))
    return arcs


def new_atlas(man: LocalManifold, params: AtlasParams) -> Atlas:
    side = man.side
    atlas = Atlas(side=side, manifold=man, params=params)
    frontier = []
    lifted = initial_boundary(
        man, params.boundary_arcs, params.symmetric, params.space_degree
    )
    for series, angle_map in lifted:
        arc = BoundaryArc(
            series=series,
            generation=0,
            arc_id=atlas.new_arc_id(),
            parent_chart=None,
            angle_map=angle_map,
            time_from_manifold=0.0,
            tau_guess=params.initial_tau_guess,
        )
        atlas.register_arc(arc)
        frontier.append(arc)
    atlas.frontiers.append(frontier)
    return atlas


# ---------------------------------------------------------------------------
# remeshing and speed control


def remesh(
    atlas: Atlas, arc: BoundaryArc, eps: float | None = None,
    cutoff: int | None = None, split: int | None = None,
) -> list[BoundaryArc]:
    """Subdivide until every subarc passes the tail-ratio threshold."""
    p = atlas.params
    eps = p.tail_eps if eps is None else eps
    cutoff = p.tail_cutoff if cutoff is None else cutoff
    split = p.split_factor if split is None else split
    out: list[BoundaryArc] = []
    stack = [(arc, 0)]
    while stack:
        cur, depth = stack.pop()
        if tail_ratio(cur.series, cutoff) < eps:
            out.append(cur)
            continue
        if depth >= p.remesh_depth_cap:
            atlas.retired.append((cur.arc_id, "pathological tail ratio"))
            continue
        edges = np.linspace(-1.0, 1.0, split + 1)
        for s1, s2 in zip(edges[:-1], edges[1:]):
            piece = cur.restricted(
                (s1 + s2) / 2.0, (s2 - s1) / 2.0, arc_id=atlas.new_arc_id()
            )
            atlas.register_arc(piece)
            stack.append((piece, depth + 1))
    out.sort(key=lambda a: a.angle_map[0])
    return out


def _speed_poly(arc: BoundaryArc) -> np.ndarray:
    c = np.asarray(arc.series.coeffs)
    xd, yd = c[:, 1], c[:, 3]
    return np.convolve(xd, xd) + np.convolve(yd, yd)


def speed_clip(atlas: Atlas, arc: BoundaryArc, kappa: float | None = None) -> list[BoundaryArc]:
    """Keep the maximal subintervals where the velocity stays below kappa."""
    kappa = atlas.params.kappa if kappa is None else kappa
    poly = _speed_poly(arc)
    samples = np.linspace(-1.0, 1.0, 256)
    speed2 = np.polynomial.polynomial.polyval(samples, poly)
    if np.max(speed2) <= kappa**2:
        return [arc]
    shifted = poly.copy()
    shifted[0] -= kappa**2
    try:
        roots = np.polynomial.polynomial.polyroots(_trim(shifted))
        real = np.sort(
            roots[np.abs(roots.imag) < 1e-9].real
        )
        real = real[(real > -1.0) & (real < 1.0)]
    except Exception:
        warnings.warn(f"speed root finding failed; retiring arc {arc.arc_id}")
        atlas.retired.append((arc.arc_id, "speed root finding failed"))
        return []
    breaks = np.concatenate([[-1.0], real, [1.0]])
    kept = []
    for s1, s2 in zip(breaks[:-1], breaks[1:]):
        if s2 - s1 < 1e-9:
            continue
        mid = 0.5 * (s1 + s2)
        val = np.polynomial.polynomial.polyval(mid, shifted)
        inside = (samples > s1) & (samples < s2)
        sample_ok = bool(np.all(speed2[inside] <= kappa**2 + 1e-9)) if inside.any() else val < 0
        if val < 0 and sample_ok:
            piece = arc.restricted(
                (s1 + s2) / 2.0, (s2 - s1) / 2.0, arc_id=atlas.new_arc_id()
            )
            atlas.register_arc(piece)
            kept.append(piece)
        else:
            atlas.clipped.append((arc.arc_id, (float(s1), float(s2))))
    if not kept:
        atlas.retired.append((arc.arc_id, "entire arc above the speed threshold"))
    return kept


def _trim(p: np.ndarray) -> np.ndarray:
    nz = np.nonzero(np.abs(p) > 1e-300)[0]
    return p[: nz[-1] + 1] if len(nz) else p[:1]


# ---------------------------------------------------------------------------
# growth


def grow(atlas: Atlas, target_time: float, max_generations: int = 200) -> Atlas:
    """Advance every lineage until its accumulated |tau| reaches the target."""
    p = atlas.params
    cfg = atlas.cfg
    sign = atlas.tau_sign
    for _ in range(max_generations):
        frontier = atlas.frontiers[-1]
        active = [a for a in frontier if a.time_from_manifold < target_time - 1e-12]
        if not active:
            break
        new_charts: list[Chart] = []
        new_frontier: list[BoundaryArc] = []
        generation = len(atlas.generations) + 1
        for arc in active:
            pieces = []
            for piece in remesh(atlas, arc):
                pieces.extend(speed_clip(atlas, piece))
            for piece in pieces:
                try:
                    tau, grid = choose_timestep(
                        piece, p.time_degree, cfg, sign=sign, tau_max=p.tau_max
                    )
                except (StallError, StepRejectedError) as err:
                    atlas.retired.append((piece.arc_id, f"stalled: {err}"))
                    continue
                chart = Chart(
                    series=grid,
                    tau=tau,
                    generation=generation,
                    chart_id=atlas.new_chart_id(),
                    parent_arc=piece.arc_id,
                    angle_map=piece.angle_map,
                    base_time=piece.time_from_manifold,
                    subdomain_history=piece.subdomain_history,
                )
                atlas.register_chart(chart)
                new_charts.append(chart)
                edge = evaluate_edge(chart, atlas.new_arc_id())
                atlas.register_arc(edge)
                new_frontier.append(edge)
        if not new_charts:
            break
        # carry forward lineages that already reached the target
        done = [a for a in frontier if a.time_from_manifold >= target_time - 1e-12]
        atlas.generations.append(new_charts)
        atlas.frontiers.append(new_frontier + done)
    return atlas


def generation_counts(atlas: Atlas) -> list[int]:
    return [len(g) for g in atlas.generations]


def charts_up_to_time(atlas: Atlas, t: float) -> int:
    """Number of charts a growth run capped at time t would have produced."""
    return sum(
        1 for c in atlas.charts_by_id.values() if c.base_time < t - 1e-12
    )


# ---------------------------------------------------------------------------
# symmetry expansion


def rotation_phase(man: LocalManifold, sign: int) -> float:
    """Phase chi with R xi = e^(i chi) xi for the manifold's eigenvector."""
    R = rotation_matrix(sign)
    _, xi = (
        man.equilibrium.stable_pair()
        if man.side == "stable"
        else man.equilibrium.unstable_pair()
    )
    rotated = R @ xi
    k = int(np.argmax(np.abs(xi)))
    return float(np.angle(rotated[k] / xi[k]))


def rotate_chart(chart: Chart, sign: int, chart_id: int) -> Chart:
    R = rotation_matrix(sign)
    coeffs = np.asarray(chart.series.coeffs) @ R.T
    return replace(
        chart,
        series=Taylor2(coeffs),
        chart_id=chart_id,
        box=None,
        rotation=sign,
    )


def symmetry_expand(atlas: Atlas) -> Atlas:
    """Adjoin the +-120 degree rotational copies of every chart and arc.

    Only valid at equal masses.  For an atlas at the central point the
    copies stay on the same manifold; rotated charts carry a rotation tag
    so circle parameters can be mapped back through the eigenvector phase.
    """
    m = atlas.manifold.equilibrium.masses
    if abs(m.m1 - m.m2) > 1e-14 or abs(m.m2 - m.m3) > 1e-14:
        raise FourBodyError("symmetry expansion requires equal masses")
    out = Atlas(side=atlas.side, manifold=atlas.manifold, params=atlas.params)
    out.retired = list(atlas.retired)
    out.clipped = list(atlas.clipped)
    out._next_arc = atlas._next_arc
    next_chart = atlas._next_chart
    for gen in atlas.generations:
        new_gen = list(gen)
        for sign in (+1, -1):
            for chart in gen:
                new_gen.append(rotate_chart(chart, sign, next_chart))
                next_chart += 1
        out.generations.append(new_gen)
        for c in new_gen:
            out.register_chart(c)
    out.frontiers = [list(f) for f in atlas.frontiers]
    out.arcs_by_id = dict(atlas.arcs_by_id)
    out.children = {k: list(v) for k, v in atlas.children.items()}
    out._next_chart = next_chart
    return out


def frontier_transversality(atlas: Atlas, n_samples: int = 7) -> float:
    """Minimum angle between the field and arc tangents over the frontier."""
    from .crfbp import vector_field

    worst = np.pi
    for arc in atlas.frontiers[-1]:
        d = arc.series.derivative()
        for s in np.linspace(-0.9, 0.9, n_samples):
            tangent = d(s)
            f = vector_field(arc.eval(s), atlas.cfg)
            ct = abs(tangent @ f) / (np.linalg.norm(tangent) * np.linalg.norm(f))
            worst = min(worst, math.acos(min(1.0, ct)))
    return worst
