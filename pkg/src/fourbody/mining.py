"""Mining stable/unstable atlases for transverse chart intersections.

A crossing of an unstable interior chart with the base edge of a stable
chart solves the three-equation system G(s, t, sigma) = 0 in the first
three coordinates; the fourth coordinates then certify a true
intersection when both sit far from zero with equal signs (opposite
signs expose a pseudo-intersection between mirror-symmetric sheets).
Boxes built from constant terms plus l1 coefficient mass rule out most
pairs cheaply, and the fundamental-domain structure lets the sweep walk
generation pairs in increasing total age, which also guarantees each
orbit is reported once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .advection import Chart, arc_l1_box
from .atlas import Atlas, rotation_phase
from .crfbp import jacobi_integral
from .errors import ConfigurationError
from .flow import flow

FAR_THRESHOLD = 1e-4  # fourth-coordinate certification margin (velocity units)
BOX_MARGIN = 1e-6
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
RESIDUAL_LIMIT = 1e-11
ORBIT_MATCH_RADIUS = 1e-8
ORBIT_SAMPLE_TIMES = (-0.1, 0.0, 0.1)


@dataclass
class IntersectionCandidate:
    unstable_chart: int
    stable_chart: int
    root: tuple[float, float, float]  # (s, t, sigma)
    residual: float
    w4_unstable: float
    w4_stable: float
    status: str  # "certified" | "pseudo" | "ambiguous"
    gen_unstable: int
    gen_stable: int
    point: np.ndarray  # state at the crossing, from the unstable chart
    time_unstable: float  # |flow time| from the unstable local boundary
    time_stable: float  # |flow time| to the stable local boundary
    phi_unstable: float  # circle parameters on the local boundaries
    phi_stable: float

    @property
    def connection_time(self) -> float:
        return self.time_unstable + self.time_stable

    @property
    def generation_sum(self) -> int:
        return self.gen_unstable + self.gen_stable


def box_overlap(box_a: np.ndarray, box_b: np.ndarray, margin: float = BOX_MARGIN) -> bool:
    """Interval overlap in all four coordinates after inflating by margin."""
    return bool(
        np.all(box_a[:, 0] - margin <= box_b[:, 1])
        and np.all(box_b[:, 0] - margin <= box_a[:, 1])
    )


def _edge_box(chart: Chart) -> np.ndarray:
    c = np.asarray(chart.series.coeffs)[0]  # base arc (N, 4)
    center = c[0]
    radius = np.sum(np.abs(c), axis=0) - np.abs(center)
    return np.stack([center - radius, center + radius], axis=-1)


def _overlap_matrix(boxes_u: np.ndarray, boxes_s: np.ndarray, margin: float) -> np.ndarray:
    lo_u, hi_u = boxes_u[:, :, 0], boxes_u[:, :, 1]
    lo_s, hi_s = boxes_s[:, :, 0], boxes_s[:, :, 1]
    a = lo_u[:, None, :] - margin <= hi_s[None, :, :]
    b = lo_s[None, :, :] - margin <= hi_u[:, None, :]
    return np.all(a & b, axis=2)


def _eval_poly2(coeffs, t, s, dt=False, ds=False):
    """Batched evaluation of a (M, N, d) grid at points (t_q, s_q)."""
    M, N = coeffs.shape[:2]
    tq = np.power.outer(np.asarray(t), np.arange(M))  # (Q, M)
    sq = np.power.outer(np.asarray(s), np.arange(N))  # (Q, N)
    out = [np.einsum("qm,mnd,qn->qd", tq, coeffs, sq)]
    if dt:
        w = np.arange(M)
        dtq = np.zeros_like(tq)
        dtq[:, 1:] = np.power.outer(np.asarray(t), np.arange(M - 1))
        out.append(np.einsum("qm,m,mnd,qn->qd", dtq, w, coeffs, sq))
    if ds:
        w = np.arange(N)
        dsq = np.zeros_like(sq)
        dsq[:, 1:] = np.power.outer(np.asarray(s), np.arange(N - 1))
        out.append(np.einsum("qm,mnd,n,qn->qd", tq, coeffs, w, dsq))
    return out if len(out) > 1 else out[0]


def _eval_arc(coeffs, s, ds=False):
    N = coeffs.shape[0]
    sq = np.power.outer(np.asarray(s), np.arange(N))
    val = np.einsum("qn,nd->qd", sq, coeffs)
    if not ds:
        return val
    dsq = np.zeros_like(sq)
    dsq[:, 1:] = np.power.outer(np.asarray(s), np.arange(N - 1))
    der = np.einsum("qn,n,nd->qd", dsq, np.arange(N), coeffs)
    return val, der


def _powers(x, n):
    """Cumulative powers x^0..x^(n-1) along a new trailing axis."""
    out = np.empty(x.shape + (n,))
    out[..., 0] = 1.0
    for k in range(1, n):
        out[..., k] = out[..., k - 1] * x
    return out


def _eval_batch(CU, t, s, want_derivs):
    """Evaluate stacked (B, M, N, 4) grids at per-pair points (B, Q)."""
    B, M, N = CU.shape[:3]
    tq = _powers(t, M)  # (B, Q, M)
    sq = _powers(s, N)
    flat = CU.reshape(B, M, N * 4)
    rows = np.matmul(tq, flat).reshape(B, -1, N, 4)  # (B, Q, N, 4)
    val = np.einsum("bqnd,bqn->bqd", rows, sq)
    if not want_derivs:
        return val
    dtq = np.zeros_like(tq)
    dtq[..., 1:] = tq[..., :-1] * np.arange(1, M)
    dsq = np.zeros_like(sq)
    dsq[..., 1:] = sq[..., :-1] * np.arange(1, N)
    drows = np.matmul(dtq, flat).reshape(B, -1, N, 4)
    d_t = np.einsum("bqnd,bqn->bqd", drows, sq)
    d_s = np.einsum("bqnd,bqn->bqd", rows, dsq)
    return val, d_t, d_s


def _eval_arc_batch(CS, sg, want_derivs):
    B, N = CS.shape[:2]
    sq = np.power.outer(sg, np.arange(N))
    val = np.einsum("bqn,bnd->bqd", sq, CS)
    if not want_derivs:
        return val
    dsq = np.zeros_like(sq)
    dsq[..., 1:] = np.power.outer(sg, np.arange(N - 1)) * np.arange(1, N)
    return val, np.einsum("bqn,bnd->bqd", dsq, CS)


def newton_intersect_batch(
    CU: np.ndarray,
    CS: np.ndarray,
    far_threshold: float = FAR_THRESHOLD,
    seeds_per_axis: int = 3,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> list[list[dict]]:
    """Newton roots of G for a stack of chart pairs.

    CU is (B, M, N, 4) unstable grids, CS is (B, N', 4) stable base arcs.
    Returns per-pair root records.  The stable chart enters through its
    t = 0 edge, exactly as in the transverse-intersection criterion.
    """
    B = CU.shape[0]
    grid = np.linspace(-1.0, 1.0, seeds_per_axis + 2)[1:-1]
    S0, T0, G0 = np.meshgrid(grid, grid, grid, indexing="ij")
    seeds = np.stack([S0.ravel(), T0.ravel(), G0.ravel()], axis=1)
    Q = len(seeds)
    pts_full = np.broadcast_to(seeds[None], (B, Q, 3)).copy()
    # work on a shrinking active slice of pairs to keep evaluations cheap
    pair_idx = np.arange(B)
    pts = pts_full.copy()
    active = np.ones((B, Q), dtype=bool)
    cu, cs = CU, CS
    for _ in range(max_iter):
        if not active.any():
            break
        val_u, d_t, d_s = _eval_batch(cu, pts[..., 1], pts[..., 0], True)
        val_s, d_sg = _eval_arc_batch(cs, pts[..., 2], True)
        G = val_u[..., :3] - val_s[..., :3]
        J = np.stack([d_s[..., :3], d_t[..., :3], -d_sg[..., :3]], axis=3)
        converged = np.max(np.abs(G), axis=2) < tol
        dets = np.linalg.det(J)
        solvable = np.abs(dets) > 1e-300
        step = np.zeros_like(pts)
        if solvable.any():
            step[solvable] = np.linalg.solve(
                J[solvable], G[solvable][..., None]
            )[..., 0]
        step = np.clip(step, -0.5, 0.5)
        move = active & ~converged & solvable
        pts = np.where(move[..., None], np.clip(pts - step, -1.5, 1.5), pts)
        escaped = np.max(np.abs(pts), axis=2) > 1.4
        active = move & ~escaped
        pts_full[pair_idx] = pts
        keep = active.any(axis=1)
        if keep.sum() < 0.7 * len(pair_idx):
            pair_idx = pair_idx[keep]
            pts = pts[keep]
            active = active[keep]
            cu = cu[keep]
            cs = cs[keep]
            if len(pair_idx) == 0:
                break
    pts = pts_full
    val_u = _eval_batch(CU, pts[..., 1], pts[..., 0], False)
    val_s = _eval_arc_batch(CS, pts[..., 2], False)
    res = np.max(np.abs(val_u[..., :3] - val_s[..., :3]), axis=2)
    inside = np.max(np.abs(pts), axis=2) <= 1.01
    good = inside & (res < 1e-9)
    out: list[list[dict]] = []
    for b in range(B):
        roots = []
        taken: list[np.ndarray] = []
        for i in np.argsort(res[b]):
            if not good[b, i]:
                continue
            p = np.clip(pts[b, i], -1.0, 1.0)
            if any(np.max(np.abs(p - q)) < 1e-6 for q in taken):
                continue
            p, resid = _polish(CU[b], CS[b], p, tol)
            if resid > RESIDUAL_LIMIT:
                continue
            taken.append(p)
            w4u = float(_eval_poly2(CU[b], [p[1]], [p[0]])[0, 3])
            w4s = float(_eval_arc(CS[b], [p[2]])[0, 3])
            roots.append(
                {
                    "root": tuple(map(float, p)),
                    "residual": float(resid),
                    "w4u": w4u,
                    "w4s": w4s,
                    "status": _classify_w4(w4u, w4s, far_threshold),
                    "point": _eval_poly2(CU[b], [p[1]], [p[0]])[0],
                }
            )
        out.append(roots)
    return out


def newton_intersect(
    chart_u: Chart,
    chart_s: Chart,
    far_threshold: float = FAR_THRESHOLD,
    seeds_per_axis: int = 3,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> list[dict]:
    """Newton roots of G on a single chart pair (see newton_intersect_batch)."""
    cu = np.asarray(chart_u.series.coeffs)
    cs_edge = np.asarray(chart_s.series.coeffs)[0]
    return newton_intersect_batch(
        cu[None], cs_edge[None], far_threshold, seeds_per_axis, tol, max_iter
    )[0]


def _polish(cu, cs_edge, p, tol, iters=8):
    """Projected Newton steps keeping the parameters inside the cube."""
    for _ in range(iters):
        val_u, d_t, d_s = _eval_poly2(cu, [p[1]], [p[0]], dt=True, ds=True)
        val_s, d_sg = _eval_arc(cs_edge, [p[2]], ds=True)
        G = (val_u[:, :3] - val_s[:, :3])[0]
        if np.max(np.abs(G)) < tol:
            break
        J = np.stack([d_s[0, :3], d_t[0, :3], -d_sg[0, :3]], axis=1)
        try:
            step = np.linalg.solve(J, G)
        except np.linalg.LinAlgError:
            break
        p = np.clip(p - step, -1.0, 1.0)
    val_u = _eval_poly2(cu, [p[1]], [p[0]])[0]
    val_s = _eval_arc(cs_edge, [p[2]])[0]
    return p, float(np.max(np.abs(val_u[:3] - val_s[:3])))


def _classify_w4(w4u, w4s, far):
    if abs(w4u) >= far and abs(w4s) >= far:
        return "certified" if np.sign(w4u) == np.sign(w4s) else "pseudo"
    return "ambiguous"


# ---------------------------------------------------------------------------
# the generation sweep


def _candidate_from_root(atlas_u, atlas_s, chart_u, chart_s, rec) -> IntersectionCandidate:
    s, t, sg = rec["root"]
    phi_u = chart_u.angle_map[0] + chart_u.angle_map[1] * s
    if chart_u.rotation:
        phi_u += chart_u.rotation * rotation_phase(atlas_u.manifold, +1)
    phi_s = chart_s.angle_map[0] + chart_s.angle_map[1] * sg
    if chart_s.rotation:
        phi_s += chart_s.rotation * rotation_phase(atlas_s.manifold, +1)
    return IntersectionCandidate(
        unstable_chart=chart_u.chart_id,
        stable_chart=chart_s.chart_id,
        root=rec["root"],
        residual=rec["residual"],
        w4_unstable=rec["w4u"],
        w4_stable=rec["w4s"],
        status=rec["status"],
        gen_unstable=chart_u.generation,
        gen_stable=chart_s.generation,
        point=np.asarray(rec["point"]),
        time_unstable=chart_u.time_of(t),
        time_stable=chart_s.base_time,  # the stable side enters at its t = 0 edge
        phi_unstable=float(phi_u % (2 * np.pi)),
        phi_stable=float(phi_s % (2 * np.pi)),
    )


def same_orbit(
    c1: IntersectionCandidate,
    c2: IntersectionCandidate,
    cfg,
    radius: float = ORBIT_MATCH_RADIUS,
    coarse_time: float = 1e-3,
) -> bool:
    """Flow-into test: candidate roots lie on one trajectory at matched ages."""
    if abs(c1.connection_time - c2.connection_time) > coarse_time:
        return False
    shift = c2.time_unstable - c1.time_unstable
    for delta in ORBIT_SAMPLE_TIMES:
        a = flow(c1.point, shift + delta, cfg)
        b = flow(c2.point, delta, cfg)
        if np.linalg.norm(a - b) > radius:
            return False
    return True


def mine(
    atlas_u: Atlas,
    atlas_s: Atlas,
    far_threshold: float = FAR_THRESHOLD,
    margin: float = BOX_MARGIN,
    resolve: bool = True,
    seeds_per_axis: int = 3,
    progress=None,
) -> list[IntersectionCandidate]:
    """Sweep generation pairs in increasing total age and certify crossings."""
    if atlas_u.side != "unstable" or atlas_s.side != "stable":
        raise ConfigurationError("mine expects an unstable and a stable atlas")
    mu = atlas_u.manifold.equilibrium.masses
    ms = atlas_s.manifold.equilibrium.masses
    if np.max(np.abs(np.array(mu.as_tuple()) - np.array(ms.as_tuple()))) > 1e-14:
        raise ConfigurationError("atlases built at different mass parameters")
    cfg = atlas_u.cfg
    e_u = jacobi_integral(atlas_u.manifold.equilibrium.state, cfg)
    e_s = jacobi_integral(atlas_s.manifold.equilibrium.state, cfg)
    if abs(e_u - e_s) > 1e-10:
        raise ConfigurationError(
            f"energy mismatch between atlases: {e_u!r} vs {e_s!r}"
        )
    gens_u = atlas_u.generations
    gens_s = atlas_s.generations
    boxes_u = [np.stack([c.box for c in g]) if g else None for g in gens_u]
    # the stable side only contributes its t = 0 edge, whose box is tighter
    # than the full chart box and still encloses any certified crossing
    boxes_s = [
        np.stack([_edge_box(c) for c in g]) if g else None for g in gens_s
    ]
    accepted: list[IntersectionCandidate] = []
    pair_order = sorted(
        (
            (gu + gs, gu, gs)
            for gu in range(1, len(gens_u) + 1)
            for gs in range(1, len(gens_s) + 1)
        )
    )
    hits: list[tuple[int, int, Chart, Chart]] = []
    for total, gu, gs in pair_order:
        if boxes_u[gu - 1] is None or boxes_s[gs - 1] is None:
            continue
        mat = _overlap_matrix(boxes_u[gu - 1], boxes_s[gs - 1], margin)
        iu, js = np.nonzero(mat)
        for i, j in zip(iu, js):
            hits.append((total, gu, gens_u[gu - 1][i], gens_s[gs - 1][j]))
    if progress:
        progress(f"{len(hits)} box hits across all generation pairs")
    raw: list[IntersectionCandidate] = []
    chunk = 2048
    for lo in range(0, len(hits), chunk):
        part = hits[lo : lo + chunk]
        CU = np.stack([np.asarray(cu.series.coeffs) for _, _, cu, _ in part])
        CS = np.stack([np.asarray(cs.series.coeffs)[0] for _, _, _, cs in part])
        all_roots = newton_intersect_batch(
            CU, CS, far_threshold, seeds_per_axis=seeds_per_axis
        )
        for (total, gu, chart_u, chart_s), recs in zip(part, all_roots):
            for rec in recs:
                cand = _candidate_from_root(
                    atlas_u, atlas_s, chart_u, chart_s, rec
                )
                if cand.time_unstable <= 0 or cand.time_stable < 0:
                    continue
                raw.append(cand)
        if progress:
            progress(f"newton sweep {lo + len(part)}/{len(hits)}: {len(raw)} raw roots")
    # keep the earliest-generation representative of every orbit
    raw.sort(
        key=lambda c: (
            c.generation_sum,
            c.gen_unstable,
            c.unstable_chart,
            c.stable_chart,
            c.root,
        )
    )
    for cand in raw:
        if any(same_orbit(cand, other, cfg) for other in accepted):
            continue
        accepted.append(cand)
    if resolve:
        accepted = [
            resolve_ambiguous(c, atlas_u, atlas_s, far_threshold)
            if c.status == "ambiguous"
            else c
            for c in accepted
        ]
    accepted.sort(key=lambda c: c.connection_time)
    return accepted


# ---------------------------------------------------------------------------
# ambiguity resolution through the lineage graph


def _charts_by_parent_chart(atlas: Atlas) -> dict:
    index: dict[int, list[Chart]] = {}
    for chart in atlas.charts_by_id.values():
        arc = atlas.arcs_by_id.get(chart.parent_arc)
        if arc is not None and arc.parent_chart is not None:
            index.setdefault(arc.parent_chart, []).append(chart)
    return index


def _neighbors(atlas: Atlas, chart: Chart, index) -> list[Chart]:
    out = []
    for child in index.get(chart.chart_id, []):
        out.append(child)
    arc = atlas.arcs_by_id.get(chart.parent_arc)
    if arc is not None and arc.parent_chart is not None:
        parent = atlas.charts_by_id.get(arc.parent_chart)
        if parent is not None:
            out.append(parent)
    return out


def resolve_ambiguous(
    cand: IntersectionCandidate,
    atlas_u: Atlas,
    atlas_s: Atlas,
    far_threshold: float = FAR_THRESHOLD,
    max_depth: int = 2,
) -> IntersectionCandidate:
    """Walk predecessor/successor charts until the far test is decisive."""
    if cand.status != "ambiguous":
        return cand
    index_u = _charts_by_parent_chart(atlas_u)
    index_s = _charts_by_parent_chart(atlas_s)
    cu0 = atlas_u.charts_by_id[cand.unstable_chart]
    cs0 = atlas_s.charts_by_id[cand.stable_chart]
    frontier = [(cu0, cs0)]
    seen = {(cu0.chart_id, cs0.chart_id)}
    cfg = atlas_u.cfg
    for _ in range(max_depth):
        nxt = []
        for cu, cs in frontier:
            options = [(c, cs) for c in _neighbors(atlas_u, cu, index_u)]
            options += [(cu, c) for c in _neighbors(atlas_s, cs, index_s)]
            for pu, ps in options:
                key = (pu.chart_id, ps.chart_id)
                if key in seen:
                    continue
                seen.add(key)
                nxt.append((pu, ps))
                for rec in newton_intersect(pu, ps, far_threshold):
                    other = _candidate_from_root(atlas_u, atlas_s, pu, ps, rec)
                    if rec["status"] == "ambiguous":
                        continue
                    if same_orbit(cand, other, cfg, coarse_time=0.3):
                        return replace(cand, status=rec["status"])
        frontier = nxt
        if not frontier:
            break
    return cand
