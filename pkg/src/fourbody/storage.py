"""Structured-text persistence for series, manifolds, atlases, and orbits.

Every numeric field is written with 17 significant digits, which
round-trips IEEE doubles exactly, so re-serializing a loaded artifact
reproduces the file byte for byte (timestamps live only in manifests).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .advection import BoundaryArc, Chart
from .atlas import Atlas, AtlasParams
from .connections import Homoclinic
from .crfbp import Equilibrium, MassParameters
from .errors import ConfigurationError
from .manifold import LocalManifold
from .mining import IntersectionCandidate
from .series import Taylor1, Taylor2

FMT = "%.17g"


def _fmt(x) -> str:
    return FMT % float(x)


def _fmt_complex(z) -> str:
    return f"{FMT % z.real} {FMT % z.imag}"


def _grid_lines(arr: np.ndarray) -> list[str]:
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
    lines = []
    for row in flat:
        if np.iscomplexobj(arr):
            lines.append(" ".join(_fmt_complex(v) for v in row))
        else:
            lines.append(" ".join(_fmt(v) for v in row))
    return lines


def _parse_grid(lines, shape, kind):
    vals = []
    for line in lines:
        parts = [float(p) for p in line.split()]
        if kind == "complex":
            parts = [complex(a, b) for a, b in zip(parts[::2], parts[1::2])]
        vals.append(parts)
    arr = np.array(vals, dtype=np.complex128 if kind == "complex" else np.float64)
    return arr.reshape(shape)


# ---------------------------------------------------------------------------
# series records


def dump_taylor2(p: Taylor2) -> str:
    M, N = p.degrees
    head = [
        "taylor2",
        f"degrees {M} {N}",
        f"vshape {' '.join(map(str, p.vshape))}".rstrip(),
        f"kind {p.kind}",
        f"conjugate_symmetric {int(p.conjugate_symmetric)}",
    ]
    body = _grid_lines(np.asarray(p.coeffs).reshape(M * N, -1))
    return "\n".join(head + body) + "\n"


def load_taylor2(text: str) -> Taylor2:
    lines = text.strip().split("\n")
    if lines[0] != "taylor2":
        raise ConfigurationError("not a taylor2 record")
    M, N = map(int, lines[1].split()[1:])
    vshape = tuple(int(v) for v in lines[2].split()[1:])
    kind = lines[3].split()[1]
    sym = bool(int(lines[4].split()[1]))
    arr = _parse_grid(lines[5 : 5 + M * N], (M, N) + vshape, kind)
    return Taylor2(arr, conjugate_symmetric=sym)


def dump_taylor1(g: Taylor1) -> str:
    N = g.degree
    head = [
        "taylor1",
        f"degree {N}",
        f"vshape {' '.join(map(str, g.vshape))}".rstrip(),
        f"kind {g.kind}",
    ]
    return "\n".join(head + _grid_lines(np.asarray(g.coeffs))) + "\n"


def load_taylor1(text: str) -> Taylor1:
    lines = text.strip().split("\n")
    if lines[0] != "taylor1":
        raise ConfigurationError("not a taylor1 record")
    N = int(lines[1].split()[1])
    vshape = tuple(int(v) for v in lines[2].split()[1:])
    kind = lines[3].split()[1]
    return Taylor1(_parse_grid(lines[4 : 4 + N], (N,) + vshape, kind))


# ---------------------------------------------------------------------------
# equilibria and manifolds


def dump_equilibrium(eq: Equilibrium) -> str:
    out = [
        "equilibrium",
        f"label {eq.label}",
        "masses " + " ".join(_fmt(v) for v in eq.masses.as_tuple()),
        "position " + " ".join(_fmt(v) for v in eq.position),
        "stability " + eq.stability,
        "eigenvalues " + " ".join(_fmt_complex(v) for v in eq.eigenvalues),
    ]
    for k in range(4):
        out.append(
            f"eigenvector{k} "
            + " ".join(_fmt_complex(v) for v in eq.eigenvectors[:, k])
        )
    return "\n".join(out) + "\n"


def load_equilibrium(text: str) -> Equilibrium:
    lines = text.strip().split("\n")
    if lines[0] != "equilibrium":
        raise ConfigurationError("not an equilibrium record")
    rec = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        rec[key] = rest
    def cvec(s):
        parts = [float(p) for p in s.split()]
        return np.array([complex(a, b) for a, b in zip(parts[::2], parts[1::2])])
    vecs = np.stack([cvec(rec[f"eigenvector{k}"]) for k in range(4)], axis=1)
    m = [float(v) for v in rec["masses"].split()]
    return Equilibrium(
        label=rec["label"],
        position=np.array([float(v) for v in rec["position"].split()]),
        eigenvalues=cvec(rec["eigenvalues"]),
        eigenvectors=vecs,
        stability=rec["stability"],
        masses=MassParameters(*m),
    )


def dump_manifold(man: LocalManifold) -> str:
    head = [
        "local-manifold",
        f"side {man.side}",
        "lambda " + _fmt_complex(man.lam),
        "scale " + _fmt(man.scale),
        f"order {man.order}",
        "#equilibrium",
    ]
    return (
        "\n".join(head)
        + "\n"
        + dump_equilibrium(man.equilibrium)
        + "#series\n"
        + dump_taylor2(man.P)
    )


def load_manifold(text: str) -> LocalManifold:
    head, _, rest = text.partition("#equilibrium\n")
    eq_text, _, series_text = rest.partition("#series\n")
    rec = {}
    for line in head.strip().split("\n")[1:]:
        key, _, val = line.partition(" ")
        rec[key] = val
    lam_parts = [float(v) for v in rec["lambda"].split()]
    return LocalManifold(
        equilibrium=load_equilibrium(eq_text),
        side=rec["side"],
        lam=complex(*lam_parts),
        scale=float(rec["scale"]),
        P=load_taylor2(series_text),
        order=int(rec["order"]),
    )


# ---------------------------------------------------------------------------
# atlases


def _dump_chart(chart: Chart) -> str:
    head = [
        "chart",
        f"chart_id {chart.chart_id}",
        f"generation {chart.generation}",
        f"parent_arc {chart.parent_arc}",
        "tau " + _fmt(chart.tau),
        "angle_map " + " ".join(_fmt(v) for v in chart.angle_map),
        "base_time " + _fmt(chart.base_time),
        f"rotation {chart.rotation}",
        "subdomain_history "
        + ";".join(f"{_fmt(a)},{_fmt(b)}" for a, b in chart.subdomain_history),
    ]
    return "\n".join(head) + "\n" + dump_taylor2(chart.series)


def _load_chart(text: str) -> Chart:
    head, _, series_text = text.partition("taylor2")
    rec = {}
    for line in head.strip().split("\n")[1:]:
        key, _, val = line.partition(" ")
        rec[key] = val
    hist = tuple(
        tuple(float(x) for x in pair.split(","))
        for pair in rec.get("subdomain_history", "").split(";")
        if pair
    )
    return Chart(
        series=load_taylor2("taylor2" + series_text),
        tau=float(rec["tau"]),
        generation=int(rec["generation"]),
        chart_id=int(rec["chart_id"]),
        parent_arc=int(rec["parent_arc"]),
        angle_map=tuple(float(v) for v in rec["angle_map"].split()),
        base_time=float(rec["base_time"]),
        rotation=int(rec.get("rotation", 0)),
        subdomain_history=hist,
    )


def _dump_arc(arc: BoundaryArc) -> str:
    head = [
        "arc",
        f"arc_id {arc.arc_id}",
        f"generation {arc.generation}",
        "parent_chart " + ("-" if arc.parent_chart is None else str(arc.parent_chart)),
        "angle_map " + " ".join(_fmt(v) for v in arc.angle_map),
        "time_from_manifold " + _fmt(arc.time_from_manifold),
        "tau_guess " + _fmt(arc.tau_guess),
        "subdomain_history "
        + ";".join(f"{_fmt(a)},{_fmt(b)}" for a, b in arc.subdomain_history),
    ]
    return "\n".join(head) + "\n" + dump_taylor1(arc.series)


def _load_arc(text: str) -> BoundaryArc:
    head, _, series_text = text.partition("taylor1")
    rec = {}
    for line in head.strip().split("\n")[1:]:
        key, _, val = line.partition(" ")
        rec[key] = val
    hist = tuple(
        tuple(float(x) for x in pair.split(","))
        for pair in rec.get("subdomain_history", "").split(";")
        if pair
    )
    return BoundaryArc(
        series=load_taylor1("taylor1" + series_text),
        generation=int(rec["generation"]),
        arc_id=int(rec["arc_id"]),
        parent_chart=None if rec["parent_chart"] == "-" else int(rec["parent_chart"]),
        angle_map=tuple(float(v) for v in rec["angle_map"].split()),
        time_from_manifold=float(rec["time_from_manifold"]),
        subdomain_history=hist,
        tau_guess=float(rec["tau_guess"]),
    )


def save_atlas(atlas: Atlas, root: Path):
    root = Path(root)
    (root / "charts").mkdir(parents=True, exist_ok=True)
    (root / "arcs").mkdir(parents=True, exist_ok=True)
    (root / "manifold.txt").write_text(dump_manifold(atlas.manifold))
    man_lines = [
        "atlas-manifest",
        f"side {atlas.side}",
        "params " + json.dumps(asdict(atlas.params), sort_keys=True),
        "generations "
        + " ".join(str(len(g)) for g in atlas.generations),
        "frontier_sizes " + " ".join(str(len(f)) for f in atlas.frontiers),
        f"next_chart {atlas._next_chart}",
        f"next_arc {atlas._next_arc}",
        "generation_chart_ids "
        + "|".join(
            ",".join(str(c.chart_id) for c in g) for g in atlas.generations
        ),
        "frontier_arc_ids "
        + "|".join(",".join(str(a.arc_id) for a in f) for f in atlas.frontiers),
        "retired " + json.dumps(atlas.retired),
        "clipped " + json.dumps(atlas.clipped),
    ]
    (root / "manifest.txt").write_text("\n".join(man_lines) + "\n")
    for chart in atlas.charts_by_id.values():
        (root / "charts" / f"chart_{chart.chart_id:06d}.txt").write_text(
            _dump_chart(chart)
        )
    for arc in atlas.arcs_by_id.values():
        (root / "arcs" / f"arc_{arc.arc_id:06d}.txt").write_text(_dump_arc(arc))


def load_atlas(root: Path) -> Atlas:
    root = Path(root)
    man = load_manifold((root / "manifold.txt").read_text())
    rec = {}
    for line in (root / "manifest.txt").read_text().strip().split("\n")[1:]:
        key, _, val = line.partition(" ")
        rec[key] = val
    params = AtlasParams(**json.loads(rec["params"]))
    atlas = Atlas(side=rec["side"], manifold=man, params=params)
    for path in sorted((root / "charts").glob("chart_*.txt")):
        chart = _load_chart(path.read_text())
        atlas.charts_by_id[chart.chart_id] = chart
    for path in sorted((root / "arcs").glob("arc_*.txt")):
        arc = _load_arc(path.read_text())
        atlas.arcs_by_id[arc.arc_id] = arc
        if arc.parent_chart is not None:
            atlas.children.setdefault(arc.parent_chart, []).append(arc.arc_id)
    gen_ids = rec["generation_chart_ids"]
    if gen_ids:
        for group in gen_ids.split("|"):
            atlas.generations.append(
                [atlas.charts_by_id[int(i)] for i in group.split(",") if i != ""]
            )
    for group in rec["frontier_arc_ids"].split("|"):
        atlas.frontiers.append(
            [atlas.arcs_by_id[int(i)] for i in group.split(",") if i != ""]
        )
    atlas.retired = [tuple(x) for x in json.loads(rec["retired"])]
    atlas.clipped = [tuple(x) for x in json.loads(rec["clipped"])]
    atlas._next_chart = int(rec["next_chart"])
    atlas._next_arc = int(rec["next_arc"])
    return atlas


# ---------------------------------------------------------------------------
# candidates and homoclinics


CANDIDATE_COLUMNS = (
    "unstable_chart stable_chart s t sigma residual w4_unstable w4_stable "
    "status gen_unstable gen_stable time_unstable time_stable "
    "phi_unstable phi_stable x xdot y ydot"
).split()


def dump_candidates(cands: list[IntersectionCandidate]) -> str:
    lines = ["# " + " ".join(CANDIDATE_COLUMNS)]
    for c in cands:
        vals = [
            str(c.unstable_chart),
            str(c.stable_chart),
            _fmt(c.root[0]),
            _fmt(c.root[1]),
            _fmt(c.root[2]),
            _fmt(c.residual),
            _fmt(c.w4_unstable),
            _fmt(c.w4_stable),
            c.status,
            str(c.gen_unstable),
            str(c.gen_stable),
            _fmt(c.time_unstable),
            _fmt(c.time_stable),
            _fmt(c.phi_unstable),
            _fmt(c.phi_stable),
        ] + [_fmt(v) for v in c.point]
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


def load_candidates(text: str) -> list[IntersectionCandidate]:
    out = []
    for line in text.strip().split("\n"):
        if line.startswith("#") or not line.strip():
            continue
        p = line.split()
        out.append(
            IntersectionCandidate(
                unstable_chart=int(p[0]),
                stable_chart=int(p[1]),
                root=(float(p[2]), float(p[3]), float(p[4])),
                residual=float(p[5]),
                w4_unstable=float(p[6]),
                w4_stable=float(p[7]),
                status=p[8],
                gen_unstable=int(p[9]),
                gen_stable=int(p[10]),
                time_unstable=float(p[11]),
                time_stable=float(p[12]),
                phi_unstable=float(p[13]),
                phi_stable=float(p[14]),
                point=np.array([float(v) for v in p[15:19]]),
            )
        )
    return out


def dump_homoclinic(h: Homoclinic) -> str:
    lines = [
        "homoclinic",
        f"label {h.label}",
        "masses " + " ".join(_fmt(v) for v in h.masses.as_tuple()),
        "phi_unstable " + _fmt(h.phi_unstable),
        "phi_stable " + _fmt(h.phi_stable),
        "connection_time " + _fmt(h.connection_time),
        "residual " + _fmt(h.residual),
        "energy " + _fmt(h.energy),
        "winding " + (" ".join(str(w) for w in h.winding) if h.winding else "-"),
        "durations " + " ".join(_fmt(v) for v in h.durations),
        f"nodes {len(h.nodes)}",
    ]
    for row in h.nodes:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def load_homoclinic(text: str) -> Homoclinic:
    lines = text.strip().split("\n")
    if lines[0] != "homoclinic":
        raise ConfigurationError("not a homoclinic record")
    rec = {}
    idx = 1
    while idx < len(lines):
        key, _, val = lines[idx].partition(" ")
        rec[key] = val
        idx += 1
        if key == "nodes":
            break
    n_nodes = int(rec["nodes"])
    nodes = np.array(
        [[float(v) for v in line.split()] for line in lines[idx : idx + n_nodes]]
    )
    m = [float(v) for v in rec["masses"].split()]
    winding = (
        None
        if rec["winding"] == "-"
        else tuple(int(v) for v in rec["winding"].split())
    )
    return Homoclinic(
        label=rec["label"],
        phi_unstable=float(rec["phi_unstable"]),
        phi_stable=float(rec["phi_stable"]),
        connection_time=float(rec["connection_time"]),
        nodes=nodes,
        durations=np.array([float(v) for v in rec["durations"].split()]),
        residual=float(rec["residual"]),
        energy=float(rec["energy"]),
        masses=MassParameters(*m),
        winding=winding,
    )


def save_homoclinics(homs: list[Homoclinic], path: Path):
    Path(path).write_text("\n".join(dump_homoclinic(h) for h in homs))


def load_homoclinics(path: Path) -> list[Homoclinic]:
    text = Path(path).read_text().strip()
    if not text:
        return []
    out = []
    for block in text.split("\nhomoclinic\n"):
        if not block.strip():
            continue
        if not block.startswith("homoclinic"):
            block = "homoclinic\n" + block
        out.append(load_homoclinic(block))
    return out


# ---------------------------------------------------------------------------
# exports and manifests


def export_atlas_mesh(atlas: Atlas, path: Path, n_s: int = 9, n_t: int = 5):
    """Flattened sample meshes (s, t -> state) for external plotting."""
    lines = ["chart_id,generation,s,t,x,xdot,y,ydot"]
    s = np.linspace(-1, 1, n_s)
    t = np.linspace(0, 1, n_t)
    for gen in atlas.generations:
        for chart in gen:
            tt, ss = np.meshgrid(t, s)
            vals = chart.series(tt.ravel(), ss.ravel())
            for (tv, sv), row in zip(
                zip(tt.ravel(), ss.ravel()), vals
            ):
                lines.append(
                    f"{chart.chart_id},{chart.generation},"
                    + ",".join(_fmt(v) for v in (sv, tv, *row))
                )
    Path(path).write_text("\n".join(lines) + "\n")


def export_orbit_trace(hom: Homoclinic, cfg, path: Path, pts: int = 200):
    from .flow import flow as _flow

    lines = ["t,x,xdot,y,ydot"]
    t0 = 0.0
    for i in range(hom.segments):
        sol = _flow(hom.nodes[i], hom.durations[i], cfg, dense=True)
        ts = np.linspace(0, hom.durations[i], pts, endpoint=False)
        for tv in ts:
            row = sol.sol(tv)[:, 0] if sol.sol(tv).ndim > 1 else sol.sol(tv)
            lines.append(_fmt(t0 + tv) + "," + ",".join(_fmt(v) for v in row))
        t0 += hom.durations[i]
    lines.append(_fmt(t0) + "," + ",".join(_fmt(v) for v in hom.nodes[-1]))
    Path(path).write_text("\n".join(lines) + "\n")


def config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()[:16]
