"""Command-line pipeline: equilibria, scan, manifolds, atlases, mining,
refinement, continuation, and plot-data export.

Every subcommand writes its outputs plus a manifest echoing the effective
configuration (with a hash) so runs can be audited and reproduced.  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, storage
from .atlas import AtlasParams, generation_counts, grow, new_atlas, symmetry_expand
from .connections import (
    ContinuationControls,
    continue_ensemble,
    order_connections,
    refine,
    winding_vector,
)
from .crfbp import (
    EQUAL_MASSES,
    MassParameters,
    find_equilibria,
    primary_positions,
    scan_simplex,
)
from .errors import ConfigurationError, FourBodyError
from .manifold import conjugacy_error, defect, solve_manifold
from .mining import mine

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def parse_masses(text: str) -> MassParameters:
    try:
        parts = [float(Fraction(p)) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError("need three comma-separated masses")
        total = sum(parts)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {total!r}, expected 1")
        parts = [p / total for p in parts]
        return MassParameters(*parts)
    except (ValueError, ZeroDivisionError, FourBodyError) as err:
        raise ConfigurationError(f"invalid masses {text!r}: {err}") from err


def write_manifest(out_dir: Path, command: str, config: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command {command}",
        f"version {__version__}",
        f"config_hash {storage.config_hash(config)}",
        "timestamp " + datetime.datetime.now(datetime.timezone.utc).isoformat(),
    ]
    for key in sorted(config):
        lines.append(f"config.{key} {json.dumps(config[key])}")
    (out_dir / f"{command}-manifest.txt").write_text("\n".join(lines) + "\n")


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"config file {path!r} not found")
    out = {}
    for section in parser.sections():
        for key, val in parser.items(section):
            out[f"{section}.{key}"] = val
    return out


def _require(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise ConfigurationError(
            f"missing input {path}; run the `{producer}` command first"
        )
    return Path(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_equilibria(args) -> int:
    masses = parse_masses(args.masses)
    eqs = find_equilibria(masses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["label x y stability"]
    for eq in eqs:
        lines.append(
            f"{eq.label} {storage.FMT % eq.position[0]} "
            f"{storage.FMT % eq.position[1]} {eq.stability}"
        )
    (out / "equilibria.txt").write_text("\n".join(lines) + "\n")
    for eq in eqs:
        (out / f"equilibrium_{eq.label}.txt").write_text(
            storage.dump_equilibrium(eq)
        )
    write_manifest(out, "equilibria", {"masses": masses.as_tuple()})
    print("\n".join(lines))
    return 0


def cmd_scan(args) -> int:
    scan = scan_simplex(
        n_m1=args.n_m1, n_m3=args.n_m3, m1_range=(args.m1_min, args.m1_max)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["m1 m3 " + " ".join(scan.labels)]
    for m1, m3, flags in scan.rows:
        cells = " ".join(
            "?" if flags[lab] is None else str(int(flags[lab]))
            for lab in scan.labels
        )
        lines.append(f"{storage.FMT % m1} {storage.FMT % m3} {cells}")
    (out / "scan.txt").write_text("\n".join(lines) + "\n")
    write_manifest(
        out,
        "scan",
        {
            "n_m1": args.n_m1,
            "n_m3": args.n_m3,
            "m1_range": [args.m1_min, args.m1_max],
        },
    )
    print(f"wrote {len(scan.rows)} scan rows to {out / 'scan.txt'}")
    return 0


def cmd_local_manifold(args) -> int:
    masses = parse_masses(args.masses)
    eqs = {e.label: e for e in find_equilibria(masses)}
    if args.label not in eqs:
        raise ConfigurationError(f"no equilibrium labeled {args.label}")
    eq = eqs[args.label]
    if eq.stability != "saddle-focus":
        raise ConfigurationError(
            f"{args.label} is {eq.stability}; manifolds need a saddle-focus"
        )
    man = solve_manifold(
        eq, args.side, args.order,
        scale=args.scale if args.scale > 0 else None,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"manifold_{args.label}_{args.side}.txt"
    (out / name).write_text(storage.dump_manifold(man))
    d = defect(man)
    c = conjugacy_error(man)
    write_manifest(
        out,
        "local-manifold",
        {
            "masses": masses.as_tuple(),
            "label": args.label,
            "side": args.side,
            "order": args.order,
            "scale": man.scale,
            "defect": d,
            "conjugacy_error": c,
        },
    )
    print(f"{name}: scale {man.scale:.6g}, defect {d:.3e}, conjugacy {c:.3e}")
    return 0


def cmd_grow(args) -> int:
    man = storage.load_manifold(_require(Path(args.manifold), "local-manifold").read_text())
    params = AtlasParams(
        space_degree=args.space_degree,
        time_degree=args.time_degree,
        tail_eps=args.tail_eps,
        tail_cutoff=args.tail_cutoff,
        kappa=args.kappa,
        boundary_arcs=args.arcs,
        symmetric=args.symmetric,
    )
    atlas = grow(new_atlas(man, params), args.time)
    out = Path(args.out)
    storage.save_atlas(atlas, out)
    write_manifest(
        out,
        "grow",
        {
            "manifold": str(args.manifold),
            "time": args.time,
            "kappa": args.kappa,
            "arcs": args.arcs,
            "symmetric": args.symmetric,
            "chart_count": atlas.chart_count(),
            "generations": generation_counts(atlas),
        },
    )
    print(
        f"atlas: {atlas.chart_count()} charts over "
        f"{len(atlas.generations)} generations -> {out}"
    )
    return 0


def cmd_mine(args) -> int:
    atlas_u = storage.load_atlas(_require(Path(args.unstable), "grow"))
    atlas_s = storage.load_atlas(_require(Path(args.stable), "grow"))
    if args.expand_stable:
        atlas_s = symmetry_expand(atlas_s)
    cands = mine(
        atlas_u,
        atlas_s,
        far_threshold=args.far_threshold,
        progress=print if args.verbose else None,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "candidates.txt").write_text(storage.dump_candidates(cands))
    write_manifest(
        out,
        "mine",
        {
            "unstable": str(args.unstable),
            "stable": str(args.stable),
            "expand_stable": args.expand_stable,
            "far_threshold": args.far_threshold,
            "certified": sum(c.status == "certified" for c in cands),
            "pseudo": sum(c.status == "pseudo" for c in cands),
            "ambiguous": sum(c.status == "ambiguous" for c in cands),
        },
    )
    for c in cands:
        print(
            f"{c.status:10s} T={c.connection_time:.4f} "
            f"charts=({c.unstable_chart},{c.stable_chart})"
        )
    return 0


def cmd_refine(args) -> int:
    cands = storage.load_candidates(
        _require(Path(args.candidates), "mine").read_text()
    )
    man_u = storage.load_manifold(
        _require(Path(args.unstable_manifold), "local-manifold").read_text()
    )
    man_s = storage.load_manifold(
        _require(Path(args.stable_manifold), "local-manifold").read_text()
    )
    homs = []
    for k, cand in enumerate(c for c in cands if c.status == "certified"):
        hom = refine(cand, man_u, man_s, segments=args.segments, label=f"c{k}")
        hom.winding = winding_vector(hom, man_u, man_s)
        homs.append(hom)
    homs = order_connections(homs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_homoclinics(homs, out / "homoclinics.txt")
    write_manifest(
        out,
        "refine",
        {
            "candidates": str(args.candidates),
            "segments": args.segments,
            "count": len(homs),
        },
    )
    for h in homs:
        print(
            f"T={h.connection_time:.4f} residual={h.residual:.2e} "
            f"winding={h.winding}"
        )
    return 0


def cmd_continue(args) -> int:
    homs = storage.load_homoclinics(_require(Path(args.homoclinics), "refine"))
    if not homs:
        raise ConfigurationError("no homoclinics to continue")
    man_u = storage.load_manifold(
        _require(Path(args.unstable_manifold), "local-manifold").read_text()
    )
    man_s = storage.load_manifold(
        _require(Path(args.stable_manifold), "local-manifold").read_text()
    )
    target = [float(Fraction(p)) for p in args.target.split(",")]
    if len(target) != 2:
        raise ConfigurationError("--target wants m1,m3")
    controls = ContinuationControls(step=args.step)
    run = continue_ensemble(
        homs, man_u, man_s, [tuple(target)], controls,
        log=print if args.verbose else None,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    storage.save_homoclinics(run.connections, out / "homoclinics.txt")
    lines = ["m1 m3 surviving max_residual"]
    for (m1, m3), rec in zip(run.parameters[1:], run.outcomes):
        res = max(rec.get("residuals", [0.0]), default=0.0)
        lines.append(
            f"{storage.FMT % m1} {storage.FMT % m3} "
            f"{len(rec.get('residuals', []))} {storage.FMT % res}"
        )
    (out / "continuation.txt").write_text("\n".join(lines) + "\n")
    write_manifest(
        out,
        "continue",
        {
            "target": target,
            "step": args.step,
            "status": run.status,
            "steps": len(run.outcomes),
            "surviving": len(run.connections),
        },
    )
    print(f"continuation: {run.status}; {len(run.connections)} connections at "
          f"{run.parameters[-1]}")
    return 0 if run.connections else EXIT_NUMERICAL


def cmd_export(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.atlas:
        atlas = storage.load_atlas(_require(Path(args.atlas), "grow"))
        storage.export_atlas_mesh(atlas, out)
        print(f"wrote atlas mesh to {out}")
        return 0
    if args.homoclinics:
        homs = storage.load_homoclinics(_require(Path(args.homoclinics), "refine"))
        cfg = primary_positions(homs[0].masses) if homs else None
        lines = []
        for k, hom in enumerate(homs):
            path = out if len(homs) == 1 else out.with_suffix(f".{k}.csv")
            storage.export_orbit_trace(hom, cfg, path)
            lines.append(str(path))
        print("wrote orbit traces:\n" + "\n".join(lines) if lines else "no orbits")
        return 0
    raise ConfigurationError("export wants --atlas or --homoclinics")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fourbody",
        description="Manifold atlases and homoclinic connections of the "
        "planar equilateral restricted four-body problem",
    )
    p.add_argument("--config", help="INI config file; flags override its values")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("equilibria", help="locate and classify libration points")
    q.add_argument("--masses", default="1/3,1/3,1/3")
    q.add_argument("--out", default="runs/equilibria")
    q.set_defaults(func=cmd_equilibria)

    q = sub.add_parser("scan", help="saddle-focus stability scan of the mass simplex")
    q.add_argument("--n-m1", type=int, default=12)
    q.add_argument("--n-m3", type=int, default=8)
    q.add_argument("--m1-min", type=float, default=1.0 / 3.0)
    q.add_argument("--m1-max", type=float, default=0.99)
    q.add_argument("--out", default="runs/scan")
    q.set_defaults(func=cmd_scan)

    q = sub.add_parser("local-manifold", help="solve a local manifold chart")
    q.add_argument("--masses", default="1/3,1/3,1/3")
    q.add_argument("--label", default="L0")
    q.add_argument("--side", choices=["stable", "unstable"], required=True)
    q.add_argument("--order", type=int, default=45)
    q.add_argument("--scale", type=float, default=0.0, help="0 = heuristic")
    q.add_argument("--out", default="runs/manifolds")
    q.set_defaults(func=cmd_local_manifold)

    q = sub.add_parser("grow", help="grow a manifold atlas")
    q.add_argument("--manifold", required=True)
    q.add_argument("--time", type=float, required=True)
    q.add_argument("--kappa", type=float, default=2.0)
    q.add_argument("--arcs", type=int, default=10)
    q.add_argument("--symmetric", action="store_true")
    q.add_argument("--space-degree", type=int, default=20)
    q.add_argument("--time-degree", type=int, default=40)
    q.add_argument("--tail-eps", type=float, default=1e-10)
    q.add_argument("--tail-cutoff", type=int, default=10)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_grow)

    q = sub.add_parser("mine", help="mine atlases for chart intersections")
    q.add_argument("--unstable", required=True)
    q.add_argument("--stable", required=True)
    q.add_argument("--expand-stable", action="store_true")
    q.add_argument("--far-threshold", type=float, default=1e-4)
    q.add_argument("--verbose", action="store_true")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_mine)

    q = sub.add_parser("refine", help="refine candidates into homoclinics")
    q.add_argument("--candidates", required=True)
    q.add_argument("--unstable-manifold", required=True)
    q.add_argument("--stable-manifold", required=True)
    q.add_argument("--segments", type=int, default=10)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_refine)

    q = sub.add_parser("continue", help="continue an ensemble across masses")
    q.add_argument("--homoclinics", required=True)
    q.add_argument("--unstable-manifold", required=True)
    q.add_argument("--stable-manifold", required=True)
    q.add_argument("--target", required=True, help="m1,m3")
    q.add_argument("--step", type=float, default=0.01)
    q.add_argument("--verbose", action="store_true")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_continue)

    q = sub.add_parser("export", help="flatten artifacts to delimited text")
    q.add_argument("--atlas")
    q.add_argument("--homoclinics")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_export)

    return p


def apply_config_defaults(args: argparse.Namespace, config: dict):
    """Config-file values fill in any argument still at its default."""
    parser_defaults = build_parser()
    for key, raw in config.items():
        section, _, name = key.partition(".")
        if section != args.command:
            continue
        attr = name.replace("-", "_")
        if hasattr(args, attr):
            current = getattr(args, attr)
            caster = type(current) if current is not None else str
            if isinstance(current, bool):
                setattr(args, attr, raw.lower() in ("1", "true", "yes"))
            else:
                setattr(args, attr, caster(raw))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config_file(args.config)
        if config:
            apply_config_defaults(args, config)
        return args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FourBodyError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
