"""Refinement, classification, and continuation of homoclinic connections.

Mined chart crossings seed a free-time multiple-shooting problem whose
boundary nodes are pinned to the local manifold boundary circles.  The
underdetermined Newton system (segment durations stay free) is solved
with minimum-norm steps; the connection time from unstable-boundary exit
to stable-boundary entry is the scale-robust observable used to order
the set.  Winding numbers of the closed orbit loop around the inner
libration points and the primaries give the integer classification.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .crfbp import (
    Equilibrium,
    MassParameters,
    classify_eigenvalues,
    continue_equilibrium,
    find_equilibria,
    jacobi_integral,
    primary_positions,
    rotation_matrix,
    vector_field,
    _eigen_data,
)
from .errors import FourBodyError, RefinementFailureError
from .flow import flow, flow_with_jacobian
from .manifold import LocalManifold, layer_max_norms, pseudo_newton_refine, rescale, solve_recursion
from .mining import IntersectionCandidate
from .series import Taylor2

SHOOTING_TOL = 1e-12
SHOOTING_MAX_ITER = 30
WINDING_MAX_ANGLE = 0.1
WINDING_CENTER_GUARD = 1e-6
WINDING_ROUND_TOL = 0.05


@dataclass
class Homoclinic:
    label: str
    phi_unstable: float
    phi_stable: float
    connection_time: float
    nodes: np.ndarray  # (n+1, 4) states including both boundary nodes
    durations: np.ndarray  # (n,)
    residual: float
    energy: float
    masses: MassParameters
    winding: tuple[int, ...] | None = None

    @property
    def segments(self) -> int:
        return len(self.durations)


# ---------------------------------------------------------------------------
# multiple shooting


def _boundary_data(man: LocalManifold, phi: float):
    point = man.boundary_point(phi)
    tangent = man.boundary_tangent(phi)
    return point, tangent


def _shooting_residual_jacobian(theta, n, man_u, man_s, cfg):
    phi_u, phi_s = theta[0], theta[1]
    h = theta[2 : 2 + n]
    interior = theta[2 + n :].reshape(n - 1, 4)
    x0, dx0 = _boundary_data(man_u, phi_u)
    xn, dxn = _boundary_data(man_s, phi_s)
    nodes = [x0, *interior, xn]
    F = np.zeros((n, 4))
    J = np.zeros((n, 4, len(theta)))
    for i in range(n):
        xf, V = flow_with_jacobian(nodes[i], h[i], cfg)
        F[i] = xf - nodes[i + 1]
        J[i, :, 2 + i] = vector_field(xf, cfg)  # d/dh_i
        if i == 0:
            J[i, :, 0] = V @ dx0
        else:
            cols = slice(2 + n + 4 * (i - 1), 2 + n + 4 * i)
            J[i, :, cols] = V
        if i == n - 1:
            J[i, :, 1] = -dxn
        else:
            cols = slice(2 + n + 4 * i, 2 + n + 4 * (i + 1))
            J[i, :, cols] -= np.eye(4)
    return F.reshape(-1), J.reshape(-1, len(theta)), nodes


def refine(
    cand: IntersectionCandidate,
    man_u: LocalManifold,
    man_s: LocalManifold,
    segments: int = 10,
    tol: float = SHOOTING_TOL,
    max_iter: int = SHOOTING_MAX_ITER,
    label: str = "",
) -> Homoclinic:
    """Newton-refine a mined candidate into a high-precision connection."""
    cfg = man_u.cfg
    n = segments
    T0 = cand.connection_time
    theta = np.zeros(2 + n + 4 * (n - 1))
    theta[0], theta[1] = cand.phi_unstable, cand.phi_stable
    theta[2 : 2 + n] = T0 / n
    x = man_u.boundary_point(cand.phi_unstable)
    for i in range(n - 1):
        x = flow(x, T0 / n, cfg)
        theta[2 + n + 4 * i : 2 + n + 4 * (i + 1)] = x
    return _newton_shoot(theta, n, man_u, man_s, cfg, tol, max_iter, label,
                         masses=man_u.equilibrium.masses)


def _newton_shoot(theta, n, man_u, man_s, cfg, tol, max_iter, label, masses):
    best = np.inf
    for it in range(max_iter):
        F, J, nodes = _shooting_residual_jacobian(theta, n, man_u, man_s, cfg)
        resid = float(np.max(np.abs(F)))
        best = min(best, resid)
        if resid < tol:
            return _package(theta, n, nodes, resid, cfg, label, masses, it)
        if resid > 1e4:
            break
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        cap = 0.5
        s = np.max(np.abs(step))
        if s > cap:
            step *= cap / s
        theta = theta + step
        theta[2 : 2 + n] = np.maximum(theta[2 : 2 + n], 1e-6)
    raise RefinementFailureError(
        f"shooting stalled at residual {best:.3e} after {max_iter} iterations"
    )


def _package(theta, n, nodes, resid, cfg, label, masses, iterations):
    h = theta[2 : 2 + n]
    hom = Homoclinic(
        label=label,
        phi_unstable=float(theta[0] % (2 * math.pi)),
        phi_stable=float(theta[1] % (2 * math.pi)),
        connection_time=float(np.sum(h)),
        nodes=np.array(nodes),
        durations=np.array(h),
        residual=resid,
        energy=float(jacobi_integral(nodes[0], cfg)),
        masses=masses,
    )
    hom.newton_iterations = iterations
    return hom


def reconverge(
    hom: Homoclinic,
    man_u: LocalManifold,
    man_s: LocalManifold,
    tol: float = SHOOTING_TOL,
    max_iter: int = SHOOTING_MAX_ITER,
) -> Homoclinic:
    """Re-Newton an existing connection against (possibly new) manifolds."""
    n = hom.segments
    theta = np.zeros(2 + n + 4 * (n - 1))
    theta[0], theta[1] = hom.phi_unstable, hom.phi_stable
    theta[2 : 2 + n] = hom.durations
    theta[2 + n :] = hom.nodes[1:-1].reshape(-1)
    cfg = man_u.cfg
    out = _newton_shoot(
        theta, n, man_u, man_s, cfg, tol, max_iter, hom.label,
        masses=man_u.equilibrium.masses,
    )
    out.winding = hom.winding
    return out


def _extrapolate(prev: Homoclinic, cur: Homoclinic, ratio: float) -> Homoclinic:
    """First-order predictor: linear extrapolation of the shooting unknowns."""
    def unwrap(a, b):
        return b + ((a - b + math.pi) % (2 * math.pi) - math.pi)

    pu_prev = unwrap(prev.phi_unstable, cur.phi_unstable)
    ps_prev = unwrap(prev.phi_stable, cur.phi_stable)
    return replace(
        cur,
        phi_unstable=cur.phi_unstable + ratio * (cur.phi_unstable - pu_prev),
        phi_stable=cur.phi_stable + ratio * (cur.phi_stable - ps_prev),
        durations=cur.durations + ratio * (cur.durations - prev.durations),
        nodes=cur.nodes + ratio * (cur.nodes - prev.nodes),
    )


def rotate_connection(
    hom: Homoclinic,
    sign: int,
    man_u: LocalManifold,
    man_s: LocalManifold,
) -> Homoclinic:
    """Symmetric counterpart at equal masses: rotate nodes, shift angles."""
    from .atlas import rotation_phase

    R = rotation_matrix(sign)
    chi_u = rotation_phase(man_u, sign)
    chi_s = rotation_phase(man_s, sign)
    seed = replace(
        hom,
        nodes=hom.nodes @ R.T,
        phi_unstable=(hom.phi_unstable + chi_u) % (2 * math.pi),
        phi_stable=(hom.phi_stable + chi_s) % (2 * math.pi),
    )
    return reconverge(seed, man_u, man_s)


# ---------------------------------------------------------------------------
# winding vectors


def _spiral_trace(man: LocalManifold, phi: float, n_pts: int = 600,
                  inner_radius: float = 1e-6):
    """Configuration-space trace from the boundary point into the point."""
    lam = man.lam
    alpha = abs(lam.real)
    t_end = math.log(1.0 / inner_radius) / alpha
    t = np.linspace(0.0, t_end, n_pts)
    sgn = -1.0 if man.side == "unstable" else +1.0
    z = np.exp(lam * (sgn * t)) * np.exp(1j * phi)
    pts = man.eval_real(z)
    return pts[:, [0, 2]]


def _orbit_trace(hom: Homoclinic, cfg, pts_per_segment: int = 400):
    out = []
    for i in range(hom.segments):
        sol = flow(hom.nodes[i], hom.durations[i], cfg, dense=True)
        t = np.linspace(0.0, hom.durations[i], pts_per_segment, endpoint=False)
        vals = sol.sol(t)
        out.append(vals[[0, 2], :].T)
    out.append(hom.nodes[-1][None, [0, 2]])
    return np.concatenate(out, axis=0)


def closed_loop(hom: Homoclinic, man_u: LocalManifold, man_s: LocalManifold):
    """Closed configuration-space loop through the equilibrium."""
    eq_xy = man_u.equilibrium.position
    spiral_out = _spiral_trace(man_u, hom.phi_unstable)[::-1]  # eq -> boundary
    spiral_in = _spiral_trace(man_s, hom.phi_stable)  # boundary -> eq
    orbit = _orbit_trace(hom, man_u.cfg)
    loop = np.concatenate(
        [eq_xy[None, :], spiral_out, orbit, spiral_in, eq_xy[None, :]], axis=0
    )
    return loop


def _winding_of_polyline(loop: np.ndarray, center: np.ndarray,
                         refine_fn=None) -> float:
    rel = loop - center[None, :]
    radii = np.hypot(rel[:, 0], rel[:, 1])
    if np.min(radii) < WINDING_CENTER_GUARD:
        raise FourBodyError(
            f"orbit passes within {np.min(radii):.2e} of a winding center"
        )
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    d = np.diff(ang)
    d = (d + np.pi) % (2 * np.pi) - np.pi
    if np.max(np.abs(d)) > WINDING_MAX_ANGLE and refine_fn is not None:
        return refine_fn(center)
    return float(np.sum(d) / (2 * np.pi))


def winding_vector(
    hom: Homoclinic,
    man_u: LocalManifold,
    man_s: LocalManifold,
    equilibria: list[Equilibrium] | None = None,
) -> tuple[int, ...]:
    """Integer loop counts around (L1, L2, L3, m1, m2, m3)."""
    cfg = man_u.cfg
    if equilibria is None:
        equilibria = find_equilibria(man_u.equilibrium.masses)
    by_label = {e.label: e for e in equilibria}
    centers = [by_label[lab].position for lab in ("L1", "L2", "L3")]
    centers += [cfg.positions[j] for j in range(3)]
    loop = closed_loop(hom, man_u, man_s)

    def with_denser_loop(center):
        dense = closed_loop_dense(hom, man_u, man_s)
        return _winding_of_polyline(dense, center, refine_fn=None)

    out = []
    for c in centers:
        w = _winding_of_polyline(loop, np.asarray(c), refine_fn=with_denser_loop)
        if abs(w - round(w)) > WINDING_ROUND_TOL:
            raise FourBodyError(
                f"non-integer winding {w:.3f} about center {c}"
            )
        out.append(int(round(w)))
    return tuple(out)


def closed_loop_dense(hom, man_u, man_s):
    eq_xy = man_u.equilibrium.position
    spiral_out = _spiral_trace(man_u, hom.phi_unstable, n_pts=6000)[::-1]
    spiral_in = _spiral_trace(man_s, hom.phi_stable, n_pts=6000)
    orbit = _orbit_trace(hom, man_u.cfg, pts_per_segment=4000)
    return np.concatenate(
        [eq_xy[None, :], spiral_out, orbit, spiral_in, eq_xy[None, :]], axis=0
    )


def order_connections(homs: list[Homoclinic]) -> list[Homoclinic]:
    """Ascending connection time; ties (symmetric pairs) stay adjacent."""
    return sorted(homs, key=lambda h: (h.connection_time, h.label))


# ---------------------------------------------------------------------------
# continuation of ensembles


@dataclass
class ContinuationControls:
    step: float = 0.01  # parameter-path step (fraction of path arclength)
    min_step: float = 1e-5
    max_step: float = 0.05
    max_steps: int = 2000  # total attempt budget across the whole path
    residual_tol: float = 1e-10


@dataclass
class ContinuationRun:
    parameters: list = field(default_factory=list)  # accepted (m1, m3)
    outcomes: list = field(default_factory=list)  # per-step dicts
    connections: list = field(default_factory=list)  # surviving Homoclinics
    status: str = "ok"


def _aligned_equilibrium(point, masses, reference: Equilibrium) -> Equilibrium:
    """Equilibrium record at a continued point with phase-aligned eigenvectors."""
    cfg = primary_positions(masses)
    vals, vecs = _eigen_data(cfg, point)
    vecs = np.array(vecs)
    ref_vals = np.asarray(reference.eigenvalues)
    ref_vecs = np.asarray(reference.eigenvectors)
    order = []
    used = set()
    for rv in ref_vals:
        k = int(
            np.argmin(
                [np.inf if i in used else abs(vals[i] - rv) for i in range(4)]
            )
        )
        used.add(k)
        order.append(k)
    vals = vals[order]
    vecs = vecs[:, order]
    for k in range(4):
        overlap = np.vdot(ref_vecs[:, k], vecs[:, k])
        if abs(overlap) > 1e-12:
            vecs[:, k] *= np.conj(overlap) / abs(overlap)
    return Equilibrium(
        label=reference.label,
        position=np.asarray(point),
        eigenvalues=vals,
        eigenvectors=vecs,
        stability=classify_eigenvalues(vals),
        masses=masses,
    )


def _continue_manifold(prev: LocalManifold, eq: Equilibrium) -> LocalManifold:
    """Re-solve at new parameters seeding from the previous coefficients."""
    order = prev.order
    seed_c = np.array(prev.P.coeffs)
    lam, xi = (
        eq.stable_pair() if prev.side == "stable" else eq.unstable_pair()
    )
    seed_c[0, 0] = eq.state
    seed_c[1, 0] = prev.scale * xi
    seed_c[0, 1] = prev.scale * np.conj(xi)
    seed = LocalManifold(
        eq, prev.side, lam, prev.scale,
        Taylor2(seed_c, conjugate_symmetric=True), order,
    )
    man = pseudo_newton_refine(seed, order)
    top = layer_max_norms(man)[order]
    if not 1e-18 <= top <= 1e-12:  # re-center the scale when it drifts
        factor = (1e-16 / top) ** (1.0 / order)
        man = pseudo_newton_refine(rescale(man, factor), order)
    return man


def continue_ensemble(
    homs: list[Homoclinic],
    man_u: LocalManifold,
    man_s: LocalManifold,
    path: list[tuple[float, float]],
    controls: ContinuationControls | None = None,
    log=None,
) -> ContinuationRun:
    """March an ensemble of connections along a path of (m1, m3) values.

    Each accepted step re-finds the equilibrium (first-order predictor,
    Newton corrector), re-solves both local manifolds seeded from the
    previous coefficients, and re-Newtons every connection.  Failures
    halve the step; a connection failing at the minimum step is retired.
    """
    controls = controls or ContinuationControls()
    run = ContinuationRun(connections=list(homs))
    m = homs[0].masses
    run.parameters.append((m.m1, m.m3))
    waypoints = [(m.m1, m.m3)] + list(path)
    eq_u = man_u.equilibrium
    cur_u, cur_s = man_u, man_s
    cur = list(homs)
    history: dict[str, tuple[float, Homoclinic]] = {}
    path_pos = 0.0
    for (a1, a3), (b1, b3) in zip(waypoints[:-1], waypoints[1:]):
        leg = math.hypot(b1 - a1, b3 - a3)
        if leg == 0:
            continue
        t = 0.0
        dt = min(controls.step, 1.0)
        attempts = 0
        while t < 1.0 - 1e-12:
            attempts += 1
            if attempts > controls.max_steps:
                run.status = "step budget exhausted"
                return run
            dt = min(dt, 1.0 - t)
            m1 = a1 + (b1 - a1) * (t + dt)
            m3 = a3 + (b3 - a3) * (t + dt)
            try:
                masses = MassParameters.from_m1_m3(m1, m3)
            except FourBodyError:
                run.status = "left the admissible simplex"
                return run
            step_log = {"m1": m1, "m3": m3, "retired": []}
            try:
                point = continue_equilibrium(cur_u.equilibrium.position, masses)
                if point is None:
                    raise RefinementFailureError("equilibrium correction failed")
                eq = _aligned_equilibrium(point, masses, cur_u.equilibrium)
                if eq.stability != "saddle-focus":
                    run.status = f"bifurcation at m1 = {m1:.5f}"
                    run.outcomes.append(step_log | {"bifurcation": True})
                    return run
                new_u = _continue_manifold(cur_u, eq)
                new_s = _continue_manifold(cur_s, eq)
                new_homs = []
                failures = []
                for hom in cur:
                    seed = hom
                    past = history.get(hom.label)
                    if past is not None and path_pos > past[0]:
                        ratio = dt * leg / (path_pos - past[0])
                        seed = _extrapolate(past[1], hom, ratio)
                    try:
                        h2 = reconverge(seed, new_u, new_s,
                                        tol=controls.residual_tol)
                        new_homs.append(h2)
                    except RefinementFailureError as err:
                        failures.append((hom, str(err)))
                if failures and dt > controls.min_step:
                    raise RefinementFailureError(
                        f"{len(failures)} connections failed"
                    )
                for hom, why in failures:
                    step_log["retired"].append((hom.label, why))
            except (RefinementFailureError, FourBodyError) as err:
                if dt <= controls.min_step:
                    run.status = f"step underflow: {err}"
                    return run
                dt = max(dt / 2.0, controls.min_step)
                continue
            # step accepted
            for hom in cur:
                history[hom.label] = (path_pos, hom)
            t += dt
            path_pos += dt * leg
            cur_u, cur_s = new_u, new_s
            cur = new_homs
            run.connections = cur
            run.parameters.append((m1, m3))
            step_log["residuals"] = [h.residual for h in cur]
            run.outcomes.append(step_log)
            if log:
                log(f"m1 = {m1:.5f}, m3 = {m3:.5f}: {len(cur)} connections")
            if not cur:
                run.status = "all connections retired"
                return run
            dt = min(dt * 2.0, controls.max_step)
    run.final_manifolds = (cur_u, cur_s)
    return run
