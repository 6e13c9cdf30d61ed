"""The planar equilateral circular restricted four-body problem.

States are numpy vectors ordered (x, xdot, y, ydot) in the co-rotating
frame.  Masses are normalized to m1 + m2 + m3 = 1 with the primaries at
the vertices of an equilateral triangle of side one, center of mass at
the origin, largest mass on the negative x axis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfigurationError, FourBodyError, SingularityError

R_MIN = 1e-8  # collision guard radius; regularization is out of scope

ROTATION_ANGLE = 2.0 * np.pi / 3.0


@dataclass(frozen=True)
class MassParameters:
    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        if abs(self.m1 + self.m2 + self.m3 - 1.0) > 1e-15:
            raise FourBodyError("masses must sum to 1")
        if not (0.0 < self.m3 <= self.m2 <= self.m1 < 1.0):
            raise FourBodyError("masses must satisfy 0 < m3 <= m2 <= m1 < 1")

    @classmethod
    def from_m1_m3(cls, m1: float, m3: float) -> "MassParameters":
        return cls(m1, 1.0 - m1 - m3, m3)

    def as_tuple(self):
        return (self.m1, self.m2, self.m3)


EQUAL_MASSES = MassParameters(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)


@dataclass(frozen=True)
class PrimaryConfig:
    masses: MassParameters
    positions: np.ndarray  # (3, 2) rows (x_j, y_j)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def mass_values(self) -> np.ndarray:
        return np.array(self.masses.as_tuple())


def primary_positions(m: MassParameters) -> PrimaryConfig:
    """Closed-form primary positions for the normalized equilateral setup."""
    m1, m2, m3 = m.as_tuple()
    K = m2 * (m3 - m2) + m1 * (m2 + 2.0 * m3)
    if abs(K) < 1e-14:
        raise DegenerateConfigurationError(f"K = {K:.3e}")
    root = np.sqrt(m2 * m2 + m2 * m3 + m3 * m3)
    sgn = 1.0 if K > 0 else -1.0  # the |K|/K factors
    x1 = -sgn * root
    x2 = sgn * ((m2 - m3) * m3 + m1 * (2.0 * m2 + m3)) / (2.0 * root)
    x3 = abs(K) / (2.0 * root)
    y2 = -np.sqrt(3.0) * m3 / (2.0 * root)
    y3 = np.sqrt(3.0) * m2 / (2.0 * root)
    pos = np.array([[x1, 0.0], [x2, y2], [x3, y3]])
    return PrimaryConfig(masses=m, positions=pos)


def _radii(cfg: PrimaryConfig, x, y):
    dx = x - cfg.positions[:, 0].reshape((3,) + (1,) * np.ndim(x))
    dy = y - cfg.positions[:, 1].reshape((3,) + (1,) * np.ndim(x))
    return np.sqrt(dx * dx + dy * dy), dx, dy


def omega(cfg: PrimaryConfig, x, y):
    """Effective potential of the co-rotating frame."""
    r, _, _ = _radii(cfg, x, y)
    mvals = cfg.mass_values.reshape((3,) + (1,) * np.ndim(x))
    return 0.5 * (x * x + y * y) + np.sum(mvals / r, axis=0)


def omega_gradient(cfg: PrimaryConfig, x, y, guard: bool = True):
    r, dx, dy = _radii(cfg, x, y)
    if guard and np.min(r) < R_MIN:
        raise SingularityError(f"min primary distance {np.min(r):.3e} < {R_MIN:.1e}")
    mvals = cfg.mass_values.reshape((3,) + (1,) * np.ndim(x))
    inv3 = mvals / (r * r * r)
    gx = x - np.sum(dx * inv3, axis=0)
    gy = y - np.sum(dy * inv3, axis=0)
    return gx, gy


def omega_hessian(cfg: PrimaryConfig, x, y):
    r, dx, dy = _radii(cfg, x, y)
    mvals = cfg.mass_values.reshape((3,) + (1,) * np.ndim(x))
    inv3 = mvals / r**3
    inv5 = mvals / r**5
    oxx = 1.0 - np.sum(inv3, axis=0) + 3.0 * np.sum(dx * dx * inv5, axis=0)
    oyy = 1.0 - np.sum(inv3, axis=0) + 3.0 * np.sum(dy * dy * inv5, axis=0)
    oxy = 3.0 * np.sum(dx * dy * inv5, axis=0)
    return oxx, oxy, oyy


def vector_field(state, cfg: PrimaryConfig):
    """Equations of motion in the co-rotating frame: (x, xdot, y, ydot)'."""
    state = np.asarray(state, dtype=float)
    x, xd, y, yd = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    gx, gy = omega_gradient(cfg, x, y)
    return np.stack([xd, 2.0 * yd + gx, yd, -2.0 * xd + gy], axis=-1)


def vector_field_jacobian(state, cfg: PrimaryConfig) -> np.ndarray:
    x, y = state[0], state[2]
    oxx, oxy, oyy = omega_hessian(cfg, x, y)
    return np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [oxx, 0.0, oxy, 2.0],
            [0.0, 0.0, 0.0, 1.0],
            [oxy, -2.0, oyy, 0.0],
        ]
    )


def jacobi_integral(state, cfg: PrimaryConfig):
    """Conserved quantity E = -(xdot^2 + ydot^2) + 2*Omega(x, y)."""
    state = np.asarray(state, dtype=float)
    x, xd, y, yd = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
    r, _, _ = _radii(cfg, x, y)
    if np.min(r) <= 0.0:
        raise SingularityError("state coincides with a primary")
    return -(xd * xd + yd * yd) + 2.0 * omega(cfg, x, y)


def rotation_matrix(sign: int = +1) -> np.ndarray:
    """The 4x4 rotation by +-120 degrees acting on (x, xdot, y, ydot)."""
    th = sign * ROTATION_ANGLE
    c, s = np.cos(th), np.sin(th)
    return np.array(
        [
            [c, 0.0, -s, 0.0],
            [0.0, c, 0.0, -s],
            [s, 0.0, c, 0.0],
            [0.0, s, 0.0, c],
        ]
    )


# ---------------------------------------------------------------------------
# equilibria


STABILITY_CLASSES = ("saddle-focus", "saddle-center", "center-center", "other")


@dataclass(frozen=True)
class Equilibrium:
    label: str
    position: np.ndarray  # (2,)
    eigenvalues: np.ndarray  # (4,) complex
    eigenvectors: np.ndarray  # (4, 4) complex, columns match eigenvalues
    stability: str
    masses: MassParameters

    def __post_init__(self):
        for name in ("position", "eigenvalues", "eigenvectors"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def state(self) -> np.ndarray:
        return np.array([self.position[0], 0.0, self.position[1], 0.0])

    def stable_pair(self):
        """(eigenvalue, eigenvector) with negative real part and positive imag."""
        return self._pair(-1)

    def unstable_pair(self):
        return self._pair(+1)

    def _pair(self, side):
        idx = [
            i
            for i, lam in enumerate(self.eigenvalues)
            if side * lam.real > 0 and lam.imag > 0
        ]
        if not idx:
            raise FourBodyError(f"{self.label}: no saddle-focus pair on side {side}")
        i = idx[0]
        return complex(self.eigenvalues[i]), np.array(self.eigenvectors[:, i])


def _normalize_eigenvector(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    for comp in v:
        if abs(comp) > 1e-9:
            return v * (np.conj(comp) / abs(comp))
    return v


def _eigen_data(cfg: PrimaryConfig, point: np.ndarray):
    state = np.array([point[0], 0.0, point[1], 0.0])
    J = vector_field_jacobian(state, cfg)
    vals, vecs = np.linalg.eig(J)
    order = np.lexsort((vals.imag, vals.real))
    vals = vals[order]
    vecs = vecs[:, order]
    for k in range(4):
        vecs[:, k] = _normalize_eigenvector(vecs[:, k])
    return vals, vecs


def classify_eigenvalues(vals: np.ndarray, tol: float = 1e-9) -> str:
    """Saddle-focus iff the spectrum is {-a+-ib, a+-ib} with a, b > tol."""
    re, im = vals.real, vals.imag
    if np.all(np.abs(re) > tol) and np.all(np.abs(im) > tol):
        return "saddle-focus"
    n_real = int(np.sum((np.abs(im) <= tol) & (np.abs(re) > tol)))
    n_imag = int(np.sum((np.abs(re) <= tol) & (np.abs(im) > tol)))
    if n_real == 2 and n_imag == 2:
        return "saddle-center"
    if n_imag == 4:
        return "center-center"
    return "other"


def classify_stability(eq: Equilibrium, tol: float = 1e-9) -> str:
    return classify_eigenvalues(np.asarray(eq.eigenvalues), tol)


def _newton_root(cfg, p0, tol=1e-13, max_iter=60):
    p = np.array(p0, dtype=float)
    for _ in range(max_iter):
        r, _, _ = _radii(cfg, p[0], p[1])
        if np.min(r) < 1e-4:
            return None
        gx, gy = omega_gradient(cfg, p[0], p[1], guard=False)
        g = np.array([gx, gy])
        if not np.all(np.isfinite(g)):
            return None
        if np.linalg.norm(g) < tol:
            return p
        oxx, oxy, oyy = omega_hessian(cfg, p[0], p[1])
        H = np.array([[oxx, oxy], [oxy, oyy]])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if np.linalg.norm(step) > 0.8:
            step *= 0.8 / np.linalg.norm(step)
        p = p - step
        if np.max(np.abs(p)) > 5.0:
            return None
    return None


def _assign_labels(points: list[np.ndarray], cfg: PrimaryConfig) -> list[str]:
    """Label by radius band and angular sector relative to the primaries.

    L0 is the innermost point; the remaining points split into three radius
    bands of three (inner L1-3, middle L4-6, outer L7-9).  Within a band the
    index follows the primary whose direction (or opposite direction, for
    bands sitting between primaries) is nearest in angle, which makes the
    120-degree rotation act as (0)(1,2,3)(4,5,6)(7,8,9) at equal masses.
    """
    centroid = cfg.positions.mean(axis=0)
    pts = np.array(points) - centroid  # measure bands/sectors from the triangle center
    radii = np.linalg.norm(pts, axis=1)
    order = np.argsort(radii)
    labels = [""] * len(points)
    labels[order[0]] = "L0"
    rest = order[1:]
    # six points always sit outside the primary triangle; any missing points
    # (8- or 9-equilibria regimes) come from the inner band
    outer = rest[-3:] if len(rest) >= 3 else rest
    mid = rest[-6:-3] if len(rest) >= 6 else rest[: max(0, len(rest) - 3)]
    inner = rest[:-6] if len(rest) > 6 else np.array([], dtype=int)
    rel = cfg.positions - centroid
    anchor = np.arctan2(rel[:, 1], rel[:, 0])
    band_names = [("L1", "L2", "L3"), ("L4", "L5", "L6"), ("L7", "L8", "L9")]
    for b, band in enumerate((inner, mid, outer)):
        if len(band) == 0:
            continue
        names = band_names[b]
        ang = np.arctan2(pts[band, 1], pts[band, 0])
        # pick the alignment (toward a primary or opposite) fitting the band best
        direct = np.abs(_wrap(ang[:, None] - anchor[None, :]))
        flipped = np.abs(_wrap(ang[:, None] - anchor[None, :] - np.pi))
        use = direct if direct.min(axis=1).sum() <= flipped.min(axis=1).sum() else flipped
        assigned = set()
        for i in np.argsort(use.min(axis=1)):
            choices = np.argsort(use[i])
            for c in choices:
                if c not in assigned:
                    labels[band[i]] = names[c]
                    assigned.add(c)
                    break
    return labels


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def find_equilibria(
    m: MassParameters,
    seed_radii: tuple[float, float] = (0.2, 1.5),
    n_angles: int = 48,
    n_radii: int = 12,
    merge_tol: float = 1e-8,
) -> list[Equilibrium]:
    """All critical points of Omega from a polar seed grid plus the origin."""
    cfg = primary_positions(m)
    seeds = [np.zeros(2)]
    for rad in np.linspace(*seed_radii, n_radii):
        for th in np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False):
            seeds.append(np.array([rad * np.cos(th), rad * np.sin(th)]))
    found: list[np.ndarray] = []
    sector_hit = np.zeros(n_angles, dtype=bool)
    for k, seed in enumerate(seeds):
        root = _newton_root(cfg, seed)
        if root is None:
            continue
        if k > 0:
            sector_hit[(k - 1) % n_angles] = True
        if all(np.linalg.norm(root - q) > merge_tol for q in found):
            found.append(root)
    if not np.all(sector_hit):
        warnings.warn(
            f"{int(np.sum(~sector_hit))} seed sectors never converged; "
            "an equilibrium may have been missed",
            stacklevel=2,
        )
    labels = _assign_labels(found, cfg)
    out = []
    for point, label in zip(found, labels):
        vals, vecs = _eigen_data(cfg, point)
        out.append(
            Equilibrium(
                label=label,
                position=point,
                eigenvalues=vals,
                eigenvectors=vecs,
                stability=classify_eigenvalues(vals),
                masses=m,
            )
        )
    out.sort(key=lambda e: int(e.label[1:]))
    return out


def equilibrium_named(m: MassParameters, label: str) -> Equilibrium:
    for eq in find_equilibria(m):
        if eq.label == label:
            return eq
    raise FourBodyError(f"no equilibrium labeled {label}")


def continue_equilibrium(
    point: np.ndarray, m_new: MassParameters, max_halvings: int = 6
) -> np.ndarray | None:
    """Newton-correct an equilibrium position at nearby mass parameters."""
    cfg = primary_positions(m_new)
    root = _newton_root(cfg, point)
    return root


# ---------------------------------------------------------------------------
# stability scan over the mass simplex


@dataclass
class SimplexScan:
    rows: list  # (m1, m3, flags dict or None)
    labels: tuple = ("L0", "L4", "L5", "L6")


def admissible_m3_range(m1: float) -> tuple[float, float]:
    lo = max(0.0, 1.0 - 2.0 * m1)
    hi = (1.0 - m1) / 2.0
    return lo, hi


def scan_simplex(
    n_m1: int = 12,
    n_m3: int = 8,
    m1_range: tuple[float, float] = (1.0 / 3.0, 0.99),
    labels: tuple = ("L0", "L4", "L5", "L6"),
) -> SimplexScan:
    """Track L0/L4/L5/L6 from the equal-mass corner over an (m1, m3) grid.

    Equilibria are continued column by column with adaptive parameter
    halving on Newton failure; each admissible grid point gets one
    saddle-focus flag per tracked point (None marks a continuation
    dead-end).
    """
    eqs = {e.label: e for e in find_equilibria(EQUAL_MASSES)}
    tracked0 = {lab: np.array(eqs[lab].position) for lab in labels}
    rows = []
    m1_values = np.linspace(m1_range[0] + 1e-9, m1_range[1], n_m1)
    prev_col: dict[float, dict] = {}
    col_seed = {lab: (EQUAL_MASSES, dict(tracked0)) for lab in labels}
    last_start = (EQUAL_MASSES, dict(tracked0))
    for m1 in m1_values:
        lo, hi = admissible_m3_range(m1)
        if hi <= max(lo, 1e-6):
            continue
        m3_values = np.linspace(max(lo + 1e-9, 1e-4), hi - 1e-9, n_m3)
        # walk down in m3 from the most symmetric admissible point
        m3_values = m3_values[::-1]
        masses0, positions = last_start
        current = dict(positions)
        started = False
        for m3 in m3_values:
            target = MassParameters.from_m1_m3(m1, m3)
            flags = {}
            new_positions = {}
            for lab in labels:
                pos = _continue_with_halving(current.get(lab), masses0, target)
                if pos is None:
                    flags[lab] = None
                else:
                    cfg = primary_positions(target)
                    vals, _ = _eigen_data(cfg, pos)
                    flags[lab] = classify_eigenvalues(vals) == "saddle-focus"
                    new_positions[lab] = pos
            rows.append((float(m1), float(m3), flags))
            for lab, pos in new_positions.items():
                current[lab] = pos
            masses0 = target
            if not started:
                last_start = (target, dict(current))
                started = True
    return SimplexScan(rows=rows, labels=labels)


def _continue_with_halving(point, m_from: MassParameters, m_to: MassParameters, depth=0):
    # tight acceptance radius keeps the continuation on its own branch
    if point is None:
        return None
    root = continue_equilibrium(point, m_to)
    if root is not None and np.linalg.norm(root - point) < 0.05:
        return root
    if depth >= 7:
        return None
    mid = MassParameters.from_m1_m3(
        0.5 * (m_from.m1 + m_to.m1), 0.5 * (m_from.m3 + m_to.m3)
    )
    half = _continue_with_halving(point, m_from, mid, depth + 1)
    return _continue_with_halving(half, mid, m_to, depth + 1)
