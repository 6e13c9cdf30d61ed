"""Local stable/unstable manifolds of saddle-focus points.

A chart P solves the infinitesimal conjugacy DP(z) diag(l1, l2) z = f(P(z))
with P(0,0) at the equilibrium and DP(0,0) the scaled eigenvector pair,
where l2 = conj(l1).  Coefficients satisfy p[n, m] = conj(p[m, n]) so the
restriction to conjugate variables traces a real surface.

Three solvers produce the same formal solution: direct order-by-order
recursion, a Newton iteration on the conjugacy operator, and a cheaper
pseudo-Newton iteration with constant-coefficient corrections.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .crfbp import Equilibrium, PrimaryConfig, primary_positions, vector_field_jacobian
from .errors import NonConvergenceError, ResonanceError
from .flow import flow
from .jets import FieldJet
from .series import Taylor2, taylor2_eval

RESONANCE_COND_LIMIT = 1e12
NEWTON_TOL = 1e-14
NEWTON_MAX_ITER = 20
SCALE_BAND = (1e-17, 1e-13)
SCALE_TARGET = 1e-16


@dataclass(frozen=True)
class LocalManifold:
    equilibrium: Equilibrium
    side: str  # "stable" | "unstable"
    lam: complex  # eigenvalue with positive imaginary part for this side
    scale: float
    P: Taylor2  # complex (N+1, N+1, 4) grid, total order <= N
    order: int

    @property
    def cfg(self) -> PrimaryConfig:
        return primary_positions(self.equilibrium.masses)

    def eval_complex(self, z1, z2):
        return taylor2_eval(self.P, z1, z2)

    def eval_real(self, z):
        """Real trace P(z, conj z); z on the closed unit disk."""
        z = np.asarray(z)
        vals = taylor2_eval(self.P, z, np.conj(z))
        return vals.real

    def boundary_point(self, phi: float) -> np.ndarray:
        return self.eval_real(np.exp(1j * np.asarray(phi)))

    def boundary_tangent(self, phi: float) -> np.ndarray:
        """d/dphi of the boundary curve."""
        dz1, dz2 = _partial_grids(self.P)
        z = np.exp(1j * phi)
        val = 1j * z * taylor2_eval(dz1, z, np.conj(z)) - 1j * np.conj(
            z
        ) * taylor2_eval(dz2, z, np.conj(z))
        return val.real

    def interior_point(self, z) -> np.ndarray:
        return self.eval_real(z)

    def conj_symmetry_defect(self) -> float:
        return self.P.conj_symmetry_defect()

    def real_trace_defect(self, K: int = 64) -> float:
        rng = np.random.default_rng(0)
        r = np.sqrt(rng.uniform(0, 1, K))
        th = rng.uniform(0, 2 * np.pi, K)
        z = r * np.exp(1j * th)
        vals = taylor2_eval(self.P, z, np.conj(z))
        return float(np.max(np.abs(vals.imag)))


def _partial_grids(P: Taylor2) -> tuple[Taylor2, Taylor2]:
    c = np.asarray(P.coeffs)
    M, N = P.degrees
    m = np.arange(M).reshape(-1, 1, 1)
    n = np.arange(N).reshape(1, -1, 1)
    d1 = (c * m)[1:, :, :]
    d2 = (c * n)[:, 1:, :]
    return Taylor2(d1), Taylor2(d2)


def _side_pair(eq: Equilibrium, side: str):
    if side == "stable":
        return eq.stable_pair()
    if side == "unstable":
        return eq.unstable_pair()
    raise ValueError(f"side must be 'stable' or 'unstable', got {side!r}")


def _load_jet(eq: Equilibrium, order: int, coeffs=None, jacobian=False) -> FieldJet:
    cfg = primary_positions(eq.masses)
    jet = FieldJet(cfg, order + 1, order + 1, dtype=np.complex128, jacobian=jacobian)
    if coeffs is not None:
        jet.load_rect(np.asarray(coeffs))
    return jet


def _homological_solve(Df0, lam, ell, rhs_rows):
    """Solve [Df(x0) - (m l1 + n l2) I] p = rhs for every entry of order ell.

    rhs_rows has one row per power m of the first variable (m = 0..ell).
    """
    lam2 = np.conj(lam)
    m = np.arange(ell + 1)
    shifts = m * lam + (ell - m) * lam2
    mats = Df0[None, :, :] - shifts[:, None, None] * np.eye(4)[None, :, :]
    conds = np.linalg.cond(mats)
    if np.max(conds) > RESONANCE_COND_LIMIT:
        raise ResonanceError(
            f"homological matrix at order {ell} has condition {np.max(conds):.2e}"
        )
    return np.linalg.solve(mats, rhs_rows[..., None])[..., 0]


def _order_weights(lam: complex, ell: int) -> np.ndarray:
    m = np.arange(ell + 1)
    return m * lam + (ell - m) * np.conj(lam)


def solve_recursion(eq: Equilibrium, side: str, scale: float, order: int) -> LocalManifold:
    """Direct order-by-order solution of the homological equations."""
    lam, xi = _side_pair(eq, side)
    jet = _load_jet(eq, order)
    Df0 = vector_field_jacobian(eq.state, primary_positions(eq.masses))
    M = jet.M
    d0 = np.zeros((M, 4), dtype=np.complex128)
    d0[0] = eq.state
    jet.set_chart_diag(0, d0)
    jet.refresh(0)
    d1 = np.zeros((M, 4), dtype=np.complex128)
    d1[1] = scale * xi
    d1[0] = scale * np.conj(xi)
    jet.set_chart_diag(1, d1)
    jet.refresh(1)
    for ell in range(2, order + 1):
        jet.refresh(ell)  # chart layer ell is still zero: F layer equals R
        rhs = -jet.F[ell, : ell + 1]
        sol = _homological_solve(Df0, lam, ell, rhs)
        layer = np.zeros((M, 4), dtype=np.complex128)
        layer[: ell + 1] = sol
        jet.set_chart_diag(ell, layer)
        jet.refresh(ell)
    P = Taylor2(jet.chart_rect(), conjugate_symmetric=True)
    return LocalManifold(eq, side, lam, scale, P, order)


def linear_manifold(eq: Equilibrium, side: str, scale: float, order: int) -> LocalManifold:
    """First-order data only; seed for the Newton solvers."""
    lam, xi = _side_pair(eq, side)
    c = np.zeros((order + 1, order + 1, 4), dtype=np.complex128)
    c[0, 0] = eq.state
    c[1, 0] = scale * xi
    c[0, 1] = scale * np.conj(xi)
    return LocalManifold(eq, side, lam, scale, Taylor2(c, conjugate_symmetric=True), order)


def _psi_layers(jet: FieldJet, lam: complex, order: int) -> list[np.ndarray]:
    """Layers of -Psi[P] = f(P) - DP Lambda sigma for total orders <= order."""
    out = []
    for ell in range(order + 1):
        w = _order_weights(lam, ell)[:, None]
        rows = jet.F[ell, : ell + 1] - w * jet.chart[ell, : ell + 1]
        out.append(rows)
    return out


def _refine(
    man: LocalManifold,
    order: int,
    full_newton: bool,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> LocalManifold:
    eq = man.equilibrium
    lam = man.lam
    Df0 = vector_field_jacobian(eq.state, primary_positions(eq.masses))
    coeffs = np.zeros((order + 1, order + 1, 4), dtype=np.complex128)
    k = min(man.order, order) + 1
    coeffs[:k, :k] = np.asarray(man.P.coeffs)[:k, :k]
    grow_count = 0
    prev_norm = np.inf
    for _ in range(max_iter):
        jet = _load_jet(eq, order, coeffs, jacobian=full_newton)
        for ell in range(jet.L + 1):
            jet.refresh(ell)
        q = _psi_layers(jet, lam, order)
        delta = np.zeros((order + 1, jet.M, 4), dtype=np.complex128)
        for ell in range(2, order + 1):
            rhs = -q[ell]
            if full_newton:
                rhs = rhs - _matvec_layers(jet.A, delta, ell, jet.M)
            sol = _homological_solve(Df0, lam, ell, rhs)
            delta[ell, : ell + 1] = sol
        step = np.max(np.sum(np.abs(delta), axis=(0, 1)))
        for ell in range(2, order + 1):
            for m in range(ell + 1):
                coeffs[m, ell - m] += delta[ell, m]
        if step < tol:
            P = Taylor2(coeffs, conjugate_symmetric=True)
            return LocalManifold(eq, man.side, lam, man.scale, P, order)
        if step > prev_norm:
            grow_count += 1
            if grow_count >= 3:
                raise NonConvergenceError(
                    f"correction norms grew 3 times (last {step:.3e})"
                )
        else:
            grow_count = 0
        prev_norm = step
    raise NonConvergenceError(f"no convergence in {max_iter} iterations")


def _matvec_layers(A, delta, ell, M):
    """Order-``ell`` layer of (A - A00) * delta, diag-major matrix x vector."""
    out = np.zeros((ell + 1, 4), dtype=np.complex128)
    for l2 in range(max(0, ell - (A.shape[0] - 1)), ell):
        l1 = ell - l2
        d = delta[l2]  # (M, 4)
        if not d.any():
            continue
        a = A[l1]  # (M, 4, 4)
        if not a.any():
            continue
        prod = np.zeros((2 * M - 1, 4), dtype=np.complex128)
        for i in range(4):
            for jdx in range(4):
                aij = a[:, i, jdx]
                if not aij.any():
                    continue
                prod[:, i] += np.convolve(aij, d[:, jdx])
        out += prod[: ell + 1]
    return out


def newton_refine(man: LocalManifold, order: int, **kw) -> LocalManifold:
    """Quadratic refinement with non-constant-coefficient corrections."""
    return _refine(man, order, full_newton=True, **kw)


def pseudo_newton_refine(man: LocalManifold, order: int, **kw) -> LocalManifold:
    """Refinement with diagonal constant-coefficient corrections."""
    return _refine(man, order, full_newton=False, **kw)


def solve_manifold(
    eq: Equilibrium,
    side: str,
    order: int,
    scale: float | None = None,
    probe_order: int | None = None,
) -> LocalManifold:
    """Default pipeline: recursion to a probe order, pseudo-Newton to order."""
    if scale is None:
        scale = choose_scaling(eq, side, order, probe_order)
    n0 = max(10, order // 2) if probe_order is None else probe_order
    n0 = min(n0, order)
    base = solve_recursion(eq, side, scale, n0)
    if n0 == order:
        return base
    return pseudo_newton_refine(base, order)


# ---------------------------------------------------------------------------
# error indicators


def defect(man: LocalManifold, sum_order: int | None = None) -> float:
    """l1 a-posteriori defect through総 order ``sum_order`` (default 2N)."""
    order = man.order
    sum_order = 2 * order if sum_order is None else sum_order
    jet = _load_jet(man.equilibrium, sum_order)
    jet.load_rect(np.asarray(man.P.coeffs))
    total = 0.0
    for ell in range(sum_order + 1):
        jet.refresh(ell)
        w = _order_weights(man.lam, ell)[:, None]
        rows = w * jet.chart[ell, : ell + 1] - jet.F[ell, : ell + 1]
        total += float(np.sum(np.linalg.norm(rows, axis=1)))
    return total


def conjugacy_error(
    man: LocalManifold, tau: float = 0.1, K: int = 32, tol: float = 1e-13
) -> float:
    """Max mesh deviation between the numerical flow and the conjugacy."""
    cfg = man.cfg
    t = tau if man.side == "stable" else -tau
    lam1 = man.lam
    lam2 = np.conj(lam1)
    worst = 0.0
    for k in range(K):
        z = np.exp(2j * np.pi * k / K)
        x0 = man.eval_real(z)
        xf = flow(x0, t, cfg, tol=tol)
        target = taylor2_eval(
            man.P, np.exp(lam1 * t) * z, np.exp(lam2 * t) * np.conj(z)
        )
        worst = max(worst, float(np.linalg.norm(xf - target.real)))
    return worst


def layer_max_norms(man: LocalManifold) -> np.ndarray:
    """max over entries of total order k of the coefficient 2-norm."""
    c = np.asarray(man.P.coeffs)
    M, N = c.shape[:2]
    out = np.zeros(M + N - 1)
    norms = np.linalg.norm(c, axis=2)
    for ell in range(M + N - 1):
        m = np.arange(max(0, ell - N + 1), min(M - 1, ell) + 1)
        out[ell] = np.max(norms[m, ell - m]) if len(m) else 0.0
    return out


def choose_scaling(
    eq: Equilibrium,
    side: str,
    order: int,
    probe_order: int | None = None,
    target: float = SCALE_TARGET,
) -> float:
    """Eigenvector scale placing the top-order coefficients near machine eps.

    Measures the geometric decay of a cheap probe solve and extrapolates;
    the exact rescaling law p[m,n] -> (s'/s)^(m+n) p[m,n] turns the
    adjustment into arithmetic.  A few multiplicative corrections land the
    production solve inside the accepted band.
    """
    n0 = max(6, order // 2) if probe_order is None else probe_order
    n0 = min(n0, order)
    s = 1e-3
    probe = solve_recursion(eq, side, s, n0)
    h = layer_max_norms(probe)
    k_ref = max(2, n0 - 6)
    if h[n0] <= 0 or h[k_ref] <= 0:
        warnings.warn("probe coefficients vanished; falling back to scale 1e-3")
        return 1e-3
    rho = (h[n0] / h[k_ref]) ** (1.0 / (n0 - k_ref))
    if not np.isfinite(rho) or rho >= 1.0:
        warnings.warn(
            f"no geometric coefficient decay (ratio {rho:.3g}); "
            "falling back to scale 1e-3"
        )
        return 1e-3
    predicted_top = h[n0] * rho ** (order - n0)
    s = s * (target / predicted_top) ** (1.0 / order)
    for _ in range(5):
        man = solve_recursion(eq, side, s, order)
        top = layer_max_norms(man)[order]
        if SCALE_BAND[0] <= top <= SCALE_BAND[1]:
            return s
        s = s * (target / top) ** (1.0 / order)
    return s


def rescale(man: LocalManifold, factor: float) -> LocalManifold:
    """Exact rescaling: order-k coefficients pick up factor**k."""
    c = np.array(man.P.coeffs)
    M, N = c.shape[:2]
    k = (np.arange(M)[:, None] + np.arange(N)[None, :]).astype(float)
    c = c * (factor**k)[:, :, None]
    return replace(
        man, scale=man.scale * factor, P=Taylor2(c, conjugate_symmetric=True)
    )
