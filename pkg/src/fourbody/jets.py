"""Formal-series composition of the four-body vector field.

Two engines cover the two gradings the pipeline needs:

* ``FieldJet`` extends the composition f(P) (and optionally Df(P)) one
  total order at a time.  It backs the homological recursion for local
  manifolds, a-posteriori defect sums, and the public series form of the
  vector field.  Internally series are stored diagonal-major: row ``ell``
  holds the homogeneous part of total order ``ell`` indexed by the power
  of the first variable, so products of homogeneous layers are plain 1-D
  convolutions.

* ``AdvectionJet`` extends f(Gamma) one time order at a time for the
  Taylor integration of boundary arcs, with rfft-cached space
  convolutions.

The -3/2 powers of the squared primary distances are produced by
coefficient recursions that only divide by constant terms, so both
engines stay inside truncated polynomial algebra.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import next_fast_len as _next_fast_len

from .crfbp import PrimaryConfig
from .errors import SingularLeadingTermError
from .series import Taylor2

POWER_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# one-variable coefficient recursions (space-direction setup for advection)


def power_series_1d(w: np.ndarray, alpha: float) -> np.ndarray:
    """Coefficients of w(s)**alpha for a coefficient vector w, |w[0]| > 0."""
    n = w.shape[0]
    if abs(w[0]) <= POWER_FLOOR:
        raise SingularLeadingTermError(f"|w0| = {abs(w[0]):.3e}")
    q = np.zeros_like(w)
    q[0] = w[0] ** alpha
    for k in range(1, n):
        j = np.arange(1, k + 1)
        q[k] = np.sum((alpha * j - (k - j)) * w[j] * q[k - j]) / (k * w[0])
    return q


def reciprocal_series_1d(w: np.ndarray) -> np.ndarray:
    n = w.shape[0]
    if abs(w[0]) <= POWER_FLOOR:
        raise SingularLeadingTermError(f"|w0| = {abs(w[0]):.3e}")
    r = np.zeros_like(w)
    r[0] = 1.0 / w[0]
    for k in range(1, n):
        r[k] = -np.dot(w[1 : k + 1], r[k - 1 :: -1]) / w[0]
    return r


# ---------------------------------------------------------------------------
# diagonal-major engine (total-order grading)


class FieldJet:
    """Order-by-order composition of f (and Df) along a two-variable series.

    Grids are rectangles of degrees (M, N); row ``ell`` of every internal
    array holds coefficients of total order ``ell`` indexed by the first
    variable's power (absolute position, zero padded).
    """

    ALPHA = -1.5

    def __init__(self, cfg: PrimaryConfig, M: int, N: int, dtype=np.complex128,
                 jacobian: bool = False):
        self.cfg = cfg
        self.M, self.N = M, N
        self.L = (M - 1) + (N - 1)
        self.dtype = dtype
        self.jacobian = jacobian
        shape = (self.L + 1, M)
        z = lambda: np.zeros(shape, dtype=dtype)
        self.chart = np.zeros((self.L + 1, M, 4), dtype=dtype)
        self.S2 = z()
        self.w = np.zeros((3,) + shape, dtype=dtype)
        self.u = np.zeros((3,) + shape, dtype=dtype)
        self.XU = np.zeros((3,) + shape, dtype=dtype)
        self.YU = np.zeros((3,) + shape, dtype=dtype)
        self.F = np.zeros((self.L + 1, M, 4), dtype=dtype)
        if jacobian:
            self.XX = z()
            self.YY = z()
            self.XY = z()
            self.v = np.zeros((3,) + shape, dtype=dtype)
            self.Sxx = np.zeros((3,) + shape, dtype=dtype)
            self.Syy = np.zeros((3,) + shape, dtype=dtype)
            self.Sxy = np.zeros((3,) + shape, dtype=dtype)
            self.A = np.zeros((self.L + 1, M, 4, 4), dtype=dtype)

    # -- loading -----------------------------------------------------------

    def load_rect(self, coeffs: np.ndarray, upto: int | None = None):
        """Fill chart diagonals from an (M, N, 4) rectangle grid."""
        Mc, Nc = coeffs.shape[:2]
        upto = self.L if upto is None else upto
        for ell in range(min(upto, self.L) + 1):
            m_lo, m_hi = max(0, ell - (Nc - 1)), min(Mc - 1, ell)
            for m in range(m_lo, m_hi + 1):
                self.chart[ell, m] = coeffs[m, ell - m]

    def set_chart_diag(self, ell: int, rows: np.ndarray):
        """Overwrite the order-``ell`` chart layer; rows has shape (M, 4)."""
        self.chart[ell] = rows

    def chart_rect(self) -> np.ndarray:
        return self.rect_of(self.chart)

    def rect_of(self, diag_arr: np.ndarray) -> np.ndarray:
        """Convert a diagonal-major array back to an (M, N, ...) rectangle."""
        out = np.zeros((self.M, self.N) + diag_arr.shape[2:], dtype=diag_arr.dtype)
        for ell in range(self.L + 1):
            m_lo, m_hi = max(0, ell - (self.N - 1)), min(self.M - 1, ell)
            for m in range(m_lo, m_hi + 1):
                out[m, ell - m] = diag_arr[ell, m]
        return out

    # -- layer convolutions --------------------------------------------------

    def _conv_layers(self, A: np.ndarray, B: np.ndarray, ell: int,
                     lo2: int = 0, hi2: int | None = None,
                     weight2: bool = False) -> np.ndarray:
        """Order-``ell`` layer of A*B; optionally weight B's layer by its order.

        ``lo2``/``hi2`` restrict the order of the B factor (used to exclude
        unknown layers in recursions).
        """
        hi2 = ell if hi2 is None else hi2
        out = np.zeros(A.shape[1], dtype=A.dtype)
        for l2 in range(lo2, min(hi2, ell) + 1):
            l1 = ell - l2
            a = A[l1]
            b = B[l2]
            if not (a.any() and b.any()):
                continue
            c = np.convolve(a, b)[: self.M]
            out += l2 * c if weight2 else c
        return out

    # -- main sweep ----------------------------------------------------------

    def refresh(self, ell: int):
        """(Re)compute every intermediate's order-``ell`` layer from the chart."""
        X = self.chart[..., 0]
        Y = self.chart[..., 2]
        mvals = self.cfg.mass_values
        px = self.cfg.positions[:, 0]
        py = self.cfg.positions[:, 1]
        self.S2[ell] = self._conv_layers(X, X, ell) + self._conv_layers(Y, Y, ell)
        for j in range(3):
            wj = self.S2[ell] - 2.0 * px[j] * X[ell] - 2.0 * py[j] * Y[ell]
            if ell == 0:
                wj[0] += px[j] ** 2 + py[j] ** 2
            self.w[j, ell] = wj
        self._power_layers(self.w, self.u, self.ALPHA, ell)
        for j in range(3):
            self.XU[j, ell] = self._conv_layers(X, self.u[j], ell)
            self.YU[j, ell] = self._conv_layers(Y, self.u[j], ell)
        gx = X[ell].copy()
        gy = Y[ell].copy()
        for j in range(3):
            gx -= mvals[j] * (self.XU[j, ell] - px[j] * self.u[j, ell])
            gy -= mvals[j] * (self.YU[j, ell] - py[j] * self.u[j, ell])
        F = self.F[ell]
        F[:, 0] = self.chart[ell, :, 1]
        F[:, 1] = 2.0 * self.chart[ell, :, 3] + gx
        F[:, 2] = self.chart[ell, :, 3]
        F[:, 3] = -2.0 * self.chart[ell, :, 1] + gy
        if self.jacobian:
            self._refresh_jacobian(ell, X, Y, mvals, px, py)

    def _refresh_jacobian(self, ell, X, Y, mvals, px, py):
        self.XX[ell] = self._conv_layers(X, X, ell)
        self.YY[ell] = self._conv_layers(Y, Y, ell)
        self.XY[ell] = self._conv_layers(X, Y, ell)
        self._power_layers(self.w, self.v, -2.5, ell)
        oxx = np.zeros(self.M, dtype=self.dtype)
        oyy = np.zeros(self.M, dtype=self.dtype)
        oxy = np.zeros(self.M, dtype=self.dtype)
        for j in range(3):
            sxx = self.XX[ell] - 2.0 * px[j] * X[ell]
            syy = self.YY[ell] - 2.0 * py[j] * Y[ell]
            sxy = self.XY[ell] - py[j] * X[ell] - px[j] * Y[ell]
            if ell == 0:
                sxx[0] += px[j] ** 2
                syy[0] += py[j] ** 2
                sxy[0] += px[j] * py[j]
            self.Sxx[j, ell] = sxx
            self.Syy[j, ell] = syy
            self.Sxy[j, ell] = sxy
            sxxv = self._conv_layers(self.Sxx[j], self.v[j], ell)
            syyv = self._conv_layers(self.Syy[j], self.v[j], ell)
            sxyv = self._conv_layers(self.Sxy[j], self.v[j], ell)
            oxx -= mvals[j] * (self.u[j, ell] - 3.0 * sxxv)
            oyy -= mvals[j] * (self.u[j, ell] - 3.0 * syyv)
            oxy += 3.0 * mvals[j] * sxyv
        A = self.A[ell]
        A[:] = 0.0
        if ell == 0:
            oxx[0] += 1.0
            oyy[0] += 1.0
            A[0, 0, 1] = 1.0
            A[0, 1, 3] = 2.0
            A[0, 2, 3] = 1.0
            A[0, 3, 1] = -2.0
        A[:, 1, 0] = oxx
        A[:, 1, 2] = oxy
        A[:, 3, 0] = oxy
        A[:, 3, 2] = oyy

    def _power_layers(self, W, Q, alpha, ell):
        """Order-``ell`` layer of Q = W**alpha by the radial-gradient rule."""
        for j in range(3):
            w00 = W[j, 0, 0]
            if abs(w00) <= POWER_FLOOR:
                raise SingularLeadingTermError(
                    f"squared distance to primary {j + 1} has constant term "
                    f"{abs(w00):.3e}"
                )
            if ell == 0:
                Q[j, 0, :] = 0.0
                Q[j, 0, 0] = w00**alpha
                continue
            term1 = self._conv_layers(Q[j], W[j], ell, lo2=1, weight2=True)
            term2 = self._conv_layers(W[j], Q[j], ell, lo2=1, hi2=ell - 1,
                                      weight2=True)
            Q[j, ell] = (alpha * term1 - term2) / (ell * w00)


def vector_field_series(gamma: Taylor2, cfg: PrimaryConfig) -> Taylor2:
    """Truncated series of f composed with a two-variable series."""
    M, N = gamma.degrees
    jet = FieldJet(cfg, M, N, dtype=gamma.coeffs.dtype)
    jet.load_rect(np.asarray(gamma.coeffs))
    for ell in range(jet.L + 1):
        jet.refresh(ell)
    return Taylor2(jet.rect_of(jet.F))


def jacobian_series(gamma: Taylor2, cfg: PrimaryConfig) -> Taylor2:
    """Truncated series of Df composed with a two-variable series."""
    M, N = gamma.degrees
    jet = FieldJet(cfg, M, N, dtype=gamma.coeffs.dtype, jacobian=True)
    jet.load_rect(np.asarray(gamma.coeffs))
    for ell in range(jet.L + 1):
        jet.refresh(ell)
    return Taylor2(jet.rect_of(jet.A))


# ---------------------------------------------------------------------------
# time-graded engine for arc advection


class _CachedBlocks:
    """Time blocks of a series with cached space-direction rffts."""

    __slots__ = ("vals", "fft", "nfft")

    def __init__(self, M, N, nfft, lead=()):
        self.vals = np.zeros(lead + (M, N))
        self.fft = np.zeros(lead + (M, nfft // 2 + 1), dtype=np.complex128)
        self.nfft = nfft

    def set(self, m, block):
        self.vals[..., m, :] = block
        self.fft[..., m, :] = np.fft.rfft(block, n=self.nfft, axis=-1)


class AdvectionJet:
    """Taylor-in-time integration of an analytic arc of initial conditions.

    Produces the chart Gamma(s, t) ~ Phi(gamma(s), tau * t) with time
    coefficients a[m+1] = tau * [f o Gamma]_m / (m + 1).
    """

    ALPHA = -1.5

    def __init__(self, cfg: PrimaryConfig, arc_coeffs: np.ndarray, M: int,
                 tau: float, blowup: float = 1e60):
        self.cfg = cfg
        self.tau = float(tau)
        self.blowup = blowup
        arc = np.asarray(arc_coeffs, dtype=float)
        self.N = arc.shape[0]
        self.M = M
        self.nfft = _fast_len(2 * self.N - 1)
        self.arc = arc

    def run(self) -> np.ndarray:
        """Compute the (M, N, 4) chart grid; returns None on blowup."""
        M, N, nfft = self.M, self.N, self.nfft
        cfg = self.cfg
        mvals = cfg.mass_values
        px, py = cfg.positions[:, 0], cfg.positions[:, 1]
        G = _CachedBlocks(M, N, nfft, lead=(4,))
        S2 = _CachedBlocks(M, N, nfft)
        w = _CachedBlocks(M, N, nfft, lead=(3,))
        u = _CachedBlocks(M, N, nfft, lead=(3,))
        G.set(0, self.arc.T)  # (4, N)

        X = lambda m: G.vals[0, m]
        Y = lambda m: G.vals[2, m]
        s2_0 = _conv_full(self.arc[:, 0], self.arc[:, 0], N) + _conv_full(
            self.arc[:, 2], self.arc[:, 2], N
        )
        S2.set(0, s2_0)
        w0 = np.stack(
            [s2_0 - 2 * px[j] * X(0) - 2 * py[j] * Y(0) for j in range(3)]
        )
        w0[:, 0] += px**2 + py**2
        w.set(0, w0)
        u0 = np.stack([power_series_1d(w0[j], self.ALPHA) for j in range(3)])
        u.set(0, u0)
        inv_w0 = np.stack([reciprocal_series_1d(w0[j]) for j in range(3)])
        inv_w0_fft = np.fft.rfft(inv_w0, n=nfft, axis=-1)

        for m in range(M - 1):
            f_m = self._field_block(m, G, S2, w, u, inv_w0_fft, mvals, px, py)
            if f_m is None:
                return None
            block = self.tau * f_m / (m + 1)
            if not np.all(np.isfinite(block)) or np.max(np.abs(block)) > self.blowup:
                return None
            G.set(m + 1, block)
        return np.moveaxis(G.vals, 0, -1)  # (M, N, 4)

    def _field_block(self, m, G, S2, w, u, inv_w0_fft, mvals, px, py):
        N, nfft = self.N, self.nfft
        if m > 0:
            # extend S2, w, u to time order m
            s2_m = _block_conv(G.fft[0], G.fft[0], m, nfft, N) + _block_conv(
                G.fft[2], G.fft[2], m, nfft, N
            )
            S2.set(m, s2_m)
            w_m = (
                s2_m[None, :]
                - 2 * px[:, None] * G.vals[0, m][None, :]
                - 2 * py[:, None] * G.vals[2, m][None, :]
            )
            w.set(m, w_m)
            i = np.arange(m)
            coef = self.ALPHA * (m - i) - i  # weight on u[i] (x) w[m - i]
            num_fft = np.einsum(
                "i,jik->jk", coef, u.fft[:, :m, :] * w.fft[:, m:0:-1, :]
            )
            # truncate to N before the second product: a triple linear
            # convolution would wrap around the fft buffer
            num = np.fft.irfft(num_fft, n=nfft, axis=-1)[:, :N]
            num_fft = np.fft.rfft(num, n=nfft, axis=-1)
            u_m = np.fft.irfft(inv_w0_fft * num_fft / m, n=nfft, axis=-1)[:, :N]
            u.set(m, u_m)
        xu_m = _block_conv3(G.fft[0], u.fft, m, nfft, N)
        yu_m = _block_conv3(G.fft[2], u.fft, m, nfft, N)
        gx = G.vals[0, m].copy()
        gy = G.vals[2, m].copy()
        for j in range(3):
            gx -= mvals[j] * (xu_m[j] - px[j] * u.vals[j, m])
            gy -= mvals[j] * (yu_m[j] - py[j] * u.vals[j, m])
        out = np.empty((4, N))
        out[0] = G.vals[1, m]
        out[1] = 2.0 * G.vals[3, m] + gx
        out[2] = G.vals[3, m]
        out[3] = -2.0 * G.vals[1, m] + gy
        if not np.all(np.isfinite(out)):
            return None
        return out


def _fast_len(n: int) -> int:
    return _next_fast_len(n, real=True)


def _conv_full(a, b, N):
    return np.convolve(a, b)[:N]


def _block_conv(FA, FB, m, nfft, N):
    """Time block m of the product with blocks 0..m available."""
    acc = np.einsum("ik,ik->k", FA[: m + 1], FB[m :: -1])
    return np.fft.irfft(acc, n=nfft)[:N]


def _block_conv3(FA, FB3, m, nfft, N):
    """Same, with the second factor stacked over a leading axis of 3."""
    acc = np.einsum("ik,jik->jk", FA[: m + 1], FB3[:, m :: -1])
    return np.fft.irfft(acc, n=nfft, axis=-1)[:, :N]
