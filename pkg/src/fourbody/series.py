"""Dense truncated power series in one and two variables.

Coefficients are stored in numpy arrays with the grid axes first:
``Taylor1.coeffs`` has shape ``(N, *vshape)`` and ``Taylor2.coeffs`` has
shape ``(M, N, *vshape)``, where ``vshape`` is ``()`` for scalar series,
``(d,)`` for vector-valued series, and ``(4, 4)`` for matrix-valued ones.
The first grid axis of a two-variable series is the first evaluation
variable (time, for flow charts); the second is the space variable.

The l1 norm of a vector-valued series is the maximum over components of
the per-component coefficient absolute sums, which makes the product space
a normed algebra compatible with sup-norm estimates on [-1, 1]^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    DomainError,
    SingularLeadingTermError,
    UndefinedTailRatioError,
)

# Division threshold for leading coefficients in fractional powers.
LEADING_TERM_FLOOR = 1e-12


def _as_grid(coeffs, grid_ndim):
    arr = np.asarray(coeffs)
    if arr.ndim < grid_ndim:
        raise DimensionMismatchError(
            f"coefficient array needs at least {grid_ndim} axes, got {arr.ndim}"
        )
    if np.iscomplexobj(arr):
        arr = arr.astype(np.complex128, copy=True)
    else:
        arr = arr.astype(np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Taylor1:
    """Truncated power series sum_n c[n] s^n on [-1, 1]."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_grid(self.coeffs, 1))
        if not np.all(np.isfinite(self.coeffs)):
            raise DimensionMismatchError("non-finite coefficients")

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0]

    @property
    def vshape(self) -> tuple:
        return self.coeffs.shape[1:]

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.coeffs) else "real"

    def __call__(self, s):
        return taylor1_eval(self, s)

    def __add__(self, other):
        _check_compatible1(self, other)
        return Taylor1(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_compatible1(self, other)
        return Taylor1(self.coeffs - other.coeffs)

    def __rmul__(self, a):
        return Taylor1(a * self.coeffs)

    def derivative(self) -> "Taylor1":
        n = np.arange(1, self.degree).reshape((-1,) + (1,) * len(self.vshape))
        return Taylor1(self.coeffs[1:] * n)


@dataclass(frozen=True)
class Taylor2:
    """Truncated power series sum_{m,n} c[m, n] z1^m z2^n."""

    coeffs: np.ndarray
    conjugate_symmetric: bool = field(default=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_grid(self.coeffs, 2))
        if not np.all(np.isfinite(self.coeffs)):
            raise DimensionMismatchError("non-finite coefficients")

    @property
    def degrees(self) -> tuple[int, int]:
        return self.coeffs.shape[:2]

    @property
    def vshape(self) -> tuple:
        return self.coeffs.shape[2:]

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.coeffs) else "real"

    def __call__(self, z1, z2):
        return taylor2_eval(self, z1, z2)

    def __add__(self, other):
        _check_compatible2(self, other)
        return Taylor2(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_compatible2(self, other)
        return Taylor2(self.coeffs - other.coeffs)

    def __rmul__(self, a):
        return Taylor2(a * self.coeffs)

    def component(self, idx) -> "Taylor2":
        return Taylor2(self.coeffs[(slice(None), slice(None)) + np.index_exp[idx]])

    def conj_symmetry_defect(self) -> float:
        """Max deviation from c[n, m] == conj(c[m, n]) on the square part."""
        k = min(self.degrees)
        c = self.coeffs[:k, :k]
        return float(np.max(np.abs(c - np.conj(np.swapaxes(c, 0, 1)))))


def _check_compatible1(a: Taylor1, b: Taylor1):
    if a.coeffs.shape != b.coeffs.shape:
        raise DimensionMismatchError(
            f"shape mismatch {a.coeffs.shape} vs {b.coeffs.shape}"
        )


def _check_compatible2(a: Taylor2, b: Taylor2):
    if a.coeffs.shape != b.coeffs.shape:
        raise DimensionMismatchError(
            f"shape mismatch {a.coeffs.shape} vs {b.coeffs.shape}"
        )


# ---------------------------------------------------------------------------
# evaluation and norms


def taylor1_eval(g: Taylor1, s):
    """Horner evaluation; `s` may be a scalar or an array of points."""
    s = np.asarray(s)
    pts = s.reshape(-1)
    acc = np.zeros(pts.shape + g.vshape, dtype=np.result_type(g.coeffs, pts))
    ext = (Ellipsis,) + (None,) * len(g.vshape)
    for c in g.coeffs[::-1]:
        acc = acc * pts[ext] + c
    return acc.reshape(s.shape + g.vshape) if s.shape else acc[0]


def taylor2_eval(p: Taylor2, z1, z2):
    """Horner evaluation in the first variable, then the second."""
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    shape = np.broadcast_shapes(z1.shape, z2.shape)
    a = np.broadcast_to(z1, shape).reshape(-1)
    b = np.broadcast_to(z2, shape).reshape(-1)
    dtype = np.result_type(p.coeffs, a, b)
    ext = (Ellipsis,) + (None,) * len(p.vshape)
    # inner Horner along axis 1 for every row, outer along axis 0
    acc = np.zeros((a.size,) + p.vshape, dtype=dtype)
    for row in p.coeffs[::-1]:
        inner = np.zeros_like(acc)
        for c in row[::-1]:
            inner = inner * b[ext] + c
        acc = acc * a[ext] + inner
    return acc.reshape(shape + p.vshape) if shape else acc[0]


def ell1_norm(obj) -> float:
    """Coefficient absolute-value sum per component, max over components."""
    c = obj.coeffs
    grid_axes = tuple(range(2 if isinstance(obj, Taylor2) else 1))
    per_component = np.sum(np.abs(c), axis=grid_axes)
    return float(np.max(per_component)) if per_component.ndim else float(per_component)


# ---------------------------------------------------------------------------
# products


def _conv2_trunc(a: np.ndarray, b: np.ndarray, M: int, N: int) -> np.ndarray:
    """Truncated 2-D Cauchy convolution of coefficient grids (direct)."""
    out_dtype = np.result_type(a, b)
    out = np.zeros((M, N) + b.shape[2:], dtype=out_dtype)
    Ma, Na = a.shape[:2]
    Mb, Nb = b.shape[:2]
    for j in range(min(Ma, M)):
        rows = min(M - j, Mb)
        for k in range(min(Na, N)):
            ajk = a[j, k]
            if not np.any(ajk):
                continue
            cols = min(N - k, Nb)
            out[j : j + rows, k : k + cols] += ajk * b[:rows, :cols]
    return out


def cauchy_product(p: Taylor2, q: Taylor2, degrees: tuple[int, int] | None = None) -> Taylor2:
    """Cauchy product of two-variable series.

    Factors must share scalar kind; at least one factor must be scalar
    valued (scalar x vector broadcasts).  The result is truncated to
    ``degrees`` (default: the elementwise maximum of the input degrees;
    pass the degree sum for an exact product).
    """
    if p.kind != q.kind:
        raise DimensionMismatchError(f"kind mismatch: {p.kind} vs {q.kind}")
    if p.vshape != () and q.vshape != ():
        raise DimensionMismatchError(
            "product factors must be scalar, or scalar times vector"
        )
    if p.vshape != ():  # put the scalar factor first
        p, q = q, p
    if degrees is None:
        degrees = (max(p.degrees[0], q.degrees[0]), max(p.degrees[1], q.degrees[1]))
    return Taylor2(_conv2_trunc(p.coeffs, q.coeffs, degrees[0], degrees[1]))


# ---------------------------------------------------------------------------
# fractional powers through the radial gradient


def radial_gradient(p: Taylor2) -> Taylor2:
    """Weight every coefficient by its total order: c[m, n] -> (m+n) c[m, n]."""
    M, N = p.degrees
    w = (np.arange(M)[:, None] + np.arange(N)[None, :]).astype(float)
    w = w.reshape((M, N) + (1,) * len(p.vshape))
    return Taylor2(w * p.coeffs)


def _diag_indices(ell: int, M: int, N: int):
    m = np.arange(max(0, ell - (N - 1)), min(M - 1, ell) + 1)
    return m, ell - m


def fractional_power(p: Taylor2, alpha: float, floor: float = LEADING_TERM_FLOOR) -> Taylor2:
    """Truncated series for P**alpha via the total-order diagonal recursion.

    Requires a scalar series with |constant term| above ``floor``; the
    recursion divides by the constant term at every order.
    """
    if p.vshape != ():
        raise DimensionMismatchError("fractional power is defined for scalar series")
    p00 = complex(p.coeffs[0, 0])
    if abs(p00) <= floor:
        raise SingularLeadingTermError(
            f"|constant term| = {abs(p00):.3e} <= {floor:.3e}"
        )
    M, N = p.degrees
    a = p.coeffs
    dtype = np.complex128 if (p.kind == "complex" or (p00.real < 0 and alpha != int(alpha))) else np.float64
    if dtype == np.float64:
        p00 = p00.real
    q = np.zeros((M, N), dtype=dtype)
    q[0, 0] = p00 ** alpha
    w = (np.arange(M)[:, None] + np.arange(N)[None, :]).astype(float)
    arad = w * a
    for ell in range(1, M + N - 1):
        qrad = w * q
        t = alpha * _conv2_trunc(q, arad, M, N) - _conv2_trunc(a, qrad, M, N)
        m, n = _diag_indices(ell, M, N)
        q[m, n] = t[m, n] / (ell * p00)
    return Taylor2(q)


# ---------------------------------------------------------------------------
# one-variable tail control


def tail_ratio(g: Taylor1, cutoff: int) -> float:
    """l1 weight of coefficients at index >= cutoff relative to the total."""
    N = g.degree
    if not 1 <= cutoff <= N:
        raise DomainError(f"cutoff {cutoff} outside 1..{N}")
    total = ell1_norm(g)
    if total == 0.0:
        raise UndefinedTailRatioError("tail ratio of the zero series")
    tail = Taylor1(g.coeffs[cutoff:]) if cutoff < N else None
    return ell1_norm(tail) / total if tail is not None else 0.0


def recenter_rescale(g: Taylor1, s_hat: float, delta: float) -> Taylor1:
    """Series of s -> g(s_hat + delta*s), same truncation degree.

    [s_hat - delta, s_hat + delta] must be contained in [-1, 1].
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    if s_hat - delta < -1 - 1e-14 or s_hat + delta > 1 + 1e-14:
        raise DomainError(
            f"subinterval [{s_hat - delta}, {s_hat + delta}] escapes [-1, 1]"
        )
    N = g.degree
    T = recenter_matrix(N, s_hat, delta)
    flat = g.coeffs.reshape(N, -1)
    return Taylor1((T @ flat).reshape(g.coeffs.shape))


def recenter_matrix(N: int, s_hat: float, delta: float) -> np.ndarray:
    """Linear map on coefficient vectors realizing recenter_rescale."""
    T = np.zeros((N, N))
    for n in range(N):
        dn = delta ** n
        for k in range(n, N):
            T[n, k] = dn * math.comb(k, n) * s_hat ** (k - n)
    return T


def subdivide(g: Taylor1, k: int) -> list[Taylor1]:
    """Split [-1, 1] into k equal subintervals and recenter each."""
    edges = np.linspace(-1.0, 1.0, k + 1)
    out = []
    for s1, s2 in zip(edges[:-1], edges[1:]):
        out.append(recenter_rescale(g, (s1 + s2) / 2.0, (s2 - s1) / 2.0))
    return out


# ---------------------------------------------------------------------------
# structural helpers used by the jet and chart machinery


def pad_to(p: Taylor2, degrees: tuple[int, int]) -> Taylor2:
    M, N = degrees
    Mp, Np = p.degrees
    if Mp > M or Np > N:
        raise DimensionMismatchError("pad_to cannot shrink a series")
    out = np.zeros((M, N) + p.vshape, dtype=p.coeffs.dtype)
    out[:Mp, :Np] = p.coeffs
    return Taylor2(out)


def truncate_total_order(p: Taylor2, order: int) -> Taylor2:
    M, N = p.degrees
    w = np.arange(M)[:, None] + np.arange(N)[None, :]
    mask = (w <= order).reshape((M, N) + (1,) * len(p.vshape))
    return Taylor2(np.where(mask, p.coeffs, 0))


def time_block_norms(p: Taylor2) -> np.ndarray:
    """l1 norm (max over components) of every first-axis coefficient block."""
    c = np.abs(p.coeffs)
    per_component = c.sum(axis=1)
    if per_component.ndim > 1:
        per_component = per_component.max(axis=tuple(range(1, per_component.ndim)))
    return per_component
