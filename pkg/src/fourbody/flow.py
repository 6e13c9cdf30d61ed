"""Reference integration of the four-body field (adaptive embedded RK)."""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .crfbp import PrimaryConfig, vector_field, vector_field_jacobian
from .errors import FourBodyError

DEFAULT_TOL = 1e-13


def flow(state, t, cfg: PrimaryConfig, tol: float = DEFAULT_TOL, dense: bool = False):
    """Advance `state` by time `t` (signed).  Returns the final state, or the
    solve_ivp solution object when `dense` is requested."""
    state = np.asarray(state, dtype=float)
    if t == 0.0:
        return state.copy() if not dense else _constant_solution(state)
    sol = solve_ivp(
        lambda _, y: vector_field(y, cfg),
        (0.0, t),
        state,
        method="DOP853",
        rtol=tol,
        atol=tol,
        dense_output=dense,
    )
    if not sol.success:
        raise FourBodyError(f"reference integration failed: {sol.message}")
    return sol if dense else sol.y[:, -1]


class _constant_solution:
    def __init__(self, state):
        self._state = np.asarray(state, dtype=float)
        self.t = np.array([0.0])

    def sol(self, t):
        t = np.atleast_1d(t)
        return np.repeat(self._state[:, None], len(t), axis=1)


def flow_with_jacobian(state, t, cfg: PrimaryConfig, tol: float = DEFAULT_TOL):
    """Flow map and its state derivative via the variational equations."""
    state = np.asarray(state, dtype=float)
    if t == 0.0:
        return state.copy(), np.eye(4)
    y0 = np.concatenate([state, np.eye(4).ravel()])

    def rhs(_, y):
        x = y[:4]
        V = y[4:].reshape(4, 4)
        dV = vector_field_jacobian(x, cfg) @ V
        return np.concatenate([vector_field(x, cfg), dV.ravel()])

    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=tol, atol=tol)
    if not sol.success:
        raise FourBodyError(f"variational integration failed: {sol.message}")
    yf = sol.y[:, -1]
    return yf[:4], yf[4:].reshape(4, 4)


def sample_orbit(state, t_span, cfg: PrimaryConfig, n: int, tol: float = DEFAULT_TOL):
    """States at n equally spaced times across t_span (inclusive)."""
    t0, t1 = t_span
    times = np.linspace(t0, t1, n)
    sol = solve_ivp(
        lambda _, y: vector_field(y, cfg),
        (t0, t1),
        np.asarray(state, dtype=float),
        method="DOP853",
        rtol=tol,
        atol=tol,
        t_eval=times,
    )
    if not sol.success:
        raise FourBodyError(f"reference integration failed: {sol.message}")
    return sol.t, sol.y.T
