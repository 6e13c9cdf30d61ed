"""Advection of analytic boundary arcs into space x time interior charts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .crfbp import PrimaryConfig, R_MIN
from .errors import StallError, StepRejectedError
from .jets import AdvectionJet
from .series import Taylor1, Taylor2, time_block_norms

TIME_TAIL_LIMIT = 1e-16  # l1 norm allowed in the top time block
TAU_CAP = 1.0
TAU_MIN = 1e-12
MAX_TRIALS = 40


@dataclass(frozen=True)
class BoundaryArc:
    """Flow-transverse edge arc gamma: [-1, 1] -> R^4 with lineage data."""

    series: Taylor1
    generation: int
    arc_id: int
    parent_chart: int | None
    angle_map: tuple[float, float]  # phi(s) = a + b s on the initial circle
    time_from_manifold: float
    subdomain_history: tuple[tuple[float, float], ...] = ()
    tau_guess: float = 0.25

    def angle_of(self, s):
        a, b = self.angle_map
        return a + b * np.asarray(s)

    def eval(self, s):
        return self.series(s)

    def restricted(self, s_hat: float, delta: float, **kw) -> "BoundaryArc":
        from .series import recenter_rescale

        a, b = self.angle_map
        return replace(
            self,
            series=recenter_rescale(self.series, s_hat, delta),
            angle_map=(a + b * s_hat, b * delta),
            subdomain_history=self.subdomain_history + ((s_hat, delta),),
            **kw,
        )


@dataclass(frozen=True)
class Chart:
    """Interior patch Gamma(s, t) ~ Phi(gamma(s), tau t) on [-1, 1]^2."""

    series: Taylor2  # (M, N, 4); first index is the time power
    tau: float
    generation: int
    chart_id: int
    parent_arc: int
    angle_map: tuple[float, float]
    base_time: float  # accumulated |tau| from the local boundary to t = 0
    box: np.ndarray = field(default=None)
    rotation: int = 0  # symmetry copy tag (0, +1, -1)
    subdomain_history: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.box is None:
            object.__setattr__(self, "box", l1_box(self.series))

    def eval(self, s, t):
        """Chart evaluation in the paper's (space, time) argument order."""
        return self.series(t, s)

    def base_arc_coeffs(self) -> np.ndarray:
        return np.asarray(self.series.coeffs[0])

    def edge_arc_coeffs(self) -> np.ndarray:
        return np.asarray(self.series.coeffs).sum(axis=0)

    def time_of(self, t) -> float:
        """Accumulated |tau| from the local boundary at chart parameter t."""
        return self.base_time + abs(self.tau) * float(t)


def l1_box(series: Taylor2) -> np.ndarray:
    """Per-coordinate interval [c00 - r, c00 + r] with r the l1 tail mass."""
    c = np.asarray(series.coeffs)
    center = c[0, 0]
    radius = np.sum(np.abs(c), axis=(0, 1)) - np.abs(center)
    return np.stack([center - radius, center + radius], axis=-1)


def arc_l1_box(arc: BoundaryArc) -> np.ndarray:
    c = np.asarray(arc.series.coeffs)
    center = c[0]
    radius = np.sum(np.abs(c), axis=0) - np.abs(center)
    return np.stack([center - radius, center + radius], axis=-1)


def advect_arc(
    arc: BoundaryArc,
    tau: float,
    time_degree: int,
    cfg: PrimaryConfig,
    r_min: float = R_MIN,
) -> Taylor2:
    """Taylor-in-time flow of an arc; raises StepRejectedError on trouble."""
    grid = AdvectionJet(cfg, np.asarray(arc.series.coeffs), time_degree, tau).run()
    if grid is None:
        raise StepRejectedError(f"coefficient blowup at tau = {tau:.3e}")
    _check_primary_distance(grid, cfg, r_min, tau)
    return Taylor2(grid)


def _check_primary_distance(grid, cfg, r_min, tau):
    chart = Taylor2(grid)
    t = np.linspace(-1.0, 1.0, 9)
    s = np.linspace(-1.0, 1.0, 13)
    tt, ss = np.meshgrid(t, s)
    vals = chart(tt.ravel(), ss.ravel())
    dx = vals[:, 0, None] - cfg.positions[None, :, 0]
    dy = vals[:, 2, None] - cfg.positions[None, :, 1]
    rmin = np.min(np.hypot(dx, dy))
    if not np.isfinite(rmin) or rmin < r_min:
        raise StepRejectedError(
            f"chart at tau = {tau:.3e} approaches a primary (r = {rmin:.3e})"
        )


def choose_timestep(
    arc: BoundaryArc,
    time_degree: int,
    cfg: PrimaryConfig,
    tau_guess: float | None = None,
    sign: int = +1,
    tail_limit: float = TIME_TAIL_LIMIT,
    tau_max: float = TAU_CAP,
) -> tuple[float, Taylor2]:
    """Largest admissible |tau| from a factor-2 geometric search.

    Admissible means the top time block has l1 norm below ``tail_limit``.
    The search shrinks from the lineage guess (candidates guess / 2^k,
    capped by ``tau_max``); a series that is flat in time jumps straight
    to the cap.  Because halving tau divides the order-m block by 2^m
    exactly, trial norms are predicted from one reference advection and
    only the accepted step is recomputed and verified.
    """
    guess = abs(tau_guess if tau_guess is not None else arc.tau_guess)
    guess = min(max(guess, 1e-6), tau_max, TAU_CAP)
    trials = 0
    ref_tau, ref_grid = None, None
    while trials < MAX_TRIALS:
        trials += 1
        try:
            ref_grid = advect_arc(arc, sign * guess, time_degree, cfg)
            ref_tau = guess
            break
        except StepRejectedError:
            guess *= 0.25
            if guess < TAU_MIN:
                raise StallError("no admissible step above the minimum") from None
    if ref_grid is None:
        raise StallError("trial budget exhausted before a finite advection")

    ref_norm = time_block_norms(ref_grid)[-1]
    tau = ref_tau

    def predicted(t):
        return ref_norm * (t / ref_tau) ** (time_degree - 1)

    if ref_norm == 0.0:  # flat in time (an equilibrium arc): take the cap
        tau = TAU_CAP
    else:
        while trials < MAX_TRIALS and predicted(tau) >= tail_limit:
            tau *= 0.5
            trials += 1
    if tau < TAU_MIN:
        raise StallError(f"admissible step {tau:.3e} below {TAU_MIN:.1e}")

    # verify the selected step on an actual advection
    while trials <= MAX_TRIALS + 8:
        trials += 1
        try:
            if abs(tau - ref_tau) < 1e-15 * ref_tau:
                grid = ref_grid
            else:
                grid = advect_arc(arc, sign * tau, time_degree, cfg)
            if time_block_norms(grid)[-1] < tail_limit or ref_norm == 0.0:
                return sign * tau, grid
        except StepRejectedError:
            pass
        tau *= 0.5
        if tau < TAU_MIN:
            break
    raise StallError("verification failed down to the minimum step")


def evaluate_edge(chart: Chart, arc_id: int) -> BoundaryArc:
    """Time-1 edge of a chart as the next-generation boundary arc."""
    coeffs = chart.edge_arc_coeffs()
    return BoundaryArc(
        series=Taylor1(coeffs),
        generation=chart.generation,
        arc_id=arc_id,
        parent_chart=chart.chart_id,
        angle_map=chart.angle_map,
        time_from_manifold=chart.base_time + abs(chart.tau),
        subdomain_history=chart.subdomain_history,
        tau_guess=2.0 * abs(chart.tau),
    )
