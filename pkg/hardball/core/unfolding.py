"""Covering-space constructions: rooftop folding, unfoldings and the ray test

Unfolding a wall axis replaces the interval [0,1] with reflections by the
circle R/2Z with straight motion; the rooftop map phi(x) = d(x, 2Z) folds
the circle back onto the interval.
"""

import itertools
from typing import FrozenSet, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from .dynamics import CollisionEvent, StopCondition, TrajectorySegment, simulate
from .errors import AntipodalBreach, AxisInZ, BallCollisionEncountered, FoldMismatch, PreconditionError
from .model import Container, ModelParams, PhasePoint, frozen_vector
from .symbolic import axis_unfoldable, symbolic_sequence
from ..utils.logging import setup_logging

logger = setup_logging()

STREAM_TIME_TOLERANCE = 1e-9


def rooftop(x):
    """phi(x) = distance from x to the nearest even integer"""
    x = np.asarray(x, dtype=float)
    out = np.abs(x - 2.0 * np.round(x / 2.0))
    return float(out) if out.ndim == 0 else out


class UnfoldedPoint(BaseModel):
    """Ball centers with the axes in ``axis_mask`` living on R mod 2"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    qhat1: np.ndarray
    qhat2: np.ndarray
    axis_mask: FrozenSet[int] = frozenset()

    @field_validator("qhat1", "qhat2", mode="before")
    @classmethod
    def _to_vector(cls, value):
        return frozen_vector(value)

    @field_serializer("qhat1", "qhat2")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()


def fold(u: UnfoldedPoint) -> Tuple[np.ndarray, np.ndarray]:
    """Rooftop on the masked axes, identity elsewhere"""
    idx = [j - 1 for j in sorted(u.axis_mask)]
    out = []
    for qhat in (u.qhat1, u.qhat2):
        q = np.array(qhat, dtype=float)
        if idx:
            q[idx] = rooftop(q[idx])
        out.append(q)
    return out[0], out[1]


def _position_error(a: np.ndarray, b: np.ndarray, container: Container) -> float:
    return float(np.max(np.abs(container.min_image(a - b)), initial=0.0))


class LinearUnfolding(BaseModel):
    """Straight-line lift of a ball-collision-free stretch onto (R mod 2)^k x T^(nu-k)"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    params: ModelParams
    qhat1: np.ndarray
    qhat2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    T: float
    sample_times: List[float]
    max_fold_error: float

    @field_serializer("qhat1", "qhat2", "v1", "v2")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()

    def at(self, t: float) -> UnfoldedPoint:
        """The lifted configuration at time t"""
        box = list(range(self.params.k))
        period = np.ones(self.params.nu)
        period[box] = 2.0
        qhat1 = np.mod(self.qhat1 + t * self.v1, period)
        qhat2 = np.mod(self.qhat2 + t * self.v2, period)
        return UnfoldedPoint(qhat1=qhat1, qhat2=qhat2, axis_mask=frozenset(self.params.box_axes))


def unfold_linear(x0: PhasePoint, T: float, params: ModelParams, n_samples: int = 101) -> LinearUnfolding:
    """Lift the orbit of x0 on [0, T] to straight lines and check the folding identity

    Raises:
        BallCollisionEncountered: if the base orbit has a ball collision in [0, T]
        FoldMismatch: if folding the lift misses the base orbit by more than the fold tolerance
    """
    if T < 0:
        raise PreconditionError(f"T = {T} is negative")
    base = simulate(x0, StopCondition(t_max=T), params, validate_initial=False)
    if base.ball_events:
        raise BallCollisionEncountered(f"ball collision at t={base.ball_events[0].time:.6g} inside [0, {T}]")

    lift = LinearUnfolding.model_construct(
        params=params, qhat1=x0.q1, qhat2=x0.q2, v1=x0.v1, v2=x0.v2, T=T, sample_times=[], max_fold_error=0.0)
    container = params.container()
    times = sorted(set(np.linspace(0.0, T, n_samples).tolist()) | set(base.event_times))
    worst = 0.0
    for t in times:
        q1, q2 = fold(lift.at(t))
        state = base.state_at(min(t, base.t_end))
        worst = max(worst, _position_error(q1, state.q1, container), _position_error(q2, state.q2, container))
    if worst > params.tol.fold:
        logger.error(f"Linear unfolding misses the base orbit by {worst:.3g}")
        raise FoldMismatch(f"fold error {worst:.3g} exceeds {params.tol.fold:g}")
    return lift.model_copy(update={"sample_times": times, "max_fold_error": worst})


class UnfoldReport(BaseModel):
    """Single-axis unfolding of a segment, re-simulated in the lifted container"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    axis: int
    segment: TrajectorySegment
    n_windows: int
    max_fold_error: float
    max_time_error: float
    min_antipodal_distance: float
    max_resync_error: float
    removed_wall_events: int = Field(description="axis-j wall events of the base that became crossings")


def _lift_state(x: PhasePoint, parity: Tuple[int, int], axis: int) -> PhasePoint:
    """Put each ball on the sheet given by its bounce parity on ``axis``"""
    j = axis - 1
    q = [np.array(x.q1), np.array(x.q2)]
    v = [np.array(x.v1), np.array(x.v2)]
    for b in (0, 1):
        if parity[b] % 2:
            q[b][j] = np.mod(2.0 - q[b][j], 2.0)
            v[b][j] = -v[b][j]
    return PhasePoint.from_arrays(q[0], q[1], v[0], v[1])


def _antipodal_distance(x: PhasePoint, axis: int, lifted: Container) -> float:
    mirrored = np.array(x.q2)
    mirrored[axis - 1] = np.mod(-mirrored[axis - 1], 2.0)
    delta = lifted.min_image(x.q1 - mirrored)
    return float(np.sqrt(delta @ delta))


def _state_gap(a: PhasePoint, b: PhasePoint, container: Container) -> float:
    return max(_position_error(a.q1, b.q1, container), _position_error(a.q2, b.q2, container),
               float(np.max(np.abs(a.v1 - b.v1))), float(np.max(np.abs(a.v2 - b.v2))))


def unfold_axis(seg: TrajectorySegment, axis: int) -> UnfoldReport:
    """Unfold wall axis ``axis`` of a segment whose Z sets never contain it

    Every window between ball collisions is re-simulated in the container
    where the axis is a circle of circumference 2, starting from the lift of
    the base state. The lifted ball collisions and remaining wall events
    must match the base ones, folding must recover the base positions and
    the lifted balls must stay away from the antipodal cylinder.

    Raises:
        AxisInZ: if the axis lies in some Z_l
        AntipodalBreach: if a lifted configuration touches the antipodal cylinder
        FoldMismatch: if the lifted and base orbits disagree
    """
    params = seg.params
    if axis not in params.box_axes:
        raise PreconditionError(f"axis {axis} is not a wall axis of k={params.k}")
    sigma = symbolic_sequence(seg)
    if not axis_unfoldable(sigma, axis):
        windows = [i for i in range(sigma.n + 1) if axis in sigma.window(i)]
        raise AxisInZ(f"axis {axis} lies in Z_l for l in {windows}")

    base_container = seg.container
    lifted = base_container.lifted(axis)
    tol = params.tol
    boundaries = [seg.t_start] + [e.time for e in seg.ball_events]
    if seg.t_end > boundaries[-1]:
        boundaries.append(seg.t_end)

    parity = [0, 0]
    lifted_events: List[CollisionEvent] = []
    lifted_initial = _lift_state(seg.initial, (0, 0), axis)
    state = lifted_initial
    worst_fold = worst_time = worst_resync = 0.0
    min_antipodal = np.inf
    removed = 0

    for w, (a, b) in enumerate(zip(boundaries, boundaries[1:])):
        base_start = seg.state_at(a)
        restart = _lift_state(base_start, (parity[0], parity[1]), axis)
        if w > 0:
            worst_resync = max(worst_resync, _state_gap(state, restart, lifted))
        ends_on_ball = w < len(seg.ball_events) and seg.ball_events[w].time == b
        base_window = [e for e in seg.events if a < e.time <= b]
        if ends_on_ball:
            stop = StopCondition(n_ball_collisions=1, t_max=(b - a) + 10 * tol.event + STREAM_TIME_TOLERANCE)
        else:
            stop = StopCondition(t_max=b - a)
        window_seg = simulate(restart, stop, params, container=lifted, validate_initial=False, t0=a)

        expected = [e for e in base_window if not (e.is_wall and e.axis == axis)]
        removed += len(base_window) - len(expected)
        got = list(window_seg.events)
        if [e.label for e in got] != [e.label for e in expected]:
            logger.error(f"Lifted window {w} events {[e.describe() for e in got]} "
                         f"differ from base {[e.describe() for e in expected]}")
            raise FoldMismatch(f"window {w}: lifted and base event sequences differ")
        for mine, theirs in zip(got, expected):
            worst_time = max(worst_time, abs(mine.time - theirs.time))

        checkpoints = [(e.time, e.pre) for e in got] + [(window_seg.t_end, window_seg.final)]
        for t, lifted_state in checkpoints:
            folded = fold(UnfoldedPoint(qhat1=lifted_state.q1, qhat2=lifted_state.q2, axis_mask=frozenset({axis})))
            base_state = seg.state_at(min(max(t, seg.t_start), seg.t_end))
            worst_fold = max(worst_fold, _position_error(folded[0], base_state.q1, base_container),
                             _position_error(folded[1], base_state.q2, base_container))
            distance = _antipodal_distance(lifted_state, axis, lifted)
            min_antipodal = min(min_antipodal, distance)
            if distance < 2 * params.r - tol.contact:
                logger.error(f"Antipodal distance {distance:.6g} at t={t:.6g} is below 2r")
                raise AntipodalBreach(f"d(q1, R_j q2) = {distance:.6g} < 2r at t = {t:.6g}")

        for e in base_window:
            if e.is_wall and e.axis == axis:
                parity[e.ball - 1] += 1
        lifted_events.extend(got)
        state = window_seg.final

    if worst_time > STREAM_TIME_TOLERANCE or worst_fold > tol.fold:
        logger.error(f"Unfolding of axis {axis}: time error {worst_time:.3g}, fold error {worst_fold:.3g}")
        raise FoldMismatch(f"time error {worst_time:.3g}, fold error {worst_fold:.3g}")

    segment = TrajectorySegment.model_construct(
        params=params, container=lifted, initial=lifted_initial, events=tuple(lifted_events),
        t_start=seg.t_start, t_end=seg.t_end, final=state, branch_warnings=())
    logger.info(f"Unfolded axis {axis} over {len(boundaries) - 1} windows; "
                f"min antipodal distance {min_antipodal:.4g}")
    return UnfoldReport(axis=axis, segment=segment, n_windows=len(boundaries) - 1, max_fold_error=worst_fold,
                        max_time_error=worst_time, min_antipodal_distance=float(min_antipodal),
                        max_resync_error=worst_resync, removed_wall_events=removed)


class RayReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    d_plus: float
    d_minus: float
    T: float

    @property
    def gap(self) -> float:
        return abs(self.d_plus - self.d_minus)


def _ray_lattice_distance(q0: np.ndarray, v0: np.ndarray, T: float, steps: int, chunk: int = 4096) -> float:
    """min over t in [0, T] of the distance from q0 + t v0 to Z^n, exact per grid step"""
    n = q0.shape[0]
    step = v0 * (T / steps)
    step_sq = float(step @ step)
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=n)), dtype=float)
    best = np.inf
    for lo in range(0, steps, chunk):
        k = np.arange(lo, min(lo + chunk, steps), dtype=float)
        starts = q0 + np.outer(k, step)
        ends = starts + step
        cands = np.concatenate([np.round(starts)[:, None, :] + offsets, np.round(ends)[:, None, :] + offsets], axis=1)
        rel = cands - starts[:, None, :]
        if step_sq > 0:
            u = np.clip(rel @ step / step_sq, 0.0, 1.0)
        else:
            u = np.zeros(rel.shape[:2])
        gap = rel - u[..., None] * step
        best = min(best, float(np.sqrt(np.min(np.sum(gap * gap, axis=2)))))
    return best


def ray_distance_symmetry_test(q0, v0, T: float, grid: int) -> RayReport:
    """Distances of the forward and backward rays from q0 to the integer lattice

    The grid is refined so that each step is at most half a lattice spacing
    long; within a step the distance to nearby lattice points is exact.
    """
    q0 = np.asarray(q0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if not np.any(v0):
        raise PreconditionError("ray direction must be nonzero")
    length = float(np.linalg.norm(v0)) * T
    steps = max(int(grid), int(np.ceil(length / 0.5)), 1)
    d_plus = _ray_lattice_distance(q0, v0, T, steps)
    d_minus = _ray_lattice_distance(q0, -v0, T, steps)
    return RayReport(d_plus=d_plus, d_minus=d_minus, T=T)


class Stretch(BaseModel):
    """A ball-collision-free time interval with |P_Abar(v1 - v2)| over it"""

    model_config = ConfigDict(frozen=True)

    t0: float
    t1: float
    annotation: float

    @property
    def length(self) -> float:
        return self.t1 - self.t0


def periodic_relative_speed(x: PhasePoint, params: ModelParams) -> float:
    """|P_Abar(v1 - v2)|: relative velocity on the periodic axes"""
    per = params.container().periodic_idx
    dv = (x.v1 - x.v2)[per]
    return float(np.sqrt(dv @ dv)) if per.size else 0.0


def collision_free_stretches(seg: TrajectorySegment, min_length: float = 0.0) -> List[Stretch]:
    """Maximal ball-collision-free intervals of the segment no shorter than ``min_length``"""
    cuts = [seg.t_start] + [e.time for e in seg.ball_events] + [seg.t_end]
    out = []
    for a, b in zip(cuts, cuts[1:]):
        if b - a >= min_length and b > a:
            out.append(Stretch(t0=a, t1=b, annotation=periodic_relative_speed(seg.state_at(a), seg.params)))
    return out
