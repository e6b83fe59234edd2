"""Event-driven integration of the two-ball billiard flow

Between events the motion is uniform. Wall events negate one velocity
component of one ball; ball-ball events reflect the relative velocity
across the tangent plane of the contact sphere. Event times come from a
linear solve (walls) or a quadratic over the lattice images of the periodic
axes (balls), refined by one Newton step.
"""

import bisect
import itertools
from collections import deque
from functools import cached_property
from typing import Iterator, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, model_validator

from .errors import (
    AccumulationSuspected,
    BranchAmbiguity,
    EventSkipped,
    GrazingImpact,
    InvalidStop,
    NotInContact,
    NotOnWall,
    PreconditionError,
    Receding,
    ReplayMismatch,
)
from .model import Container, ModelParams, PhasePoint, frozen_vector, validate
from ..utils.logging import setup_logging

logger = setup_logging()

# Longest free flight searched for a ball contact in one step
MAX_FLIGHT = 1.0
# Accumulation guard: events allowed in any unit time window
MAX_EVENTS_PER_UNIT_TIME = 10**4
REPLAY_TOLERANCE = 1e-9


class StopCondition(BaseModel):
    """When a simulation stops: whichever set limit triggers first"""

    model_config = ConfigDict(frozen=True)

    n_events: Optional[int] = None
    n_ball_collisions: Optional[int] = None
    t_max: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        limits = (self.n_events, self.n_ball_collisions, self.t_max)
        if all(limit is None for limit in limits):
            raise InvalidStop("stop condition needs n_events, n_ball_collisions or t_max")
        if any(limit is not None and limit < 0 for limit in limits):
            raise InvalidStop(f"negative stop limit in {limits}")
        return self


class WallHit(NamedTuple):
    time: float
    ball: int
    axis: int
    face: int


class Contact(NamedTuple):
    """A predicted sphere contact: time, unit normal at impact, <dv, n> at impact"""
    time: float
    normal: np.ndarray
    normal_speed: float


class CollisionEvent(BaseModel):
    """One wall or ball-ball collision with the states around it"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time: float
    kind: Literal["wall", "ball"]
    ball: Optional[int] = None
    axis: Optional[int] = None
    face: Optional[int] = None
    q1: np.ndarray
    q2: np.ndarray
    v1_pre: np.ndarray
    v2_pre: np.ndarray
    v1_post: np.ndarray
    v2_post: np.ndarray
    normal: Optional[np.ndarray] = None

    @field_serializer("q1", "q2", "v1_pre", "v2_pre", "v1_post", "v2_post", "normal")
    def _serialize_vector(self, value):
        return None if value is None else value.tolist()

    @property
    def is_ball(self) -> bool:
        return self.kind == "ball"

    @property
    def is_wall(self) -> bool:
        return self.kind == "wall"

    @property
    def pre(self) -> PhasePoint:
        return PhasePoint.from_arrays(self.q1, self.q2, self.v1_pre, self.v2_pre)

    @property
    def post(self) -> PhasePoint:
        return PhasePoint.from_arrays(self.q1, self.q2, self.v1_post, self.v2_post)

    @property
    def label(self) -> Tuple:
        """Sort key and identity: walls before balls, then (ball, axis, face)"""
        if self.is_wall:
            return (0, self.ball, self.axis, self.face)
        return (1, 0, 0, 0)

    def describe(self) -> str:
        if self.is_wall:
            return f"wall(ball={self.ball}, axis={self.axis}, face={self.face})"
        return "ball"


class BranchWarning(BaseModel):
    """Events closer together than the event tolerance, processed in lexicographic order"""

    model_config = ConfigDict(frozen=True)

    time: float
    gap: float
    events: Tuple[str, ...]


class TrajectorySegment(BaseModel):
    """An orbit segment [t_start, t_end] with its full event log"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    params: ModelParams
    container: Container
    initial: PhasePoint
    events: Tuple[CollisionEvent, ...]
    t_start: float = 0.0
    t_end: float
    final: PhasePoint
    branch_warnings: Tuple[BranchWarning, ...] = ()

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @cached_property
    def event_times(self) -> List[float]:
        return [event.time for event in self.events]

    @cached_property
    def ball_events(self) -> List[CollisionEvent]:
        return [event for event in self.events if event.is_ball]

    @property
    def n_ball_collisions(self) -> int:
        return len(self.ball_events)

    def state_at(self, t: float) -> PhasePoint:
        """Phase point at time t (the post-collision state at an event time)"""
        if t < self.t_start or t > self.t_end:
            raise PreconditionError(f"t={t} outside [{self.t_start}, {self.t_end}]")
        i = bisect.bisect_right(self.event_times, t)
        if i == 0:
            return advance_flow(self.initial, t - self.t_start, self.params, self.container)
        event = self.events[i - 1]
        return advance_flow(event.post, t - event.time, self.params, self.container)


def wall_candidates(x: PhasePoint, params: ModelParams, container: Optional[Container] = None) -> List[WallHit]:
    """Every wall each ball is heading to, sorted by time then (ball, axis, face)"""
    container = container or params.container()
    hits = []
    for beta, (q, v) in enumerate(((x.q1, x.v1), (x.q2, x.v2)), start=1):
        for j in container.wall_idx:
            vj = v[j]
            if vj > 0:
                hits.append(WallHit(max((1.0 - q[j]) / vj, 0.0), beta, int(j) + 1, 1))
            elif vj < 0:
                hits.append(WallHit(max(-q[j] / vj, 0.0), beta, int(j) + 1, 0))
    hits.sort()
    return hits


def next_wall_event(x: PhasePoint, params: ModelParams, container: Optional[Container] = None) -> Optional[WallHit]:
    """Earliest wall hit (time, ball, axis, face), or None without box-axis motion"""
    hits = wall_candidates(x, params, container)
    return hits[0] if hits else None


def _image_shifts(container: Container, delta_v: np.ndarray, horizon: float) -> np.ndarray:
    """Lattice offsets of the periodic axes reachable within the horizon"""
    nu = container.nu
    per = container.periodic_idx
    if per.size == 0:
        return np.zeros((1, nu))
    p = container.period_vec
    bounds = np.ceil(np.abs(delta_v[per]) * horizon / p).astype(int) + 1
    grid = np.array(list(itertools.product(*(range(-b, b + 1) for b in bounds))), dtype=float)
    shifts = np.zeros((grid.shape[0], nu))
    shifts[:, per] = grid * p
    return shifts


def contact_time(delta_q: np.ndarray, delta_v: np.ndarray, radius: float, container: Container,
                 horizon: float, graze: float) -> Optional[Contact]:
    """First time ||delta_q + t delta_v - m|| reaches ``radius`` over lattice images m

    Shared by ball-ball contact (relative coordinates, radius 2r), the
    antipodal cylinder and Sinai scatterers.

    Raises:
        GrazingImpact: if |<delta_v, n>| < graze at the contact
    """
    a = float(delta_v @ delta_v)
    if a == 0.0:
        return None
    d = container.min_image(delta_q) + _image_shifts(container, delta_v, horizon)
    b = d @ delta_v
    c = np.sum(d * d, axis=1) - radius * radius
    disc = b * b - a * c
    ok = (b < 0) & (disc >= 0)
    if not np.any(ok):
        return None
    d, b, c, disc = d[ok], b[ok], c[ok], disc[ok]
    # c / (-b + sqrt) is the smaller root without cancellation
    times = np.maximum(c / (-b + np.sqrt(disc)), 0.0)
    i = int(np.argmin(times))
    t = float(times[i])
    if t > horizon:
        return None

    gap = d[i] + t * delta_v
    slope = 2.0 * float(gap @ delta_v)
    if slope != 0.0:
        refined = t - (float(gap @ gap) - radius * radius) / slope
        if refined >= 0.0:
            t = refined
            gap = d[i] + t * delta_v
    normal = gap / np.sqrt(gap @ gap)
    vn = float(delta_v @ normal)
    if abs(vn) < graze:
        logger.error(f"Grazing contact at t={t:.15g}: |<dv,n>| = {abs(vn):.3g}")
        raise GrazingImpact(f"|<dv, n>| = {abs(vn):.3g} < {graze:g} at t = {t:.15g}")
    return Contact(t, normal, vn)


def next_ball_event(x: PhasePoint, horizon: float, params: ModelParams,
                    container: Optional[Container] = None) -> Optional[float]:
    """Least contact time of the two balls within ``horizon`` (free relative flight assumed)"""
    container = container or params.container()
    hit = contact_time(x.q1 - x.q2, x.v1 - x.v2, 2 * params.r, container, horizon, params.tol.graze)
    return None if hit is None else hit.time


def apply_wall_reflection(x: PhasePoint, beta: int, j: int, params: ModelParams,
                          container: Optional[Container] = None) -> PhasePoint:
    """Negate component j of ball beta's velocity; the coordinate is snapped onto the wall

    Raises:
        NotOnWall: if ball beta is not on a wall of axis j
    """
    container = container or params.container()
    axis = j - 1
    if not container.walls[axis]:
        raise NotOnWall(f"axis {j} has no walls in container {container.name}")
    q = np.array(x.q1 if beta == 1 else x.q2)
    v = np.array(x.v1 if beta == 1 else x.v2)
    face = 0 if q[axis] < 0.5 else 1
    offset = abs(q[axis] - face)
    if offset > params.tol.event:
        raise NotOnWall(f"ball {beta} is {offset:.3g} away from the nearest wall of axis {j}")
    q[axis] = float(face)
    v[axis] = -v[axis]
    if beta == 1:
        return PhasePoint.from_arrays(q, x.q2, v, x.v2)
    return PhasePoint.from_arrays(x.q1, q, x.v1, v)


def apply_ball_collision(x: PhasePoint, params: ModelParams,
                         container: Optional[Container] = None) -> Tuple[PhasePoint, np.ndarray]:
    """Elastic equal-mass collision; returns the new point and the unit normal (q1 - q2)/2r

    Raises:
        NotInContact: if the balls are not at distance 2r
        Receding: if the balls move apart along the normal
    """
    container = container or params.container()
    delta = container.min_image(x.q1 - x.q2)
    dist = float(np.sqrt(delta @ delta))
    if abs(dist - 2 * params.r) > params.tol.contact:
        raise NotInContact(f"dist(q1, q2) = {dist:.15g}, contact at {2 * params.r:.15g}")
    normal = delta / dist
    vn = float((x.v1 - x.v2) @ normal)
    if vn > params.tol.graze:
        raise Receding(f"<dv, n> = {vn:.3g} > 0")
    v1 = x.v1 - vn * normal
    v2 = x.v2 + vn * normal
    return x.with_velocities(v1, v2), normal


def advance_flow(x: PhasePoint, t: float, params: ModelParams, container: Optional[Container] = None) -> PhasePoint:
    """Uniform motion for time t, periodic coordinates wrapped

    Raises:
        EventSkipped: if a ball ends up beyond a wall
    """
    if t == 0.0:
        return x
    container = container or params.container()
    q1 = x.q1 + t * x.v1
    q2 = x.q2 + t * x.v2
    walls = container.wall_idx
    if walls.size:
        slack = params.tol.contact
        for q in (q1, q2):
            box = q[walls]
            if np.any(box < -slack) or np.any(box > 1.0 + slack):
                logger.error(f"Free flight of {t:.15g} crossed a wall: box coordinates {box}")
                raise EventSkipped(f"box coordinates {box} left [0,1] during a flight of {t:.15g}")
            q[walls] = np.clip(box, 0.0, 1.0)
    return PhasePoint.from_arrays(container.wrap(q1), container.wrap(q2), x.v1, x.v2)


def _wall_event(x: PhasePoint, time: float, hit: WallHit, params: ModelParams, container: Container) -> Tuple[PhasePoint, CollisionEvent]:
    after = apply_wall_reflection(x, hit.ball, hit.axis, params, container)
    event = CollisionEvent.model_construct(
        time=time, kind="wall", ball=hit.ball, axis=hit.axis, face=hit.face,
        q1=after.q1, q2=after.q2, v1_pre=x.v1, v2_pre=x.v2,
        v1_post=after.v1, v2_post=after.v2, normal=None)
    return after, event


def _ball_event(x: PhasePoint, time: float, params: ModelParams, container: Container) -> Tuple[PhasePoint, CollisionEvent]:
    after, normal = apply_ball_collision(x, params, container)
    event = CollisionEvent.model_construct(
        time=time, kind="ball", ball=None, axis=None, face=None,
        q1=x.q1, q2=x.q2, v1_pre=x.v1, v2_pre=x.v2,
        v1_post=after.v1, v2_post=after.v2, normal=frozen_vector(normal))
    return after, event


class EventLoop:
    """Streaming event loop: iterate to receive CollisionEvents in time order

    After iteration ``state`` and ``time`` hold the final phase point and
    the stop time; ``warnings`` holds the branch warnings met on the way.
    """

    def __init__(self, x0: PhasePoint, params: ModelParams, stop: StopCondition,
                 container: Optional[Container] = None, t0: float = 0.0):
        self.params = params
        self.container = container or params.container()
        self.stop = stop
        self.state = x0
        self.t0 = t0
        self.time = t0
        self.n_events = 0
        self.n_ball = 0
        self.warnings: List[BranchWarning] = []
        self.done = False
        self._recent = deque()

    def _limit_reached(self) -> bool:
        stop = self.stop
        if stop.n_events is not None and self.n_events >= stop.n_events:
            return True
        if stop.n_ball_collisions is not None and self.n_ball >= stop.n_ball_collisions:
            return True
        if stop.t_max is not None and self.time - self.t0 >= stop.t_max:
            return True
        return False

    def _record(self, event: CollisionEvent):
        self.n_events += 1
        if event.is_ball:
            self.n_ball += 1
        recent = self._recent
        recent.append(event.time)
        while recent[0] < event.time - 1.0:
            recent.popleft()
        if len(recent) > MAX_EVENTS_PER_UNIT_TIME:
            logger.error(f"{len(recent)} events within one time unit before t={event.time:.6g}")
            raise AccumulationSuspected(f"{len(recent)} events in [{event.time - 1.0:.6g}, {event.time:.6g}]")

    def _move(self, dt: float):
        if dt > 0.0:
            self.state = advance_flow(self.state, dt, self.params, self.container)
            self.time += dt

    def step(self) -> Optional[List[CollisionEvent]]:
        """Process the next event group; None once the stop condition holds"""
        if self.done or self._limit_reached():
            self.done = True
            return None
        params, container, tol = self.params, self.container, self.params.tol
        x = self.state

        remaining = np.inf if self.stop.t_max is None else self.t0 + self.stop.t_max - self.time
        walls = wall_candidates(x, params, container)
        t_wall = walls[0].time if walls else np.inf
        horizon = min(t_wall, MAX_FLIGHT, remaining) + tol.event
        contact = contact_time(x.q1 - x.q2, x.v1 - x.v2, 2 * params.r, container, horizon, tol.graze)
        t_ball = np.inf if contact is None else contact.time
        t_next = min(t_wall, t_ball)

        if t_next > remaining:
            self._move(remaining)
            self.done = True
            return None
        if t_next > MAX_FLIGHT:
            self._move(MAX_FLIGHT)
            return []

        group_walls = [hit for hit in walls if hit.time <= t_next + tol.event]
        with_ball = t_ball <= t_next + tol.event
        if len(group_walls) + with_ball > 1:
            times = [hit.time for hit in group_walls] + ([t_ball] if with_ball else [])
            gap = max(times) - min(times)
            labels = tuple(f"wall(ball={h.ball}, axis={h.axis}, face={h.face})"
                           for h in sorted(group_walls, key=lambda h: (h.ball, h.axis, h.face)))
            labels += ("ball",) if with_ball else ()
            when = self.time + t_next
            if with_ball and gap < tol.event / 10:
                logger.error(f"Ball collision coincides with another event at t={when:.15g} (gap {gap:.3g})")
                raise BranchAmbiguity(f"events {labels} within {gap:.3g} at t = {when:.15g}")
            logger.warning(f"Near-simultaneous events {labels} at t={when:.15g}, gap {gap:.3g}")
            self.warnings.append(BranchWarning(time=when, gap=gap, events=labels))

        events = []
        start = self.time
        for hit in sorted(group_walls, key=lambda h: (h.ball, h.axis, h.face)):
            self._move(max(start + hit.time - self.time, 0.0))
            self.state, event = _wall_event(self.state, self.time, hit, params, container)
            self._record(event)
            events.append(event)
            if self._limit_reached():
                self.done = True
                return events
        if with_ball:
            self._move(max(start + t_ball - self.time, 0.0))
            delta = container.min_image(self.state.q1 - self.state.q2)
            if float((self.state.v1 - self.state.v2) @ delta) < 0.0:
                self.state, event = _ball_event(self.state, self.time, params, container)
                self._record(event)
                events.append(event)
        return events

    def __iter__(self) -> Iterator[CollisionEvent]:
        while True:
            batch = self.step()
            if batch is None:
                return
            yield from batch


def iter_events(x0: PhasePoint, params: ModelParams, stop: StopCondition,
                container: Optional[Container] = None, t0: float = 0.0) -> EventLoop:
    """Streaming form of simulate; the returned loop is iterable over events"""
    return EventLoop(x0, params, stop, container, t0)


def simulate(x0: PhasePoint, stop: StopCondition, params: ModelParams, container: Optional[Container] = None,
             validate_initial: bool = True, t0: float = 0.0) -> TrajectorySegment:
    """Run the event loop from x0 until the stop condition and log every event

    Raises:
        PreconditionError: if x0 does not validate
        GrazingImpact, BranchAmbiguity, AccumulationSuspected: from the loop
    """
    container = container or params.container()
    if validate_initial:
        violations = validate(params, x0, container)
        if violations:
            details = "; ".join(v.detail for v in violations)
            raise PreconditionError(f"initial point is invalid: {details}")

    loop = EventLoop(x0, params, stop, container, t0)
    events = tuple(loop)
    segment = TrajectorySegment.model_construct(
        params=params, container=container, initial=x0, events=events, t_start=t0,
        t_end=loop.time, final=loop.state, branch_warnings=tuple(loop.warnings))

    drift = abs(loop.state.energy - x0.energy)
    if drift > params.tol.drift:
        logger.warning(f"Energy drift {drift:.3g} over {len(events)} events")
    logger.debug(f"Simulated {len(events)} events ({loop.n_ball} ball) up to t={loop.time:.6g}")
    return segment


def _max_position_gap(a: PhasePoint, b: PhasePoint, container: Container) -> float:
    gaps = [np.max(np.abs(container.min_image(a.q1 - b.q1)), initial=0.0),
            np.max(np.abs(container.min_image(a.q2 - b.q2)), initial=0.0)]
    return float(max(gaps))


def _max_velocity_gap(a: PhasePoint, b: PhasePoint) -> float:
    return float(max(np.max(np.abs(a.v1 - b.v1), initial=0.0), np.max(np.abs(a.v2 - b.v2), initial=0.0)))


def replay(seg: TrajectorySegment, tolerance: float = REPLAY_TOLERANCE) -> float:
    """Re-apply the reflection laws to the event log and compare every recorded state

    Each event is replayed from the recorded post-state of its predecessor.
    Returns the largest deviation found.

    Raises:
        ReplayMismatch: if a deviation exceeds ``tolerance``
    """
    params, container = seg.params, seg.container
    x, t = seg.initial, seg.t_start
    worst = 0.0
    for i, event in enumerate(seg.events):
        moved = advance_flow(x, event.time - t, params, container)
        before = event.pre
        gap = max(_max_position_gap(moved, before, container), _max_velocity_gap(moved, before))
        if event.is_wall:
            after = apply_wall_reflection(before, event.ball, event.axis, params, container)
        else:
            after, _ = apply_ball_collision(before, params, container)
        gap = max(gap, _max_velocity_gap(after, event.post))
        worst = max(worst, gap)
        if gap > tolerance:
            logger.error(f"Replay of event {i} ({event.describe()}) deviates by {gap:.3g}")
            raise ReplayMismatch(f"event {i} at t={event.time:.15g} deviates by {gap:.3g}")
        x, t = event.post, event.time
    end = advance_flow(x, seg.t_end - t, params, container)
    gap = max(_max_position_gap(end, seg.final, container), _max_velocity_gap(end, seg.final))
    worst = max(worst, gap)
    if gap > tolerance:
        logger.error(f"Replayed final state deviates by {gap:.3g}")
        raise ReplayMismatch(f"final state deviates by {gap:.3g}")
    return worst


def slice_segment(seg: TrajectorySegment, t0: float, t1: float) -> TrajectorySegment:
    """Sub-segment [t0, t1] with the events in (t0, t1]"""
    if not seg.t_start <= t0 < t1 <= seg.t_end:
        raise PreconditionError(f"[{t0}, {t1}] is not inside [{seg.t_start}, {seg.t_end}]")
    events = tuple(event for event in seg.events if t0 < event.time <= t1)
    warnings = tuple(w for w in seg.branch_warnings if t0 < w.time <= t1)
    return TrajectorySegment.model_construct(
        params=seg.params, container=seg.container, initial=seg.state_at(t0), events=events,
        t_start=t0, t_end=t1, final=seg.state_at(t1), branch_warnings=warnings)


def reverse_segment(seg: TrajectorySegment) -> TrajectorySegment:
    """The same orbit traversed backwards: velocities negated, event order reversed

    Time t maps to t_start + t_end - t.
    """
    a, b = seg.t_start, seg.t_end
    events = tuple(
        CollisionEvent.model_construct(
            time=a + b - event.time, kind=event.kind, ball=event.ball, axis=event.axis, face=event.face,
            q1=event.q1, q2=event.q2, v1_pre=frozen_vector(-event.v1_post), v2_pre=frozen_vector(-event.v2_post),
            v1_post=frozen_vector(-event.v1_pre), v2_post=frozen_vector(-event.v2_pre), normal=event.normal)
        for event in reversed(seg.events))
    warnings = tuple(BranchWarning(time=a + b - w.time, gap=w.gap, events=w.events)
                     for w in reversed(seg.branch_warnings))
    return TrajectorySegment.model_construct(
        params=seg.params, container=seg.container, initial=seg.final.reversed(), events=events,
        t_start=a, t_end=b, final=seg.initial.reversed(), branch_warnings=warnings)


class ReversibilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_error: float
    events_reversed: bool
    n_events: int
    n_events_back: int


def check_reversibility(seg: TrajectorySegment) -> ReversibilityReport:
    """Negate velocities at t_end, run for the same duration, negate again and compare

    Rounding is amplified exponentially along a chaotic orbit, so the error
    is small only on segments of moderate length.
    """
    back = simulate(seg.final.reversed(), StopCondition(t_max=seg.duration), seg.params, seg.container,
                    validate_initial=False)
    returned = back.final.reversed()
    error = max(_max_position_gap(returned, seg.initial, seg.container), _max_velocity_gap(returned, seg.initial))
    forward = [event.label for event in seg.events]
    backward = [event.label for event in reversed(back.events)]
    report = ReversibilityReport(max_error=error, events_reversed=forward == backward,
                                 n_events=len(forward), n_events_back=len(backward))
    logger.info(f"Reversibility over {seg.duration:.6g} time units: error {error:.3g}, "
                f"events reversed: {report.events_reversed}")
    return report
