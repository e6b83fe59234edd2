"""The orthogonal cylindric billiard and its splitting into two Sinai billiards

For k = nu, unfolding every axis puts both balls on a torus. After
rescaling to the unit torus the pair (p1, p2) reflects at the genuine
cylinder d(p1, p2) = 2 rho and at the antipodal cylinder d(p1, -p2) = 2 rho,
rho = r / 2. In covering coordinates x = (p1 + p2)/2, y = (p1 - p2)/2 the
genuine cylinder is a sphere of radius rho around the half-lattice
G = {g : 2g = 0} for y, the antipodal one the same sphere for x, and the two
points move independently as Sinai billiards.
"""

import heapq
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from .dynamics import MAX_FLIGHT, StopCondition, contact_time
from .errors import PreconditionError, StreamMismatch
from .model import Container, ModelParams, PhasePoint, ToleranceSet, frozen_vector
from .tangent import reflection_blocks
from ..utils.logging import setup_logging

logger = setup_logging()

STREAM_TIME_TOLERANCE = 1e-9
# Free flights without a contact after which an event stream is taken to be over
MAX_IDLE_FLIGHTS = 10**4


class XYState(BaseModel):
    """Covering coordinates x = (p1 + p2)/2, y = (p1 - p2)/2 on the unit torus"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray
    ydot: np.ndarray

    @field_validator("x", "y", "xdot", "ydot", mode="before")
    @classmethod
    def _to_vector(cls, value):
        return frozen_vector(value)

    @field_serializer("x", "y", "xdot", "ydot")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()

    @property
    def E1(self) -> float:
        return 0.5 * float(self.xdot @ self.xdot)

    @property
    def E2(self) -> float:
        return 0.5 * float(self.ydot @ self.ydot)

    def scatterer_distances(self) -> Tuple[float, float]:
        """(d(x, G), d(y, G))"""
        half = Container.torus(self.x.shape[0], 0.5)
        dx = half.min_image(self.x)
        dy = half.min_image(self.y)
        return float(np.sqrt(dx @ dx)), float(np.sqrt(dy @ dy))

    def overlaps(self, rho: float, slack: float = 0.0) -> bool:
        """True if x or y sits inside a scatterer"""
        return min(self.scatterer_distances()) < rho - slack


def to_xy(q1, q2, v1, v2) -> XYState:
    """Covering coordinates with representatives in [0,1); velocities halved likewise"""
    q1, q2, v1, v2 = (np.asarray(a, dtype=float) for a in (q1, q2, v1, v2))
    unit = Container.torus(q1.shape[0])
    return XYState.model_construct(
        x=frozen_vector(unit.wrap((q1 + q2) / 2)), y=frozen_vector(unit.wrap((q1 - q2) / 2)),
        xdot=frozen_vector((v1 + v2) / 2), ydot=frozen_vector((v1 - v2) / 2))


def from_xy(z: XYState) -> PhasePoint:
    """Inverse of to_xy on the selected branch: p1 = x + y, p2 = x - y (mod 1)"""
    unit = Container.torus(z.x.shape[0])
    return PhasePoint.from_arrays(unit.wrap(z.x + z.y), unit.wrap(z.x - z.y), z.xdot + z.ydot, z.xdot - z.ydot)


def pair_to_xy(pair: PhasePoint) -> XYState:
    return to_xy(pair.q1, pair.q2, pair.v1, pair.v2)


class ScattererEvent(BaseModel):
    """A reflection of one Sinai subsystem off a scatterer"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time: float
    subsystem: Literal["x", "y"]
    position: np.ndarray
    velocity_pre: np.ndarray
    velocity_post: np.ndarray
    normal: np.ndarray

    @field_serializer("position", "velocity_pre", "velocity_post", "normal")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()


class SinaiBilliard:
    """Point particle on the unit torus reflecting off spheres of radius rho centered at G"""

    def __init__(self, nu: int, rho: float, tol: Optional[ToleranceSet] = None, name: Literal["x", "y"] = "y"):
        if not 0 < rho < 0.25:
            raise PreconditionError(f"scatterer radius {rho} outside (0, 1/4)")
        self.nu = nu
        self.rho = rho
        self.tol = tol or ToleranceSet()
        self.name = name
        self.unit = Container.torus(nu, 1.0, name="unit-torus")
        self.scatterers = Container.torus(nu, 0.5, name="half-lattice")

    def next_contact(self, position: np.ndarray, velocity: np.ndarray, horizon: float = MAX_FLIGHT):
        return contact_time(position, velocity, self.rho, self.scatterers, horizon, self.tol.graze)

    @staticmethod
    def reflect(velocity: np.ndarray, normal: np.ndarray) -> np.ndarray:
        return velocity - 2.0 * float(velocity @ normal) * normal

    def jacobian(self, normal: np.ndarray, velocity: np.ndarray) -> np.ndarray:
        """2nu x 2nu derivative of a scatterer reflection on (dpos, dvel)"""
        R, K = reflection_blocks(normal, velocity, self.rho, self.tol.graze)
        return np.block([[R, np.zeros_like(R)], [-K, R]])

    def events(self, position: np.ndarray, velocity: np.ndarray, t0: float = 0.0) -> Iterator[ScattererEvent]:
        """Endless stream of scatterer events (empty if the particle is at rest)"""
        pos = self.unit.wrap(np.asarray(position, dtype=float))
        vel = np.asarray(velocity, dtype=float)
        if not np.any(vel):
            return
        t = t0
        idle = 0
        while True:
            hit = self.next_contact(pos, vel)
            if hit is None:
                idle += 1
                if idle > MAX_IDLE_FLIGHTS:
                    logger.warning(f"Subsystem {self.name}: no scatterer within {idle} time units, stream ends")
                    return
                pos = self.unit.wrap(pos + MAX_FLIGHT * vel)
                t += MAX_FLIGHT
                continue
            idle = 0
            pos = self.unit.wrap(pos + hit.time * vel)
            t += hit.time
            post = self.reflect(vel, hit.normal)
            yield ScattererEvent.model_construct(
                time=t, subsystem=self.name, position=frozen_vector(pos), velocity_pre=frozen_vector(vel),
                velocity_post=frozen_vector(post), normal=frozen_vector(hit.normal))
            vel = post

    def run(self, position, velocity, t_max: float) -> Tuple[List[ScattererEvent], np.ndarray, np.ndarray]:
        """Events in (0, t_max] and the final (position, velocity)"""
        pos = np.asarray(position, dtype=float)
        vel = np.asarray(velocity, dtype=float)
        out, t = [], 0.0
        for event in self.events(pos, vel):
            if event.time > t_max:
                break
            out.append(event)
            pos, vel, t = event.position, event.velocity_post, event.time
        return out, self.unit.wrap(pos + (t_max - t) * vel), vel


class ProductRun(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    x_events: List[ScattererEvent]
    y_events: List[ScattererEvent]
    final: XYState
    t_end: float
    E1: float
    E2: float
    energy_drift: Tuple[float, float]


def _final_from_events(events: List[ScattererEvent], position, velocity, t_end: float, unit: Container):
    if events:
        last = events[-1]
        return unit.wrap(last.position + (t_end - last.time) * last.velocity_post), last.velocity_post
    return unit.wrap(np.asarray(position) + t_end * np.asarray(velocity)), np.asarray(velocity)


def simulate_product(z0: XYState, stop: StopCondition, rho: float, tol: Optional[ToleranceSet] = None,
                     threads: bool = True) -> ProductRun:
    """Run the x and y Sinai subsystems independently

    With a time limit the two subsystems run on two threads; an event limit
    counts the merged stream.
    """
    nu = z0.x.shape[0]
    slack = (tol or ToleranceSet()).contact
    if z0.overlaps(rho, slack):
        raise PreconditionError(f"initial covering point inside a scatterer: distances {z0.scatterer_distances()}")
    x_sys = SinaiBilliard(nu, rho, tol, name="x")
    y_sys = SinaiBilliard(nu, rho, tol, name="y")

    if stop.n_events is None and stop.n_ball_collisions is None:
        t_max = stop.t_max
        if threads:
            with ThreadPoolExecutor(max_workers=2) as pool:
                fx = pool.submit(x_sys.run, z0.x, z0.xdot, t_max)
                fy = pool.submit(y_sys.run, z0.y, z0.ydot, t_max)
                x_events, xf, xv = fx.result()
                y_events, yf, yv = fy.result()
        else:
            x_events, xf, xv = x_sys.run(z0.x, z0.xdot, t_max)
            y_events, yf, yv = y_sys.run(z0.y, z0.ydot, t_max)
        t_end = t_max
    else:
        limit = min(n for n in (stop.n_events, stop.n_ball_collisions) if n is not None)
        merged = heapq.merge(x_sys.events(z0.x, z0.xdot), y_sys.events(z0.y, z0.ydot), key=lambda e: e.time)
        x_events, y_events = [], []
        t_end = 0.0
        for count, event in enumerate(merged):
            if count >= limit or (stop.t_max is not None and event.time > stop.t_max):
                break
            (x_events if event.subsystem == "x" else y_events).append(event)
            t_end = event.time
        if stop.t_max is not None and (len(x_events) + len(y_events) < limit):
            t_end = stop.t_max
        xf, xv = _final_from_events(x_events, z0.x, z0.xdot, t_end, x_sys.unit)
        yf, yv = _final_from_events(y_events, z0.y, z0.ydot, t_end, y_sys.unit)

    final = XYState.model_construct(x=frozen_vector(xf), y=frozen_vector(yf), xdot=frozen_vector(xv),
                                    ydot=frozen_vector(yv))
    drift = (abs(final.E1 - z0.E1), abs(final.E2 - z0.E2))
    logger.debug(f"Product run: {len(x_events)} x events, {len(y_events)} y events up to t={t_end:.6g}")
    return ProductRun(x_events=x_events, y_events=y_events, final=final, t_end=t_end,
                      E1=final.E1, E2=final.E2, energy_drift=drift)


class PairEvent(BaseModel):
    """A reflection of the ball pair at the genuine or the antipodal cylinder"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time: float
    kind: Literal["genuine", "antipodal"]
    p1: np.ndarray
    p2: np.ndarray
    v1_pre: np.ndarray
    v2_pre: np.ndarray
    v1_post: np.ndarray
    v2_post: np.ndarray
    normal: np.ndarray

    @field_serializer("p1", "p2", "v1_pre", "v2_pre", "v1_post", "v2_post", "normal")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()

    @property
    def subsystem(self) -> str:
        """The covering subsystem this event belongs to"""
        return "y" if self.kind == "genuine" else "x"


class PairRun(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rho: float
    initial: PhasePoint
    events: List[PairEvent]
    t_end: float
    final: PhasePoint


def simulate_pair(state: PhasePoint, stop: StopCondition, rho: float,
                  tol: Optional[ToleranceSet] = None) -> PairRun:
    """Two balls on the unit torus reflecting at d(p1, p2) = 2 rho and at d(p1, -p2) = 2 rho"""
    tol = tol or ToleranceSet()
    unit = Container.torus(state.nu, 1.0, name="unit-torus")
    p1, p2 = np.array(state.q1), np.array(state.q2)
    v1, v2 = np.array(state.v1), np.array(state.v2)
    t = 0.0
    events: List[PairEvent] = []
    limit = min((n for n in (stop.n_events, stop.n_ball_collisions) if n is not None), default=None)
    idle = 0

    while limit is None or len(events) < limit:
        remaining = np.inf if stop.t_max is None else stop.t_max - t
        horizon = min(MAX_FLIGHT, remaining) + tol.event
        genuine = contact_time(p1 - p2, v1 - v2, 2 * rho, unit, horizon, tol.graze)
        antipodal = contact_time(p1 + p2, v1 + v2, 2 * rho, unit, horizon, tol.graze)
        candidates = [(c.time, kind, c) for kind, c in (("genuine", genuine), ("antipodal", antipodal)) if c]
        if not candidates:
            step = min(MAX_FLIGHT, remaining)
            p1, p2 = unit.wrap(p1 + step * v1), unit.wrap(p2 + step * v2)
            t += step
            idle += 1
            if step == remaining or idle > MAX_IDLE_FLIGHTS:
                break
            continue
        idle = 0
        dt, kind, hit = min(candidates, key=lambda c: c[0])
        if dt > remaining:
            p1, p2 = unit.wrap(p1 + remaining * v1), unit.wrap(p2 + remaining * v2)
            t += remaining
            break
        p1, p2 = unit.wrap(p1 + dt * v1), unit.wrap(p2 + dt * v2)
        t += dt
        n = hit.normal
        if kind == "genuine":
            s = float((v1 - v2) @ n)
            w1, w2 = v1 - s * n, v2 + s * n
        else:
            s = float((v1 + v2) @ n)
            w1, w2 = v1 - s * n, v2 - s * n
        events.append(PairEvent.model_construct(
            time=t, kind=kind, p1=frozen_vector(p1), p2=frozen_vector(p2), v1_pre=frozen_vector(v1),
            v2_pre=frozen_vector(v2), v1_post=frozen_vector(w1), v2_post=frozen_vector(w2),
            normal=frozen_vector(n)))
        v1, v2 = w1, w2

    final = PhasePoint.from_arrays(p1, p2, v1, v2)
    return PairRun(rho=rho, initial=state, events=events, t_end=t, final=final)


def lift_to_pair(x0: PhasePoint, params: ModelParams) -> Tuple[PhasePoint, float]:
    """Box phase point (k = nu) to the pair on the unit torus: positions and velocities halved, rho = r/2"""
    if params.k != params.nu:
        raise PreconditionError(f"the product construction needs k = nu, got k={params.k}, nu={params.nu}")
    return PhasePoint.from_arrays(x0.q1 / 2, x0.q2 / 2, x0.v1 / 2, x0.v2 / 2), params.r / 2


class ProductVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    n_events: int
    n_windows: int
    window: int
    n_genuine: int
    n_antipodal: int
    rho: float
    max_time_error: float
    max_energy_drift: float
    E1: float
    E2: float
    agreement_events: int = Field(0, description="leading pair events matched by one product run from the start")
    agreement_time: float = Field(0.0, description="time of the last of those events")


def _compare_times(label: str, pair_times: List[float], product_times: List[float], w: int) -> float:
    if len(pair_times) != len(product_times):
        logger.error(f"Window {w}: {len(pair_times)} pair {label} events, {len(product_times)} in the product run")
        raise StreamMismatch(f"window {w}: {label} event counts {len(pair_times)} != {len(product_times)}")
    gaps = [abs(a - b) for a, b in zip(pair_times, product_times)]
    worst = max(gaps, default=0.0)
    if worst > STREAM_TIME_TOLERANCE:
        logger.error(f"Window {w}: {label} event times differ by {worst:.3g}")
        raise StreamMismatch(f"window {w}: {label} event times differ by {worst:.3g}")
    return worst


def _agreement_prefix(coupled: PairRun, factor: ProductRun) -> Tuple[int, float]:
    """Leading pair events whose partners in the product run come at the same time"""
    partners = {"genuine": iter(factor.y_events), "antipodal": iter(factor.x_events)}
    count, t_last = 0, 0.0
    for event in coupled.events:
        partner = next(partners[event.kind], None)
        if partner is None or abs(partner.time - event.time) > STREAM_TIME_TOLERANCE:
            break
        count += 1
        t_last = event.time
    return count, t_last


def check_product_decomposition(x0: PhasePoint, params: ModelParams, n_events: int, window: int = 3,
                                mapping: Callable[[PhasePoint], XYState] = pair_to_xy) -> ProductVerdict:
    """Compare the coupled pair dynamics with the factorized Sinai product, window by window

    Each window restarts the product run from the mapped pair state and
    runs both for ``window`` events; genuine collisions must match y events
    and antipodal ones x events. One more product run from the start,
    never restarted, reports how many leading events it matches before
    rounding separates the two simulations.

    Raises:
        StreamMismatch: if the two event streams disagree
    """
    if window < 1:
        raise PreconditionError(f"window must be positive, got {window}")
    pair, rho = lift_to_pair(x0, params)
    pair_start = pair
    tol = params.tol
    z_start = mapping(pair)
    E1, E2 = z_start.E1, z_start.E2
    done, windows = 0, 0
    worst_time = worst_energy = 0.0
    n_genuine = n_antipodal = 0

    while done < n_events:
        size = min(window, n_events - done)
        coupled = simulate_pair(pair, StopCondition(n_events=size), rho, tol)
        z = mapping(pair)
        factor = simulate_product(z, StopCondition(n_events=len(coupled.events)), rho, tol)
        genuine = [e.time for e in coupled.events if e.kind == "genuine"]
        antipodal = [e.time for e in coupled.events if e.kind == "antipodal"]
        worst_time = max(worst_time,
                         _compare_times("genuine/y", genuine, [e.time for e in factor.y_events], windows),
                         _compare_times("antipodal/x", antipodal, [e.time for e in factor.x_events], windows))
        worst_energy = max(worst_energy, abs(factor.E1 - E1), abs(factor.E2 - E2))
        n_genuine += len(genuine)
        n_antipodal += len(antipodal)
        done += len(coupled.events)
        windows += 1
        pair = coupled.final
        if not coupled.events:
            break

    agreement_events, agreement_time = 0, 0.0
    if done:
        coupled = simulate_pair(pair_start, StopCondition(n_events=done), rho, tol)
        factor = simulate_product(z_start, StopCondition(n_events=done), rho, tol)
        agreement_events, agreement_time = _agreement_prefix(coupled, factor)

    if worst_energy > tol.drift:
        logger.warning(f"Product energies drift by {worst_energy:.3g}")
    logger.info(f"Product decomposition agrees over {done} events in {windows} windows "
                f"({n_genuine} genuine, {n_antipodal} antipodal); one unbroken run matches {agreement_events}")
    return ProductVerdict(passed=True, n_events=done, n_windows=windows, window=window, n_genuine=n_genuine,
                          n_antipodal=n_antipodal, rho=rho, max_time_error=worst_time,
                          max_energy_drift=worst_energy, E1=E1, E2=E2,
                          agreement_events=agreement_events, agreement_time=agreement_time)
