"""The standard (nu, k, r) two-ball model: parameters, container and phase points

Ball centers live in [0,1]^k x T^(nu-k). Axes are numbered 1..nu in every
public interface; axes 1..k carry walls at 0 and 1, the rest are periodic.
The phase space is reduced by 2E = ||v1||^2 + ||v2||^2 = 1 and
pi_2(q1 + q2) = pi_2(v1 + v2) = 0 on the periodic axes.
"""

from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from .errors import RejectionBudgetExceeded
from ..utils.logging import setup_logging

logger = setup_logging()

MAX_REJECTIONS = 10**6


def frozen_vector(value) -> np.ndarray:
    """Read-only float64 copy of a vector-like value"""
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


class ToleranceSet(BaseModel):
    """Numerical tolerances (all strictly between 0 and 1e-3)"""

    model_config = ConfigDict(frozen=True)

    event: float = Field(default=1e-12, gt=0, lt=1e-3, description="simultaneity of event times")
    graze: float = Field(default=1e-10, gt=0, lt=1e-3, description="|<dv, n>| below which a contact is tangential")
    rank: float = Field(default=1e-8, gt=0, lt=1e-3, description="relative singular value threshold")
    fold: float = Field(default=1e-9, gt=0, lt=1e-3, description="folding identity tolerance on positions")
    contact: float = Field(default=1e-9, gt=0, lt=1e-3, description="geometric contact / overlap slack")
    drift: float = Field(default=1e-9, gt=0, lt=1e-3, description="normalization and reduction drift")


class Container(BaseModel):
    """Per-axis layout of the ball-center domain

    An axis is either a wall axis (walls at 0 and 1) or a periodic axis with
    the given period. The standard container has walls on axes 1..k and
    period 1 on the rest; unfolding an axis makes it a period-2 circle.
    """

    model_config = ConfigDict(frozen=True)

    walls: Tuple[bool, ...]
    periods: Tuple[float, ...]
    name: str = "standard"

    @model_validator(mode="after")
    def _check_layout(self):
        if len(self.walls) != len(self.periods):
            raise ValueError("walls and periods must have the same length")
        for wall, period in zip(self.walls, self.periods):
            if not wall and period <= 0:
                raise ValueError("periodic axes need a positive period")
        return self

    @classmethod
    def standard(cls, nu: int, k: int) -> "Container":
        return cls(walls=tuple(j < k for j in range(nu)),
                   periods=tuple(0.0 if j < k else 1.0 for j in range(nu)))

    @classmethod
    def torus(cls, nu: int, period: float = 1.0, name: str = "torus") -> "Container":
        return cls(walls=(False,) * nu, periods=(period,) * nu, name=name)

    def lifted(self, axis: int) -> "Container":
        """Copy with wall axis ``axis`` (1-based) replaced by a period-2 circle"""
        j = axis - 1
        if not self.walls[j]:
            raise ValueError(f"axis {axis} is not a wall axis")
        walls = list(self.walls)
        periods = list(self.periods)
        walls[j] = False
        periods[j] = 2.0
        return Container(walls=tuple(walls), periods=tuple(periods), name=f"lifted-axis-{axis}")

    def __eq__(self, other):
        # layout only; the cached index arrays must not enter the comparison
        if not isinstance(other, Container):
            return NotImplemented
        return self.walls == other.walls and self.periods == other.periods

    def __hash__(self):
        return hash((self.walls, self.periods))

    @property
    def nu(self) -> int:
        return len(self.walls)

    @cached_property
    def wall_idx(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.walls, dtype=bool))

    @cached_property
    def periodic_idx(self) -> np.ndarray:
        return np.flatnonzero(~np.array(self.walls, dtype=bool))

    @cached_property
    def period_vec(self) -> np.ndarray:
        return np.array(self.periods, dtype=float)[self.periodic_idx]

    def min_image(self, delta: np.ndarray) -> np.ndarray:
        """Minimal-image displacement (periodic axes only; works on stacked rows)"""
        out = np.array(delta, dtype=float)
        if self.periodic_idx.size:
            p = self.period_vec
            part = out[..., self.periodic_idx]
            out[..., self.periodic_idx] = part - p * np.round(part / p)
        return out

    def wrap(self, q: np.ndarray) -> np.ndarray:
        """Wrap periodic coordinates into [0, period)"""
        out = np.array(q, dtype=float)
        if self.periodic_idx.size:
            p = self.period_vec
            part = np.mod(out[..., self.periodic_idx], p)
            # np.mod can round a tiny negative up to the period itself
            part = np.where(part >= p, 0.0, part)
            out[..., self.periodic_idx] = part
        return out


class ModelParams(BaseModel):
    """The triple (nu, k, r) plus numerical tolerances"""

    model_config = ConfigDict(frozen=True)

    nu: int = Field(ge=2, description="dimension")
    k: int = Field(ge=0, description="number of wall (non-periodic) axes")
    r: float = Field(gt=0, lt=0.25, description="ball radius")
    tol: ToleranceSet = Field(default_factory=ToleranceSet)

    @model_validator(mode="after")
    def _check_k(self):
        if self.k > self.nu:
            raise ValueError(f"k={self.k} exceeds nu={self.nu}")
        return self

    @property
    def d(self) -> int:
        """Dimension of the reduced configuration space"""
        return self.nu + self.k

    @property
    def box_axes(self) -> Tuple[int, ...]:
        """The axis set A = {1, ..., k}"""
        return tuple(range(1, self.k + 1))

    @cached_property
    def standard_container(self) -> Container:
        return Container.standard(self.nu, self.k)

    def container(self) -> Container:
        return self.standard_container


class PhasePoint(BaseModel):
    """Positions and velocities of both balls"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    q1: np.ndarray
    q2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    @field_validator("q1", "q2", "v1", "v2", mode="before")
    @classmethod
    def _to_vector(cls, value):
        arr = frozen_vector(value)
        if arr.ndim != 1:
            raise ValueError("expected a 1-D vector")
        return arr

    @model_validator(mode="after")
    def _same_shape(self):
        if not (self.q1.shape == self.q2.shape == self.v1.shape == self.v2.shape):
            raise ValueError("q1, q2, v1, v2 must have the same length")
        return self

    @field_serializer("q1", "q2", "v1", "v2")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()

    @classmethod
    def from_arrays(cls, q1, q2, v1, v2) -> "PhasePoint":
        """Build without validation from already-checked arrays"""
        return cls.model_construct(q1=frozen_vector(q1), q2=frozen_vector(q2),
                                   v1=frozen_vector(v1), v2=frozen_vector(v2))

    @property
    def nu(self) -> int:
        return self.q1.shape[0]

    @property
    def energy(self) -> float:
        """||v1||^2 + ||v2||^2 (equals 2E, normalized to 1)"""
        return float(self.v1 @ self.v1 + self.v2 @ self.v2)

    def with_velocities(self, v1, v2) -> "PhasePoint":
        return PhasePoint.from_arrays(self.q1, self.q2, v1, v2)

    def with_positions(self, q1, q2) -> "PhasePoint":
        return PhasePoint.from_arrays(q1, q2, self.v1, self.v2)

    def reversed(self) -> "PhasePoint":
        """Same positions, negated velocities"""
        return PhasePoint.from_arrays(self.q1, self.q2, -self.v1, -self.v2)

    def as_vector(self) -> np.ndarray:
        """Concatenation (q1, q2, v1, v2) of length 4 nu"""
        return np.concatenate([self.q1, self.q2, self.v1, self.v2])


class Violation(BaseModel):
    """One violated invariant of a phase point"""

    model_config = ConfigDict(frozen=True)

    kind: str
    magnitude: float
    limit: float
    detail: str = ""


def torus_min_distance(q1, q2, params: ModelParams, container: Optional[Container] = None) -> float:
    """Distance of two centers, minimized over lattice images of the periodic axes"""
    container = container or params.container()
    delta = container.min_image(np.asarray(q1, dtype=float) - np.asarray(q2, dtype=float))
    return float(np.sqrt(delta @ delta))


def validate(params: ModelParams, x: PhasePoint, container: Optional[Container] = None) -> List[Violation]:
    """Every violated invariant of x, with its magnitude (empty list = valid)

    With a non-standard container only the geometric checks (overlap and
    coordinate range) and the energy normalization apply.
    """
    tol = params.tol
    container = container or params.container()
    violations: List[Violation] = []

    if x.nu != params.nu or container.nu != params.nu:
        violations.append(Violation(kind="shape", magnitude=float(x.nu), limit=float(params.nu),
                                    detail="vector length differs from nu"))
        return violations

    values = x.as_vector()
    if not np.all(np.isfinite(values)):
        violations.append(Violation(kind="finite", magnitude=float(np.sum(~np.isfinite(values))), limit=0.0,
                                    detail="non-finite coordinates"))
        return violations

    dist = torus_min_distance(x.q1, x.q2, params, container)
    if dist < 2 * params.r - tol.contact:
        violations.append(Violation(kind="overlap", magnitude=dist, limit=2 * params.r,
                                    detail=f"dist(q1,q2) = {dist:.6g} < 2r = {2 * params.r:.6g}"))

    energy = x.energy
    if abs(energy - 1.0) > tol.drift:
        violations.append(Violation(kind="energy", magnitude=energy, limit=1.0,
                                    detail=f"||v1||^2 + ||v2||^2 = {energy:.12g}"))

    walls = container.wall_idx
    for name, q in (("q1", x.q1), ("q2", x.q2)):
        box = q[walls]
        excess = float(np.max(np.maximum(-box, box - 1.0), initial=0.0))
        if excess > tol.contact:
            violations.append(Violation(kind="range", magnitude=excess, limit=tol.contact,
                                        detail=f"{name} leaves [0,1] on a wall axis by {excess:.3g}"))
        per = q[container.periodic_idx]
        outside = np.logical_or(per < 0.0, per >= container.period_vec)
        if np.any(outside):
            violations.append(Violation(kind="range", magnitude=float(np.sum(outside)), limit=0.0,
                                        detail=f"{name} has periodic coordinates outside [0, period)"))

    if container == params.container() and container.periodic_idx.size:
        per = container.periodic_idx
        s = x.q1[per] + x.q2[per]
        q_drift = float(np.max(np.abs(s - np.round(s))))
        if q_drift > tol.drift:
            violations.append(Violation(kind="position_reduction", magnitude=q_drift, limit=tol.drift,
                                        detail="pi_2(q1 + q2) is not 0 mod 1"))
        v_drift = float(np.max(np.abs(x.v1[per] + x.v2[per])))
        if v_drift > tol.drift:
            violations.append(Violation(kind="velocity_reduction", magnitude=v_drift, limit=tol.drift,
                                        detail="pi_2(v1 + v2) is not 0"))

    return violations


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for sample ``index`` of a run seeded with ``seed``"""
    words = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, dtype=np.uint32)
    return int(words[0]) << 32 | int(words[1])


def _constrained_velocities(rng: np.random.Generator, nu: int, walls: np.ndarray,
                            periodic: np.ndarray, n: Optional[int] = None):
    """Uniform velocities on ||v1||^2 + ||v2||^2 = 1 with pi_2(v1 + v2) = 0

    A standard Gaussian in orthonormal coordinates of the constraint subspace
    (box components of each ball, plus (e_j, -e_j)/sqrt(2) per periodic axis),
    then normalized. Negation is exact, so pi_2(v1 + v2) is exactly zero.
    """
    shape = (nu,) if n is None else (n, nu)
    v1 = np.zeros(shape)
    v2 = np.zeros(shape)
    lead = () if n is None else (n,)
    v1[..., walls] = rng.standard_normal(lead + (walls.size,))
    v2[..., walls] = rng.standard_normal(lead + (walls.size,))
    c = rng.standard_normal(lead + (periodic.size,)) / np.sqrt(2.0)
    v1[..., periodic] = c
    v2[..., periodic] = -c
    norm = np.sqrt(np.sum(v1 * v1, axis=-1) + np.sum(v2 * v2, axis=-1))
    norm = norm if n is None else norm[:, None]
    return v1 / norm, v2 / norm


def sample_liouville(params: ModelParams, seed: int, max_rejections: int = MAX_REJECTIONS) -> PhasePoint:
    """Liouville-uniform phase point, deterministic for a fixed seed

    q1 is uniform; the periodic part of q2 is -(periodic part of q1) and its
    box part is uniform; overlapping draws are rejected.

    Raises:
        RejectionBudgetExceeded: after ``max_rejections`` rejected draws
    """
    rng = np.random.default_rng(seed)
    container = params.container()
    walls, periodic = container.wall_idx, container.periodic_idx
    nu = params.nu

    for _ in range(max_rejections):
        q1 = rng.random(nu)
        q2 = np.empty(nu)
        q2[walls] = rng.random(walls.size)
        q2[periodic] = -q1[periodic]
        q2 = container.wrap(q2)
        if torus_min_distance(q1, q2, params, container) >= 2 * params.r:
            break
    else:
        logger.error(f"Liouville sampling rejected {max_rejections} draws at r={params.r}")
        raise RejectionBudgetExceeded(f"{max_rejections} rejections at nu={nu}, k={params.k}, r={params.r}")

    v1, v2 = _constrained_velocities(rng, nu, walls, periodic)
    return PhasePoint.from_arrays(q1, q2, v1, v2)


def sample_liouville_batch(params: ModelParams, n: int, seed: int,
                           max_rejections: int = MAX_REJECTIONS) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``n`` Liouville-uniform phase points as stacked arrays (q1, q2, v1, v2), each (n, nu)"""
    rng = np.random.default_rng(seed)
    container = params.container()
    walls, periodic = container.wall_idx, container.periodic_idx
    nu = params.nu

    accepted_q1, accepted_q2 = [], []
    have = 0
    rejected = 0
    while have < n:
        batch = max(2 * (n - have), 64)
        q1 = rng.random((batch, nu))
        q2 = np.empty((batch, nu))
        q2[:, walls] = rng.random((batch, walls.size))
        q2[:, periodic] = -q1[:, periodic]
        q2 = container.wrap(q2)
        delta = container.min_image(q1 - q2)
        ok = np.sum(delta * delta, axis=1) >= (2 * params.r) ** 2
        rejected += int(np.sum(~ok))
        if rejected >= max_rejections:
            raise RejectionBudgetExceeded(f"{rejected} rejections at nu={nu}, k={params.k}, r={params.r}")
        accepted_q1.append(q1[ok])
        accepted_q2.append(q2[ok])
        have += int(np.sum(ok))

    q1 = np.concatenate(accepted_q1)[:n]
    q2 = np.concatenate(accepted_q2)[:n]
    v1, v2 = _constrained_velocities(rng, nu, walls, periodic, n=n)
    return q1, q2, v1, v2
