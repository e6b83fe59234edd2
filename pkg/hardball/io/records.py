"""Wire-level record models for JSONL event logs and JSON documents"""

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .. import __version__
from ..core.dynamics import BranchWarning, CollisionEvent, TrajectorySegment
from ..core.model import Container, ModelParams, PhasePoint, frozen_vector
from ..core.neutral import ExceptionalFlag, NeutralReport
from ..core.product import PairEvent, ScattererEvent
from ..core.symbolic import RichnessReport, SymbolicSequence

Vector = List[float]
Subsystem = Literal["x", "y", "pair"]


def _vec(value) -> Optional[Vector]:
    return None if value is None else np.asarray(value, dtype=float).tolist()


class HeaderRecord(BaseModel):
    """First line of every event log"""

    record: Literal["header"] = "header"
    version: str = __version__
    params: Optional[ModelParams] = None
    seed: Optional[int] = None
    container: Optional[Container] = None
    subsystem: Optional[Subsystem] = None
    rho: Optional[float] = Field(default=None, description="scatterer / contact radius on the unit torus")
    scale: Optional[str] = None
    initial: Optional[PhasePoint] = None
    t_start: float = 0.0


class EventRecord(BaseModel):
    """One collision; scatterer events fill only the q1 / v1 slots"""

    record: Literal["event"] = "event"
    t: float
    kind: Literal["wall", "ball", "genuine", "antipodal", "scatterer"]
    ball: Optional[int] = None
    axis: Optional[int] = None
    face: Optional[int] = None
    q1: Vector
    q2: Optional[Vector] = None
    v1_pre: Vector
    v1_post: Vector
    v2_pre: Optional[Vector] = None
    v2_post: Optional[Vector] = None
    normal: Optional[Vector] = None

    @classmethod
    def from_event(cls, event: CollisionEvent) -> "EventRecord":
        return cls(t=event.time, kind=event.kind, ball=event.ball, axis=event.axis, face=event.face,
                   q1=_vec(event.q1), q2=_vec(event.q2), v1_pre=_vec(event.v1_pre), v1_post=_vec(event.v1_post),
                   v2_pre=_vec(event.v2_pre), v2_post=_vec(event.v2_post), normal=_vec(event.normal))

    @classmethod
    def from_pair_event(cls, event: PairEvent) -> "EventRecord":
        return cls(t=event.time, kind=event.kind, q1=_vec(event.p1), q2=_vec(event.p2),
                   v1_pre=_vec(event.v1_pre), v1_post=_vec(event.v1_post), v2_pre=_vec(event.v2_pre),
                   v2_post=_vec(event.v2_post), normal=_vec(event.normal))

    @classmethod
    def from_scatterer_event(cls, event: ScattererEvent) -> "EventRecord":
        return cls(t=event.time, kind="scatterer", q1=_vec(event.position), v1_pre=_vec(event.velocity_pre),
                   v1_post=_vec(event.velocity_post), normal=_vec(event.normal))

    def to_event(self) -> CollisionEvent:
        """Back to a CollisionEvent (wall and ball kinds only)"""
        if self.kind not in ("wall", "ball"):
            raise ValueError(f"cannot rebuild a billiard event from kind {self.kind!r}")
        return CollisionEvent.model_construct(
            time=self.t, kind=self.kind, ball=self.ball, axis=self.axis, face=self.face,
            q1=frozen_vector(self.q1), q2=frozen_vector(self.q2), v1_pre=frozen_vector(self.v1_pre),
            v2_pre=frozen_vector(self.v2_pre), v1_post=frozen_vector(self.v1_post),
            v2_post=frozen_vector(self.v2_post), normal=None if self.normal is None else frozen_vector(self.normal))


class EndRecord(BaseModel):
    """Last line of an event log: where the run stopped"""

    record: Literal["end"] = "end"
    t_end: float
    n_events: int
    final: Optional[PhasePoint] = None
    branch_warnings: List[BranchWarning] = Field(default_factory=list)


class SigmaRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    t_sigma: List[float]
    Z: List[List[int]]
    Z0: Optional[List[int]] = None
    rich: Optional[bool] = None

    @classmethod
    def from_sigma(cls, sigma: SymbolicSequence, richness: Optional[RichnessReport] = None) -> "SigmaRecord":
        return cls(t_sigma=list(sigma.sigma_times), Z=[sorted(z) for z in sigma.Z],
                   Z0=None if sigma.Z0 is None else sorted(sigma.Z0),
                   rich=None if richness is None else richness.rich)


class NeutralRecord(BaseModel):
    dim: int
    at: str = "start"
    singular_values: List[float]
    advances: List[List[float]]
    exceptional_flags: List[ExceptionalFlag]
    basis: Optional[List[List[float]]] = None

    @classmethod
    def from_report(cls, report: NeutralReport, with_basis: bool = False) -> "NeutralRecord":
        return cls(dim=report.dimension, at=report.at, singular_values=report.singular_values,
                   advances=report.advances, exceptional_flags=report.exceptional_flags,
                   basis=report.basis if with_basis else None)


def header_for(seg: TrajectorySegment, seed: Optional[int] = None) -> HeaderRecord:
    return HeaderRecord(params=seg.params, seed=seed, container=seg.container, initial=seg.initial,
                        t_start=seg.t_start)


def end_for(seg: TrajectorySegment) -> EndRecord:
    return EndRecord(t_end=seg.t_end, n_events=len(seg.events), final=seg.final,
                     branch_warnings=list(seg.branch_warnings))
