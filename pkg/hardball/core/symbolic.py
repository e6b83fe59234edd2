"""Symbolic collision sequences

The ball-ball collisions sigma_0 < ... < sigma_n cut a segment into windows:
window 0 is (a, t_0), window i is (t_{i-1}, t_i). In each window the
parity of every ball's wall bounces per box axis gives Z_i(beta), and
Z_i = Z_i(1) ^ Z_i(2).
"""

from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .dynamics import TrajectorySegment
from .errors import BranchRefused, Eq33Mismatch, NoBallCollision, NumericalFailure, SegmentEndpointOnCollision
from .model import ModelParams
from ..utils.logging import setup_logging

logger = setup_logging()

EQ33_TOLERANCE = 1e-10

AxisSet = FrozenSet[int]


class WallTally(BaseModel):
    """Wall-collision counts r(beta, i, j) per window; window 0 is the leading one"""

    model_config = ConfigDict(frozen=True)

    counts: Dict[Tuple[int, int, int], int] = Field(default_factory=dict)
    n_windows: int
    axes: Tuple[int, ...]

    def r(self, beta: int, i: int, j: int) -> int:
        return self.counts.get((beta, i, j), 0)


class ZSets(BaseModel):
    """Odd-parity axis sets per window (index 0 is the leading window)"""

    model_config = ConfigDict(frozen=True)

    per_ball: Tuple[Tuple[AxisSet, AxisSet], ...]
    Z: Tuple[AxisSet, ...]


class SymbolicSequence(BaseModel):
    """Sigma = (Z_0, sigma_0, Z_1, sigma_1, ..., Z_n, sigma_n)"""

    model_config = ConfigDict(frozen=True)

    nu: int
    k: int
    sigma_times: Tuple[float, ...]
    Z: Tuple[AxisSet, ...]
    Z_per_ball: Tuple[Tuple[AxisSet, AxisSet], ...] = ()
    Z0: Optional[AxisSet] = None
    Z0_per_ball: Optional[Tuple[AxisSet, AxisSet]] = None

    @property
    def n(self) -> int:
        return len(self.sigma_times) - 1

    @property
    def axes(self) -> AxisSet:
        return frozenset(range(1, self.k + 1))

    @property
    def union(self) -> AxisSet:
        out = frozenset()
        for z in self.Z:
            out |= z
        return out

    def window(self, i: int) -> AxisSet:
        """Z_i for i = 0..n (Z_0 is empty when absent)"""
        if i == 0:
            return self.Z0 or frozenset()
        return self.Z[i - 1]


class RichnessReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rich: bool
    witness: Dict[int, List[int]] = Field(default_factory=dict, description="axis -> windows whose Z contains it")
    witness_index: Optional[int] = None
    covers_axes: bool = False
    degenerate: Optional[str] = None


def complement(axes: AxisSet, nu: int) -> AxisSet:
    """Axes 1..nu not in ``axes``"""
    return frozenset(range(1, nu + 1)) - axes


def reflect(v: np.ndarray, axes: AxisSet) -> np.ndarray:
    """R_Z: negate the components listed in ``axes`` (1-based)"""
    out = np.array(v, dtype=float)
    for j in axes:
        out[j - 1] = -out[j - 1]
    return out


def check_endpoints(seg: TrajectorySegment):
    """Reject segments whose endpoints are collision moments

    The end may coincide with the last ball collision, as it does for runs
    stopped on a ball-collision count.
    """
    tol = seg.params.tol.event
    for event in seg.events:
        near_start = abs(event.time - seg.t_start) <= tol
        near_end = abs(event.time - seg.t_end) <= tol
        if near_start or (near_end and event.is_wall):
            raise SegmentEndpointOnCollision(f"{event.describe()} at t={event.time:.15g} is a segment endpoint")


def wall_parity_counts(seg: TrajectorySegment) -> WallTally:
    """Wall bounces per ball, window and box axis

    Raises:
        NoBallCollision: if the segment has no ball-ball collision
        SegmentEndpointOnCollision: if an endpoint is a collision moment
    """
    if not seg.ball_events:
        raise NoBallCollision("segment has no ball-ball collision")
    check_endpoints(seg)
    counts: Dict[Tuple[int, int, int], int] = {}
    window = 0
    last = len(seg.ball_events)
    for event in seg.events:
        if event.is_ball:
            window += 1
            continue
        if window == last:
            # after sigma_n: outside every window
            break
        key = (event.ball, window, event.axis)
        counts[key] = counts.get(key, 0) + 1
    return WallTally(counts=counts, n_windows=last, axes=seg.params.box_axes)


def z_sets(tally: WallTally) -> ZSets:
    """Odd-parity axis sets Z_i(1), Z_i(2) and their symmetric difference Z_i"""
    per_ball = []
    Z = []
    for i in range(tally.n_windows):
        z1 = frozenset(j for j in tally.axes if tally.r(1, i, j) % 2 == 1)
        z2 = frozenset(j for j in tally.axes if tally.r(2, i, j) % 2 == 1)
        per_ball.append((z1, z2))
        Z.append(z1 ^ z2)
    return ZSets(per_ball=tuple(per_ball), Z=tuple(Z))


def _check_reflection(label: str, v_before: np.ndarray, v_after: np.ndarray, axes: AxisSet):
    gap = float(np.max(np.abs(reflect(v_before, axes) - v_after), initial=0.0))
    if gap > EQ33_TOLERANCE:
        logger.error(f"Reflection identity fails in {label}: deviation {gap:.3g}")
        raise Eq33Mismatch(f"{label}: R_Z v differs from the logged velocity by {gap:.3g}")


def symbolic_sequence(seg: TrajectorySegment) -> SymbolicSequence:
    """Assemble Sigma and verify that wall reflections between ball collisions compose to R_{Z_i(beta)}

    Raises:
        BranchRefused: if the segment carries branch warnings
        NoBallCollision, SegmentEndpointOnCollision: from wall_parity_counts
        Eq33Mismatch: if the logged velocities break the reflection identity
    """
    if seg.branch_warnings:
        raise BranchRefused(f"segment has {len(seg.branch_warnings)} branch warnings")
    zs = z_sets(wall_parity_counts(seg))
    balls = seg.ball_events

    for beta in (1, 2):
        v_start = seg.initial.v1 if beta == 1 else seg.initial.v2
        v_first = balls[0].v1_pre if beta == 1 else balls[0].v2_pre
        _check_reflection(f"window 0, ball {beta}", v_start, v_first, zs.per_ball[0][beta - 1])
        for i in range(1, len(balls)):
            before = balls[i - 1].v1_post if beta == 1 else balls[i - 1].v2_post
            after = balls[i].v1_pre if beta == 1 else balls[i].v2_pre
            _check_reflection(f"window {i}, ball {beta}", before, after, zs.per_ball[i][beta - 1])

    leading = balls[0].time > seg.t_start + seg.params.tol.event
    return SymbolicSequence(
        nu=seg.params.nu,
        k=seg.params.k,
        sigma_times=tuple(event.time for event in balls),
        Z=zs.Z[1:],
        Z_per_ball=zs.per_ball[1:],
        Z0=zs.Z[0] if leading else None,
        Z0_per_ball=zs.per_ball[0] if leading else None,
    )


def is_rich(sigma: SymbolicSequence, params: Optional[ModelParams] = None) -> RichnessReport:
    """Combinatorial richness: the Z_i (i >= 1) cover A and some Z_i is proper"""
    nu = params.nu if params else sigma.nu
    k = params.k if params else sigma.k
    if k == 0:
        return RichnessReport(rich=False, degenerate="degenerate: k=0")

    witness: Dict[int, List[int]] = {j: [] for j in range(1, k + 1)}
    witness_index = None
    for i, z in enumerate(sigma.Z, start=1):
        for j in z:
            witness.setdefault(j, []).append(i)
        if witness_index is None and 0 < len(z) < nu:
            witness_index = i
    covers = all(witness[j] for j in range(1, k + 1))
    rich = covers and witness_index is not None

    if k < nu and covers and any(sigma.Z) and witness_index is None:
        # |Z_i| <= k < nu, so a nonempty Z_i is always proper
        logger.error(f"Richness cross-check failed for Z = {[sorted(z) for z in sigma.Z]}")
        raise NumericalFailure("nonempty Z_i with k < nu but no proper window")

    return RichnessReport(rich=rich, witness=witness, witness_index=witness_index, covers_axes=covers)


def transversality_hypothesis(sigma: SymbolicSequence, j: int) -> bool:
    """j is not in Z_0, or j is in some later Z_l"""
    return j not in sigma.window(0) or j in sigma.union


def axis_unfoldable(sigma: SymbolicSequence, j: int) -> bool:
    """j lies in no Z_l, l = 0..n (the single-axis unfolding condition)"""
    return all(j not in sigma.window(i) for i in range(sigma.n + 1))


def all_axes_unfoldable(sigma: SymbolicSequence, params: Optional[ModelParams] = None) -> bool:
    """Every Z_l (l = 0..n) is empty or all of 1..nu"""
    nu = params.nu if params else sigma.nu
    return all(len(z) * (nu - len(z)) == 0 for z in (sigma.window(i) for i in range(sigma.n + 1)))
