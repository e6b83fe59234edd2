"""Neutral space, advances and sufficiency of orbit segments

A neutral variation keeps dv = 0 along the whole segment. With dv = 0 a
position variation is transported only by the reflections: a wall negates
one component of dq_beta, a ball collision maps dQ = dq1 - dq2 to R dQ.
The collision then creates dV' = -K dQ, so neutrality means K dQ = 0 at
every ball collision, i.e. dQ parallel to the pre-collision relative
velocity V; the proportionality factor is the advance of that collision.

The constraint map is assembled on the reduced domain of position
variations with pi_2(dq1 + dq2) = 0 (dimension nu + k), one block per
ball collision, each block scaled to unit operator norm.
"""

from typing import List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from .dynamics import CollisionEvent, TrajectorySegment, reverse_segment, slice_segment
from .errors import (
    BranchRefused,
    HypothesisNotMet,
    NoBallCollision,
    PatternNotFound,
    RankIndeterminate,
)
from .model import ModelParams, ToleranceSet
from .symbolic import SymbolicSequence, check_endpoints, complement, is_rich, symbolic_sequence
from .tangent import TangentVector, reflection_blocks
from ..utils.logging import setup_logging

logger = setup_logging()

EXCEPTIONAL_THRESHOLD = 1e-8
ADVANCE_TOLERANCE = 1e-8
HYPOTHESIS_MARGIN = 1e-6


class ExceptionalFlag(BaseModel):
    """Proximity of window i to its exceptional equation P_{complement(Z_i)}(v1 - v2) = 0"""

    model_config = ConfigDict(frozen=True)

    window: int
    magnitude: float
    flagged: bool
    codimension: int


class NeutralReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    dimension: int
    domain_dimension: int
    at: Literal["start", "mid"] = "start"
    time: float
    basis: List[List[float]] = Field(description="orthonormal neutral vectors, each of length 4 nu (dv parts zero)")
    advances: List[List[float]] = Field(description="per basis vector, per ball collision")
    residuals: List[List[float]]
    neutral_ok: List[bool] = Field(description="per basis vector: every advance residual within tolerance")
    singular_values: List[float]
    exceptional_flags: List[ExceptionalFlag] = Field(default_factory=list)
    flow_span_residual: float
    flow_advances: List[float]

    @property
    def exceptional(self) -> bool:
        return any(flag.flagged for flag in self.exceptional_flags)

    def basis_vectors(self) -> List[TangentVector]:
        return [TangentVector.from_vector(np.array(b)) for b in self.basis]


class _Transport(NamedTuple):
    """Neutral transport data for one pass over a list of events"""
    blocks: List[np.ndarray]
    dq_pre: List[Tuple[np.ndarray, np.ndarray]]
    dq_post: List[Tuple[np.ndarray, np.ndarray]]
    velocities: List[np.ndarray]


def reduced_domain(params: ModelParams) -> np.ndarray:
    """Orthonormal 2nu x (nu + k) basis of position variations with pi_2(dq1 + dq2) = 0"""
    nu, k = params.nu, params.k
    columns = []
    for j in range(k):
        for beta in (0, 1):
            col = np.zeros(2 * nu)
            col[beta * nu + j] = 1.0
            columns.append(col)
    for j in range(k, nu):
        col = np.zeros(2 * nu)
        col[j] = 1.0 / np.sqrt(2.0)
        col[nu + j] = -1.0 / np.sqrt(2.0)
        columns.append(col)
    return np.array(columns).T


def _transport(events: List[CollisionEvent], D: np.ndarray, params: ModelParams) -> _Transport:
    nu = params.nu
    X1 = D[:nu].copy()
    X2 = D[nu:].copy()
    out = _Transport([], [], [], [])
    for event in events:
        if event.is_wall:
            X = X1 if event.ball == 1 else X2
            X[event.axis - 1] *= -1.0
            continue
        n = event.normal
        V = event.v1_pre - event.v2_pre
        _, K = reflection_blocks(n, V, 2 * params.r, params.tol.graze)
        dQ = X1 - X2
        out.dq_pre.append((X1.copy(), X2.copy()))
        out.velocities.append(V)
        block = K @ dQ
        scale = np.linalg.norm(block, 2)
        out.blocks.append(block / scale if scale > 0 else block)
        shift = np.outer(n, n) @ dQ
        X1 -= shift
        X2 += shift
        out.dq_post.append((X1.copy(), X2.copy()))
    return out


def _kernel(blocks: List[np.ndarray], d: int, rank_tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Kernel basis (d x dim) and full singular spectrum (length d)

    Raises:
        RankIndeterminate: if a singular value lies within a factor 10 of the threshold
    """
    if not blocks:
        return np.eye(d), np.zeros(d)
    M = np.vstack(blocks)
    _, s, Vh = linalg.svd(M, full_matrices=True)
    spectrum = np.zeros(d)
    spectrum[:s.size] = s
    sigma_max = float(spectrum[0])
    if sigma_max == 0.0:
        return np.eye(d), spectrum
    threshold = rank_tol * sigma_max
    close = spectrum[(spectrum >= threshold / 10) & (spectrum <= threshold * 10)]
    if close.size:
        logger.warning(f"Singular values {close} within a factor 10 of the rank threshold {threshold:.3g}")
        raise RankIndeterminate(f"singular values {close.tolist()} too close to threshold {threshold:.3g}")
    rank = int(np.sum(spectrum > threshold))
    return Vh[rank:].T, spectrum


def _advances(transport: _Transport, coefficients: np.ndarray, sign: float = 1.0) -> Tuple[List[float], List[float]]:
    alphas, residuals = [], []
    for (X1, X2), V in zip(transport.dq_pre, transport.velocities):
        dQ = (X1 - X2) @ coefficients
        alpha = float(dQ @ V / (V @ V))
        alphas.append(sign * alpha)
        residuals.append(float(np.linalg.norm(dQ - alpha * V)))
    return alphas, residuals


def exceptional_flags(seg: TrajectorySegment, sigma: SymbolicSequence) -> List[ExceptionalFlag]:
    """Per window i >= 1: |P_{complement(Z_i)}(v1 - v2)| at t_{i-1}+0"""
    nu = seg.params.nu
    flags = []
    balls = seg.ball_events
    for i, z in enumerate(sigma.Z, start=1):
        dv = balls[i - 1].v1_post - balls[i - 1].v2_post
        free = [j - 1 for j in complement(z, nu)]
        magnitude = float(np.linalg.norm(dv[free])) if free else 0.0
        flags.append(ExceptionalFlag(window=i, magnitude=magnitude, flagged=magnitude < EXCEPTIONAL_THRESHOLD,
                                     codimension=nu - len(z)))
    return flags


def _midpoint(seg: TrajectorySegment) -> float:
    """Segment midpoint, moved to the middle of a free flight if it lands on an event"""
    tol = seg.params.tol.event
    t_mid = 0.5 * (seg.t_start + seg.t_end)
    times = [seg.t_start] + seg.event_times + [seg.t_end]
    for a, b in zip(times, times[1:]):
        if a <= t_mid <= b:
            if t_mid - a <= tol or b - t_mid <= tol:
                return 0.5 * (a + b)
            return t_mid
    return t_mid


def neutral_space(seg: TrajectorySegment, tol: Optional[ToleranceSet] = None,
                  at: Literal["start", "mid"] = "start") -> NeutralReport:
    """Neutral subspace of the segment at its start (or midpoint) with advances and flags

    Raises:
        BranchRefused: if the segment carries branch warnings
        SegmentEndpointOnCollision: if an endpoint is a collision moment
        RankIndeterminate: if the rank cannot be separated from the threshold
    """
    params = seg.params
    tol = tol or params.tol
    if seg.branch_warnings:
        raise BranchRefused(f"segment has {len(seg.branch_warnings)} branch warnings")
    check_endpoints(seg)
    nu, d = params.nu, params.d
    D = reduced_domain(params)

    if at == "start":
        t_eval = seg.t_start
        state = seg.initial
        forward = _transport(list(seg.events), D, params)
        backward = _Transport([], [], [], [])
    else:
        t_eval = _midpoint(seg)
        state = seg.state_at(t_eval)
        forward = _transport(list(slice_segment(seg, t_eval, seg.t_end).events), D, params)
        backward = _transport(list(reverse_segment(slice_segment(seg, seg.t_start, t_eval)).events), D, params)

    kernel, spectrum = _kernel(backward.blocks + forward.blocks, d, tol.rank)

    basis, advances, residuals, ok = [], [], [], []
    for c in kernel.T:
        dq = D @ c
        basis.append(np.concatenate([dq, np.zeros(2 * nu)]).tolist())
        back_alpha, back_res = _advances(backward, c, sign=-1.0)
        fwd_alpha, fwd_res = _advances(forward, c)
        alpha = back_alpha[::-1] + fwd_alpha
        res = back_res[::-1] + fwd_res
        advances.append(alpha)
        residuals.append(res)
        ok.append(all(r <= ADVANCE_TOLERANCE * np.linalg.norm(dq) for r in res))
        if not ok[-1]:
            logger.warning(f"Neutral vector with advance residual {max(res):.3g}")

    flow = D.T @ np.concatenate([state.v1, state.v2])
    projected = kernel @ (kernel.T @ flow)
    flow_residual = float(np.linalg.norm(flow - projected) / np.linalg.norm(flow))
    back_flow, _ = _advances(backward, flow, sign=-1.0)
    fwd_flow, _ = _advances(forward, flow)

    flags: List[ExceptionalFlag] = []
    if seg.ball_events:
        flags = exceptional_flags(seg, symbolic_sequence(seg))

    report = NeutralReport(
        dimension=kernel.shape[1], domain_dimension=d, at=at, time=t_eval, basis=basis,
        advances=advances, residuals=residuals, neutral_ok=ok, singular_values=spectrum.tolist(),
        exceptional_flags=flags, flow_span_residual=flow_residual, flow_advances=back_flow[::-1] + fwd_flow)
    logger.debug(f"Neutral space of dimension {report.dimension} over {seg.n_ball_collisions} ball collisions")
    return report


def is_sufficient(seg: TrajectorySegment, tol: Optional[ToleranceSet] = None) -> bool:
    """dim N == 1: only the flow direction is neutral"""
    return neutral_space(seg, tol).dimension == 1


class LemmaVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    lemma: str
    passed: bool
    dimension: int
    max_advance_gap: float = 0.0
    max_projection_error: float = 0.0
    window: Optional[Tuple[int, int]] = None
    detail: str = ""


def _relative_post(event: CollisionEvent) -> np.ndarray:
    return event.v1_post - event.v2_post


def _projection_norm(v: np.ndarray, axes) -> float:
    idx = [j - 1 for j in axes]
    return float(np.linalg.norm(v[idx])) if idx else 0.0


def _advance_gap(report: NeutralReport) -> float:
    gaps = [max(a) - min(a) for a in report.advances if a]
    return float(max(gaps, default=0.0))


def check_lemma_3_6(seg: TrajectorySegment) -> LemmaVerdict:
    """Two ball collisions with one proper Z_1: the advances agree and P_{Z_1} dq follows the velocity

    Raises:
        HypothesisNotMet: unless n = 1, |Z_1| < nu and P_{complement(Z_1)}(v1 - v2) is away from 0
    """
    params = seg.params
    sigma = symbolic_sequence(seg)
    if sigma.n != 1:
        raise HypothesisNotMet(f"needs exactly two ball collisions, found {sigma.n + 1}")
    z1 = sigma.Z[0]
    if len(z1) >= params.nu:
        raise HypothesisNotMet(f"|Z_1| = {len(z1)} is not below nu = {params.nu}")
    first = seg.ball_events[0]
    free = _projection_norm(_relative_post(first), complement(z1, params.nu))
    if free <= HYPOTHESIS_MARGIN:
        raise HypothesisNotMet(f"|P_complement(Z_1)(v1 - v2)| = {free:.3g} (exceptional case)")

    report = neutral_space(seg)
    D = reduced_domain(params)
    transport = _transport(list(seg.events), D, params)
    X1, X2 = transport.dq_post[0]
    idx = [j - 1 for j in z1]
    worst_gap, worst_projection = 0.0, 0.0
    # D has orthonormal columns, so D^T recovers domain coefficients
    vectors = list((D.T @ np.array(report.basis)[:, :2 * params.nu].T).T)
    vectors.append(D.T @ np.concatenate([seg.initial.v1, seg.initial.v2]))
    for c in vectors:
        alpha, _ = _advances(transport, c)
        worst_gap = max(worst_gap, abs(alpha[0] - alpha[1]))
        for X, v in ((X1, first.v1_post), (X2, first.v2_post)):
            dq = X @ c
            worst_projection = max(worst_projection, float(np.linalg.norm(dq[idx] - alpha[0] * v[idx])))
    passed = worst_gap < ADVANCE_TOLERANCE and worst_projection < ADVANCE_TOLERANCE
    return LemmaVerdict(lemma="3.6", passed=passed, dimension=report.dimension,
                        max_advance_gap=worst_gap, max_projection_error=worst_projection)


def check_lemma_3_8(seg: TrajectorySegment) -> LemmaVerdict:
    """Z_i covering A and equal advances force dim N = 1

    Raises:
        HypothesisNotMet: if the Z_i miss an axis or some neutral vector has unequal advances
    """
    params = seg.params
    sigma = symbolic_sequence(seg)
    missing = sigma.axes - sigma.union
    if missing:
        raise HypothesisNotMet(f"axes {sorted(missing)} are in no Z_i")
    report = neutral_space(seg)
    gap = _advance_gap(report)
    if gap >= ADVANCE_TOLERANCE:
        raise HypothesisNotMet(f"advances of a neutral vector differ by {gap:.3g}")
    return LemmaVerdict(lemma="3.8", passed=report.dimension == 1, dimension=report.dimension,
                        max_advance_gap=gap, detail=f"union of Z_i = {sorted(sigma.union)}")


def _matches_pattern(Z: Tuple, nu: int) -> bool:
    """|Z_1| = nu, 0 < |Z_n| < nu and Z_2..Z_{n-1} empty"""
    if len(Z) < 2:
        return False
    return len(Z[0]) == nu and 0 < len(Z[-1]) < nu and all(not z for z in Z[1:-1])


def check_lemma_3_9(seg: TrajectorySegment) -> LemmaVerdict:
    """Pattern |Z_1| = nu, empty middle windows, proper Z_n: advances agree and the segment is sufficient

    Raises:
        PatternNotFound: if the Z sequence does not follow the pattern
        HypothesisNotMet: if one of the two non-degeneracy conditions fails
    """
    params = seg.params
    nu = params.nu
    sigma = symbolic_sequence(seg)
    if not _matches_pattern(sigma.Z, nu):
        raise PatternNotFound(f"Z = {[sorted(z) for z in sigma.Z]} does not match the pattern")
    balls = seg.ball_events
    zn = sigma.Z[-1]
    first_condition = _projection_norm(_relative_post(balls[-2]), complement(zn, nu))
    second_condition = _projection_norm(_relative_post(balls[0]), zn)
    if first_condition <= HYPOTHESIS_MARGIN:
        raise HypothesisNotMet(f"|P_complement(Z_n)(v1 - v2)| at t_(n-1)+0 is {first_condition:.3g}")
    if second_condition <= HYPOTHESIS_MARGIN:
        raise HypothesisNotMet(f"|P_Z_n(v1 - v2)| at t_0+0 is {second_condition:.3g}")
    report = neutral_space(seg)
    gap = _advance_gap(report)
    passed = gap < ADVANCE_TOLERANCE and report.dimension == 1
    return LemmaVerdict(lemma="3.9", passed=passed, dimension=report.dimension, max_advance_gap=gap)


def scan_lemma_3_9(seg: TrajectorySegment) -> List[LemmaVerdict]:
    """Check every sub-segment sigma_a..sigma_b whose Z sequence follows the 3.9 pattern

    Sub-segments failing a non-degeneracy condition are skipped.

    Raises:
        PatternNotFound: if no sub-segment follows the pattern
    """
    sigma = symbolic_sequence(seg)
    nu = seg.params.nu
    balls = seg.ball_events
    verdicts = []
    matched = 0
    for a in range(len(balls)):
        for b in range(a + 2, len(balls)):
            if not _matches_pattern(sigma.Z[a:b], nu):
                continue
            matched += 1
            previous = [e.time for e in seg.events if e.time < balls[a].time]
            before = previous[-1] if previous else seg.t_start
            sub = slice_segment(seg, 0.5 * (before + balls[a].time), balls[b].time)
            try:
                verdict = check_lemma_3_9(sub)
            except HypothesisNotMet as exc:
                logger.info(f"Sub-segment sigma_{a}..sigma_{b} skipped: {exc}")
                continue
            verdicts.append(verdict.model_copy(update={"window": (a, b)}))
    if not matched:
        raise PatternNotFound("no sub-segment follows the pattern")
    return verdicts


class KeyLemmaVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    rich: bool
    sufficient: bool
    exceptional: bool
    dimension: int
    flags: List[ExceptionalFlag]
    asserted: bool = Field(description="rich and not exceptional, so sufficiency is predicted")
    passed: bool


def check_key_lemma_3_5(seg: TrajectorySegment) -> KeyLemmaVerdict:
    """Evaluate 'rich and not exceptional implies sufficient' on one segment"""
    if not seg.ball_events:
        raise NoBallCollision("segment has no ball-ball collision")
    sigma = symbolic_sequence(seg)
    richness = is_rich(sigma, seg.params)
    report = neutral_space(seg)
    sufficient = report.dimension == 1
    exceptional = report.exceptional
    asserted = richness.rich and not exceptional
    passed = sufficient or not asserted
    if asserted and not sufficient:
        logger.warning(f"Rich non-exceptional segment with dim N = {report.dimension}")
    return KeyLemmaVerdict(rich=richness.rich, sufficient=sufficient, exceptional=exceptional,
                           dimension=report.dimension, flags=report.exceptional_flags,
                           asserted=asserted, passed=passed)
