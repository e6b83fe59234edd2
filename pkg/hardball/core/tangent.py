"""Linearized billiard flow

Tangent vectors are (dq1, dq2, dv1, dv2), length 4 nu. Free flight shears
dq by t dv. A flat wall negates one component of dq_beta and dv_beta. At a
curved contact with unit normal n, pre-collision relative velocity V and
contact radius rho the relative variations transform as

    dQ' = R dQ,    dV' = R dV - K dQ,
    R = I - 2 n n^T,
    K = (2 / rho) (vn I + n V^T) (I - V n^T / vn),   vn = <V, n>,

which folds in the variation of the collision time. The same (R, K) pair
serves the ball-ball contact, the Sinai scatterer and the antipodal
cylinder.
"""

from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, field_validator

from .dynamics import CollisionEvent, TrajectorySegment
from .errors import GrazingJacobian, PreconditionError
from .model import ModelParams, frozen_vector
from ..utils.logging import setup_logging

logger = setup_logging()


class TangentVector(BaseModel):
    """Variation (dq1, dq2, dv1, dv2) of a phase point"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dq1: np.ndarray
    dq2: np.ndarray
    dv1: np.ndarray
    dv2: np.ndarray

    @field_validator("dq1", "dq2", "dv1", "dv2", mode="before")
    @classmethod
    def _to_vector(cls, value):
        arr = frozen_vector(value)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ValueError("expected a finite 1-D vector")
        return arr

    @field_serializer("dq1", "dq2", "dv1", "dv2")
    def _serialize_vector(self, value: np.ndarray):
        return value.tolist()

    @classmethod
    def from_vector(cls, w: np.ndarray) -> "TangentVector":
        w = np.asarray(w, dtype=float)
        nu = w.shape[0] // 4
        return cls.model_construct(dq1=frozen_vector(w[:nu]), dq2=frozen_vector(w[nu:2 * nu]),
                                   dv1=frozen_vector(w[2 * nu:3 * nu]), dv2=frozen_vector(w[3 * nu:]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dq1, self.dq2, self.dv1, self.dv2])


def reflection_blocks(normal: np.ndarray, velocity: np.ndarray, radius: float,
                      graze: float = 1e-10) -> Tuple[np.ndarray, np.ndarray]:
    """The (R, K) pair of a reflection off a sphere of the given radius

    Raises:
        GrazingJacobian: if |<velocity, normal>| < graze
    """
    n = np.asarray(normal, dtype=float)
    V = np.asarray(velocity, dtype=float)
    vn = float(V @ n)
    if abs(vn) < graze:
        logger.error(f"Collision derivative requested at a grazing contact, vn = {vn:.3g}")
        raise GrazingJacobian(f"|<V, n>| = {abs(vn):.3g} < {graze:g}")
    eye = np.eye(n.shape[0])
    R = eye - 2.0 * np.outer(n, n)
    K = (2.0 / radius) * (vn * eye + np.outer(n, V)) @ (eye - np.outer(V, n) / vn)
    return R, K


def wall_jacobian(nu: int, beta: int, j: int) -> np.ndarray:
    """4nu x 4nu derivative of a flat-wall reflection of ball beta on axis j"""
    J = np.eye(4 * nu)
    q = (beta - 1) * nu + (j - 1)
    J[q, q] = -1.0
    J[2 * nu + q, 2 * nu + q] = -1.0
    return J


def ball_jacobian(event: CollisionEvent, params: ModelParams) -> np.ndarray:
    """4nu x 4nu derivative of a ball-ball collision, taken at the event time"""
    if not event.is_ball:
        raise PreconditionError("ball_jacobian needs a ball-ball event")
    nu = params.nu
    n = event.normal
    R, K = reflection_blocks(n, event.v1_pre - event.v2_pre, 2 * params.r, params.tol.graze)
    P = np.outer(n, n)
    Z = np.zeros((nu, nu))
    half = 0.5 * K
    update = np.block([
        [-P, P, Z, Z],
        [P, -P, Z, Z],
        [-half, half, -P, P],
        [half, -half, P, -P],
    ])
    return np.eye(4 * nu) + update


def event_jacobian(event: CollisionEvent, params: ModelParams) -> np.ndarray:
    if event.is_wall:
        return wall_jacobian(params.nu, event.ball, event.axis)
    return ball_jacobian(event, params)


def free_flight_matrix(nu: int, t: float) -> np.ndarray:
    J = np.eye(4 * nu)
    J[:2 * nu, 2 * nu:] = t * np.eye(2 * nu)
    return J


def push_tangent_free(w: TangentVector, t: float) -> TangentVector:
    """dq += t dv; dv unchanged"""
    return TangentVector.model_construct(dq1=frozen_vector(w.dq1 + t * w.dv1), dq2=frozen_vector(w.dq2 + t * w.dv2),
                                         dv1=w.dv1, dv2=w.dv2)


def push_tangent_wall(w: TangentVector, beta: int, j: int) -> TangentVector:
    """Negate component j of dq_beta and dv_beta"""
    nu = w.dq1.shape[0]
    return TangentVector.from_vector(wall_jacobian(nu, beta, j) @ w.as_vector())


def push_tangent_ball(w: TangentVector, event: CollisionEvent, params: ModelParams) -> TangentVector:
    """Apply the ball-ball collision derivative at the event time"""
    return TangentVector.from_vector(ball_jacobian(event, params) @ w.as_vector())


def _shear(W: np.ndarray, nu: int, t: float):
    """Free flight on a frame, in place"""
    if t != 0.0:
        W[:2 * nu] += t * W[2 * nu:]


def propagate_tangent(seg: TrajectorySegment, W: np.ndarray, t0: Optional[float] = None,
                      t1: Optional[float] = None) -> np.ndarray:
    """Push a tangent vector or frame (4nu x m) from t0 to t1 along the recorded segment

    Events at exactly t0 are taken as already applied.
    """
    t0 = seg.t_start if t0 is None else t0
    t1 = seg.t_end if t1 is None else t1
    if not seg.t_start <= t0 <= t1 <= seg.t_end:
        raise PreconditionError(f"[{t0}, {t1}] is not inside [{seg.t_start}, {seg.t_end}]")
    nu = seg.params.nu
    W = np.array(W, dtype=float)
    vector = W.ndim == 1
    if vector:
        W = W[:, None]
    t = t0
    for event in seg.events:
        if event.time <= t0:
            continue
        if event.time > t1:
            break
        _shear(W, nu, event.time - t)
        W = event_jacobian(event, seg.params) @ W
        t = event.time
    _shear(W, nu, t1 - t)
    return W[:, 0] if vector else W
