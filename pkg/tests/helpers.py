"""
Shared phase points for the hardball tests
"""

import os

import numpy as np

from hardball.core.model import ModelParams, PhasePoint

SLOW = os.environ.get("HARDBALL_SLOW_TESTS") == "1"
S = np.sqrt(0.5)


def box_params(nu=2, k=2, r=0.1) -> ModelParams:
    return ModelParams(nu=nu, k=k, r=r)


def head_on() -> PhasePoint:
    """Balls on the line y = 0.5 closing at speed sqrt(2); contact at t = 0.2 / sqrt(2)"""
    return PhasePoint(q1=[0.3, 0.5], q2=[0.7, 0.5], v1=[S, 0.0], v2=[-S, 0.0])


def corridor() -> PhasePoint:
    """Asymmetric head-on orbit along axis 1

    Events: ball at 0.1767767, wall (2, 1, 1) at 0.7071068, wall (1, 1, 0) at
    0.7778175, ball at 1.3081476.
    """
    return PhasePoint(q1=[0.3, 0.5], q2=[0.75, 0.5], v1=[S, 0.0], v2=[-S, 0.0])


def lanes() -> PhasePoint:
    """nu=2, k=1: relative motion only along the periodic axis, 0.4 apart on the box axis"""
    return PhasePoint(q1=[0.3, 0.25], q2=[0.7, 0.75], v1=[0.0, S], v2=[0.0, -S])


def drifting_lanes() -> PhasePoint:
    """nu=2, k=1: like lanes() but both balls also bounce on the box axis"""
    return PhasePoint(q1=[0.3, 0.25], q2=[0.7, 0.75], v1=[0.5, 0.5], v2=[0.5, -0.5])
