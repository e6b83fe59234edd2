"""Time averages along orbits against Liouville ensemble averages"""

from functools import partial
from typing import Callable, Dict, List

import numpy as np
from pydantic import BaseModel, ConfigDict

from .pool import EnsembleRunner
from ..core.dynamics import StopCondition, iter_events
from ..core.errors import PreconditionError
from ..core.model import ModelParams, derive_seed, sample_liouville, sample_liouville_batch
from ..utils.logging import setup_logging

logger = setup_logging()

PROXIMITY_MARGIN = 0.05
DEFAULT_TIME_STEP = 0.01

# observable(params, q1, q2, v1, v2) on stacked (n, nu) arrays -> (n,)
Observable = Callable[[ModelParams, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _proximity(params, q1, q2, v1, v2):
    delta = params.container().min_image(q1 - q2)
    return (np.sum(delta * delta, axis=1) < (2 * params.r + PROXIMITY_MARGIN) ** 2).astype(float)


def _box_coordinate(params, q1, q2, v1, v2):
    return q1[:, 0].copy()


def _speed_share(params, q1, q2, v1, v2):
    return np.sum(v1 * v1, axis=1)


def _energy(params, q1, q2, v1, v2):
    return np.sum(v1 * v1, axis=1) + np.sum(v2 * v2, axis=1)


OBSERVABLES: Dict[str, Observable] = {
    "proximity": _proximity,
    "box_coordinate": _box_coordinate,
    "speed_share": _speed_share,
    "energy": _energy,
}


class ErgodicReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    observable: str
    time_averages: List[float]
    ensemble_average: float
    ensemble_standard_error: float
    dispersion: float
    max_deviation: float
    n_orbits: int
    t_orbit: float
    n_ensemble: int
    seed: int


def orbit_time_average(params: ModelParams, observable_id: str, t_orbit: float, seed: int,
                       dt: float = DEFAULT_TIME_STEP) -> float:
    """Average of the observable over samples at t = 0, dt, 2dt, ... <= t_orbit of one Liouville orbit"""
    observable = OBSERVABLES[observable_id]
    container = params.container()
    x = sample_liouville(params, seed)
    n_steps = int(np.floor(t_orbit / dt + 1e-12))
    total, count = 0.0, 0
    next_k = 0
    t_prev = 0.0

    def flight(state, t_a: float, t_b: float, include_end: bool):
        nonlocal total, count, next_k
        last = min(n_steps, int(np.floor(t_b / dt)))
        ks = np.arange(next_k, last + 1)
        ks = ks[ks * dt <= t_b] if include_end else ks[ks * dt < t_b]
        if ks.size == 0:
            return
        s = (ks * dt - t_a)[:, None]
        q1 = container.wrap(state.q1 + s * state.v1)
        q2 = container.wrap(state.q2 + s * state.v2)
        v1 = np.broadcast_to(state.v1, q1.shape)
        v2 = np.broadcast_to(state.v2, q2.shape)
        values = observable(params, q1, q2, v1, v2)
        total += float(values.sum())
        count += values.size
        next_k = int(ks[-1]) + 1

    state = x
    for event in iter_events(x, params, StopCondition(t_max=t_orbit)):
        flight(state, t_prev, event.time, include_end=False)
        state, t_prev = event.post, event.time
    flight(state, t_prev, t_orbit, include_end=True)
    return total / count


def ensemble_average(params: ModelParams, observable_id: str, n_ensemble: int, seed: int):
    """(mean, standard error) over a Liouville batch"""
    q1, q2, v1, v2 = sample_liouville_batch(params, n_ensemble, seed)
    values = OBSERVABLES[observable_id](params, q1, q2, v1, v2)
    error = float(values.std(ddof=1) / np.sqrt(n_ensemble)) if n_ensemble > 1 else float("inf")
    return float(values.mean()), error


def ergodic_average(params: ModelParams, observable_id: str, n_orbits: int, t_orbit: float, n_ensemble: int,
                    seed: int, workers: int = 1, dt: float = DEFAULT_TIME_STEP) -> ErgodicReport:
    """Per-orbit time averages against an independent ensemble average

    Orbit i starts from the sample seeded by (seed, i); the ensemble uses
    the stream (seed, n_orbits).
    """
    if observable_id not in OBSERVABLES:
        raise PreconditionError(f"unknown observable {observable_id!r}; choose from {sorted(OBSERVABLES)}")
    task = partial(_orbit_task, params, observable_id, t_orbit, seed, dt)
    with EnsembleRunner(max_workers=workers) as runner:
        averages = runner.map(task, range(n_orbits))
    mean, error = ensemble_average(params, observable_id, n_ensemble, derive_seed(seed, n_orbits))
    arr = np.array(averages)
    dispersion = float(arr.std()) if arr.size else 0.0
    deviation = float(np.max(np.abs(arr - mean))) if arr.size else 0.0
    logger.info(f"Ergodic check '{observable_id}': ensemble {mean:.5g} +- {error:.2g}, "
                f"max deviation {deviation:.3g} over {n_orbits} orbits")
    return ErgodicReport(observable=observable_id, time_averages=averages, ensemble_average=mean,
                         ensemble_standard_error=error, dispersion=dispersion, max_deviation=deviation,
                         n_orbits=n_orbits, t_orbit=t_orbit, n_ensemble=n_ensemble, seed=seed)


def _orbit_task(params: ModelParams, observable_id: str, t_orbit: float, seed: int, dt: float, index: int) -> float:
    return orbit_time_average(params, observable_id, t_orbit, derive_seed(seed, index), dt)
