"""Scan for orbits that avoid ball collisions for a long time"""

from functools import partial
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from .pool import EnsembleRunner
from ..core.dynamics import StopCondition, simulate
from ..core.errors import HardballError, NumericalFailure
from ..core.model import ModelParams, PhasePoint, derive_seed, sample_liouville
from ..core.unfolding import periodic_relative_speed
from ..utils.logging import setup_logging

logger = setup_logging()


class FlaggedOrbit(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    seed: int
    annotation: float = Field(description="|P_Abar(v1 - v2)| during the collision-free stretch")


class ScanReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: ModelParams
    seed: int
    n_samples: int
    t_free: float
    flagged: List[FlaggedOrbit]
    n_zero_annotation: int
    discards: Dict[int, str] = Field(default_factory=dict)

    @property
    def n_flagged(self) -> int:
        return len(self.flagged)


def scan_orbit(x0: PhasePoint, params: ModelParams, t_free: float) -> Optional[float]:
    """Annotation of x0 if its orbit has no ball collision in [0, t_free], else None"""
    seg = simulate(x0, StopCondition(n_ball_collisions=1, t_max=t_free), params)
    if seg.ball_events:
        return None
    return periodic_relative_speed(x0, params)


def _scan_task(params: ModelParams, t_free: float, seed: int, index: int):
    sample_seed = derive_seed(seed, index)
    try:
        annotation = scan_orbit(sample_liouville(params, sample_seed), params, t_free)
    except NumericalFailure as exc:
        logger.error(f"Sample {index} (seed {sample_seed}): hard numerical failure {type(exc).__name__}: {exc}")
        raise
    except HardballError as exc:
        return index, sample_seed, None, f"{type(exc).__name__}: {exc}"
    return index, sample_seed, annotation, None


def ball_avoiding_scan(params: ModelParams, n_samples: int, t_free: float, seed: int = 0,
                       workers: int = 1) -> ScanReport:
    """Flag Liouville samples whose orbit has no ball collision before t_free

    For k = nu the periodic projection is empty and every annotation is 0.
    """
    if params.k == params.nu:
        logger.info("k = nu: no periodic axes, annotations are all zero")
    task = partial(_scan_task, params, t_free, seed)
    with EnsembleRunner(max_workers=workers) as runner:
        results = runner.map(task, range(n_samples))
    flagged = [FlaggedOrbit(index=i, seed=s, annotation=a) for i, s, a, err in results if err is None and a is not None]
    discards = {i: err for i, _, _, err in results if err is not None}
    report = ScanReport(params=params, seed=seed, n_samples=n_samples, t_free=t_free, flagged=flagged,
                        n_zero_annotation=sum(1 for f in flagged if f.annotation == 0.0), discards=discards)
    logger.info(f"Ball-avoiding scan: {report.n_flagged} of {n_samples} orbits free for t={t_free:g}")
    return report
