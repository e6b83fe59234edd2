"""Richness and sufficiency census over Liouville samples"""

from functools import partial
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from .pool import EnsembleRunner
from ..core.dynamics import StopCondition, simulate
from ..core.errors import HardballError, NumericalFailure, PreconditionError
from ..core.model import ModelParams, derive_seed, sample_liouville
from ..core.neutral import check_key_lemma_3_5
from ..utils.logging import setup_logging

logger = setup_logging()

DEFAULT_T_GUARD = 1000.0


class SampleOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    seed: int
    accepted: bool
    rich: bool = False
    sufficient: bool = False
    exceptional: bool = False
    dimension: Optional[int] = None
    reason: Optional[str] = None


class CensusReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: ModelParams
    seed: int
    n_ball_collisions: int
    n_samples: int
    n_accepted: int
    n_discarded: int
    n_rich: int
    n_sufficient: int
    n_exceptional_flagged: int
    n_rich_unflagged: int
    n_rich_unflagged_sufficient: int
    discards: Dict[int, str] = Field(default_factory=dict)

    @property
    def rich_fraction(self) -> float:
        return self.n_rich / self.n_accepted if self.n_accepted else 0.0

    @property
    def sufficient_fraction(self) -> float:
        """Sufficient share among rich, unflagged samples"""
        return self.n_rich_unflagged_sufficient / self.n_rich_unflagged if self.n_rich_unflagged else 0.0


def census_sample(params: ModelParams, n_ball_collisions: int, t_guard: float, seed: int, index: int) -> SampleOutcome:
    """Simulate one Liouville sample and classify its segment"""
    sample_seed = derive_seed(seed, index)
    try:
        x0 = sample_liouville(params, sample_seed)
        seg = simulate(x0, StopCondition(n_ball_collisions=n_ball_collisions, t_max=t_guard), params)
        if not seg.ball_events:
            return SampleOutcome(index=index, seed=sample_seed, accepted=False,
                                 reason=f"no ball collision before t={t_guard:g}")
        verdict = check_key_lemma_3_5(seg)
    except NumericalFailure as exc:
        logger.error(f"Sample {index} (seed {sample_seed}): hard numerical failure {type(exc).__name__}: {exc}")
        raise
    except HardballError as exc:
        return SampleOutcome(index=index, seed=sample_seed, accepted=False, reason=f"{type(exc).__name__}: {exc}")
    return SampleOutcome(index=index, seed=sample_seed, accepted=True, rich=verdict.rich,
                         sufficient=verdict.sufficient, exceptional=verdict.exceptional,
                         dimension=verdict.dimension)


def tally(params: ModelParams, seed: int, n_ball_collisions: int, outcomes: List[SampleOutcome]) -> CensusReport:
    accepted = [o for o in outcomes if o.accepted]
    rich_unflagged = [o for o in accepted if o.rich and not o.exceptional]
    discards = {o.index: o.reason for o in outcomes if not o.accepted}
    return CensusReport(
        params=params, seed=seed, n_ball_collisions=n_ball_collisions, n_samples=len(outcomes),
        n_accepted=len(accepted), n_discarded=len(discards), n_rich=sum(o.rich for o in accepted),
        n_sufficient=sum(o.sufficient for o in accepted),
        n_exceptional_flagged=sum(o.exceptional for o in accepted), n_rich_unflagged=len(rich_unflagged),
        n_rich_unflagged_sufficient=sum(o.sufficient for o in rich_unflagged), discards=discards)


def richness_census(params: ModelParams, n_samples: int, n_ball_collisions: int = 50, seed: int = 0,
                    workers: int = 1, t_guard: float = DEFAULT_T_GUARD) -> CensusReport:
    """Classify n_samples Liouville orbits as rich / sufficient / exceptional

    Per-sample failures (grazing, branch ambiguity, rank indeterminacy)
    become discards with their reasons.

    Raises:
        PreconditionError: if k < 1
        NumericalFailure: from any sample; an internal consistency check failed
    """
    if params.k < 1:
        raise PreconditionError("richness census needs k >= 1")
    task = partial(census_sample, params, n_ball_collisions, t_guard, seed)
    with EnsembleRunner(max_workers=workers) as runner:
        outcomes = runner.map(task, range(n_samples))
    report = tally(params, seed, n_ball_collisions, outcomes)
    for index, reason in report.discards.items():
        logger.warning(f"Census sample {index} discarded: {reason}")
    logger.info(f"Census of {n_samples} samples: {report.n_rich} rich, {report.n_sufficient} sufficient, "
                f"{report.n_exceptional_flagged} flagged, {report.n_discarded} discarded")
    return report
