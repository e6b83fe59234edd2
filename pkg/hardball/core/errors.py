"""Exception hierarchy for hardball

Three families, mapped to CLI exit codes:

- PreconditionError (exit 2): an operation was called outside its domain.
- SingularityError (exit 2): the orbit is singular (grazing, ambiguous
  branch, undecidable rank), so no analysis of it is meaningful.
- NumericalFailure (exit 3): an internal consistency check failed; this
  signals a bug or a numerical fault, never a property of the orbit.
"""


class HardballError(Exception):
    """Base class for all hardball errors"""

    exit_code = 1


class PreconditionError(HardballError):
    """Operation called outside its precondition"""

    exit_code = 2


class SingularityError(HardballError):
    """Orbit or collision is singular"""

    exit_code = 2


class NumericalFailure(HardballError):
    """Hard numerical failure"""

    exit_code = 3


# Preconditions

class InvalidStop(PreconditionError):
    """Stop condition names no limit or a negative one"""


class RejectionBudgetExceeded(PreconditionError):
    """Liouville rejection sampling gave up (radius too large for the container)"""


class NotOnWall(PreconditionError):
    """Wall reflection requested for a ball that is not on the wall"""


class NotInContact(PreconditionError):
    """Ball collision requested while the balls are not touching"""


class Receding(PreconditionError):
    """Ball collision requested while the balls move apart"""


class NoBallCollision(PreconditionError):
    """Segment has no ball-ball collision"""


class SegmentEndpointOnCollision(PreconditionError):
    """Segment starts or ends on a collision moment"""


class BranchRefused(PreconditionError):
    """Segment carries branch warnings and the operation needs a single branch"""


class HypothesisNotMet(PreconditionError):
    """Lemma checker hypotheses do not hold on this segment"""


class PatternNotFound(PreconditionError):
    """No window of the symbolic sequence matches the required pattern"""


class AxisInZ(PreconditionError):
    """Unfolding axis belongs to some Z_i"""


class BallCollisionEncountered(PreconditionError):
    """Linear unfolding requested over a stretch with a ball collision"""


# Singularities

class GrazingImpact(SingularityError):
    """Tangential ball-ball (or scatterer) collision within the grazing tolerance"""


class GrazingJacobian(SingularityError):
    """Collision derivative requested at a grazing collision"""


class BranchAmbiguity(SingularityError):
    """A ball-ball event coincides with another event"""


class RankIndeterminate(SingularityError):
    """Singular values too close to the rank threshold to decide the kernel"""


class SingularOrbit(SingularityError):
    """Orbit hit a singularity during a long diagnostic run"""


# Hard numerical failures

class EventSkipped(NumericalFailure):
    """Free flight crossed a wall without an event"""


class AccumulationSuspected(NumericalFailure):
    """Too many events in a unit time interval"""


class ReplayMismatch(NumericalFailure):
    """Replaying an event log does not reproduce the recorded states"""


class Eq33Mismatch(NumericalFailure):
    """Velocity reflection identity between ball collisions violated"""


class AntipodalBreach(NumericalFailure):
    """Unfolded orbit reached the antipodal cylinder"""


class FoldMismatch(NumericalFailure):
    """Folding an unfolded orbit does not reproduce the base orbit"""


class StreamMismatch(NumericalFailure):
    """Coupled and factorized event streams disagree"""
