"""Exception types shared across the package."""


class DagDnnError(Exception):
    """Base class for all library errors."""


class GraphValidationError(DagDnnError):
    """A graph violates a structural rule."""


class CycleDetected(GraphValidationError):
    pass


class UnreachableNode(GraphValidationError):
    pass


class DimensionMismatch(GraphValidationError):
    pass


class MultipleInputs(GraphValidationError):
    pass


class MultipleOutputs(GraphValidationError):
    pass


class WouldCreateCycle(GraphValidationError):
    pass


class NotNormalized(DagDnnError):
    """Operation requires an addition-node level graph (jump-free, single in-arcs)."""


class LevelOutOfRange(DagDnnError):
    pass


class LevelMismatch(DagDnnError):
    """State vector level does not match the lifting step applied to it."""


class MalformedSequence(DagDnnError):
    """A lifting-matrix sequence is empty, unordered, or inconsistent."""


class ShapeMismatch(DagDnnError):
    """Function-matrix operands do not conform."""


class DimMismatch(DagDnnError):
    """Expression or vector dimensions do not line up."""


class Unreachable(DagDnnError):
    """No path exists between the requested pair of nodes."""


class NonIncreasingBreakpoints(DagDnnError):
    pass


class NonDifferentiableArc(DagDnnError):
    """Arc carries a transformation with no registered derivative."""


class EmptyDataset(DagDnnError):
    pass


class DivergedLoss(DagDnnError):
    """Loss became non-finite during training."""


class WouldDisconnectOutput(DagDnnError):
    """Pruning would cut every path from the input to the output."""


class NoCheckpoint(DagDnnError):
    """Requested rewind step was not checkpointed."""


class ConditionsUnsatisfied(DagDnnError):
    """Rewind pruning found no admissible dead nodes."""
