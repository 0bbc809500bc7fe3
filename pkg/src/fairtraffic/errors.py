"""Exception types shared across the package.

Every contract violation raises a dedicated subclass so callers can
distinguish bad inputs (usage errors) from runtime failures.
"""


class FairTrafficError(Exception):
    """Base class for all package errors."""


# --- network -----------------------------------------------------------


class DanglingEdgeError(FairTrafficError):
    """An edge references a node that was never declared."""


class NonPositiveWeightError(FairTrafficError):
    """Edge capacity or free-flow time is not strictly positive."""


class TooFewNodesError(FairTrafficError):
    """Density is undefined for graphs with fewer than two nodes."""


class UncoveredNodeError(FairTrafficError):
    """A region mapping does not cover every node."""


class EmptyRegionError(FairTrafficError):
    """A region ended up with no members (nodes or attributed edges)."""


class MalformedRowError(FairTrafficError):
    """A CSV row has the wrong column count or an unparsable value."""


class NonMonotonicTimestampsError(FairTrafficError):
    """Sensor readings are not strictly increasing in time."""


# --- metrics -----------------------------------------------------------


class ZeroMeanLoadError(FairTrafficError):
    """Gini coefficient is undefined when the mean load is zero."""


class SingleRegionError(FairTrafficError):
    """Gini coefficient needs at least two regions."""


class LengthMismatchError(FairTrafficError):
    """Paired sequences have different lengths."""


class AllZeroError(FairTrafficError):
    """Jain's index is undefined for an all-zero load vector."""


class NotAllZeroError(FairTrafficError):
    """Temporal weights must not all be zero (strict mode)."""


class NegativeWeightError(FairTrafficError):
    """Objective or fairness weights must be non-negative."""


# --- gnn ---------------------------------------------------------------


class WidthMismatchError(FairTrafficError):
    """Vector or matrix widths are inconsistent with the model config."""


class NoNeighborsError(FairTrafficError):
    """Attention weights need at least one neighbor."""


class EmptyBatchError(FairTrafficError):
    """Loss requires a non-empty batch."""


class EmptyDatasetError(FairTrafficError):
    """Local training requires at least one sample."""


# --- privacy -----------------------------------------------------------


class InvalidPrivacyParamsError(FairTrafficError):
    """Privacy parameters outside their valid ranges."""


class NotClippedError(FairTrafficError):
    """Noise was requested for a gradient that exceeds the clip norm."""


class BudgetExhaustedError(FairTrafficError):
    """The privacy accountant rejected a charge; the account is frozen."""


class EmptyClientSetError(FairTrafficError):
    """Aggregation requires at least one client gradient."""


class EmptyNormsError(FairTrafficError):
    """Adaptive clipping requires a non-empty list of norms."""


# --- federated ---------------------------------------------------------


class InvalidBitsError(FairTrafficError):
    """Quantization bit width outside [1, 32]."""


class CorruptPayloadError(FairTrafficError):
    """A quantized payload failed validation on decode."""


class InvalidKError(FairTrafficError):
    """Client selection count outside [1, N]."""


# --- routing -----------------------------------------------------------


class MissingPredictionError(FairTrafficError):
    """A route edge has no predicted travel time."""


class MissingDemographicsError(FairTrafficError):
    """Demographic data does not cover a route node."""


class MissingStateError(FairTrafficError):
    """Traffic state does not cover a route edge."""


class LambdaOutOfRangeError(FairTrafficError):
    """Scalarization weight must lie in [0, 1]."""


class NoCandidatesError(FairTrafficError):
    """Pareto selection requires at least one candidate."""


# --- sim / cli ---------------------------------------------------------


class IncompleteReportError(FairTrafficError):
    """A scenario report is missing fields required for evaluation."""


class UnknownKeyError(FairTrafficError):
    """A config file contains a key the schema does not define."""


class RangeViolationError(FairTrafficError):
    """A config value violates its documented range."""


class MissingFileError(FairTrafficError):
    """A path referenced by the config does not exist."""
