"""Shared exception types.

Every error surfaced across module boundaries derives from AliceError so
callers (CLI, HTTP layer) can map failures to exit codes / status codes in
one place.
"""


class AliceError(Exception):
    """Base class for all domain errors."""


# -- dataset / feature store --------------------------------------------

class MalformedManifest(AliceError):
    """Manifest violates the schema or one of its declared invariants."""


class MissingTensor(AliceError):
    """A tensor_ref does not resolve to a readable file."""


class DimMismatch(AliceError):
    """Tensor or vector dimensions disagree with the declared grid/shape."""


class NonFiniteValue(AliceError):
    """A loaded tensor contains NaN or infinity."""


class InvalidParams(AliceError):
    """Synthetic-generation parameters are inconsistent."""


# -- Gaussian profiling ---------------------------------------------------

class TooFewSamples(AliceError):
    """A Gaussian fit needs at least two feature vectors."""


class NumericalFailure(AliceError):
    """Linear algebra failed even after epsilon regularization."""


class NoPairsAvailable(AliceError):
    """Every class pair is excluded; nothing left to query."""


# -- explanation parsing ---------------------------------------------------

class NoSegmentsFound(AliceError):
    """The explanation mentioned no known semantic segment."""


class DuplicateSurfaceForm(AliceError):
    """Two lexicon entries claim the same surface token sequence."""


# -- grounding --------------------------------------------------------------

class UnknownSegment(AliceError):
    """Segment id absent from the dataset catalog (contract violation)."""


# -- architecture ------------------------------------------------------------

class InvalidClassCount(AliceError):
    """A classifier needs at least two classes."""


class StaleNode(AliceError):
    """A global node index from an outdated label space."""


class UnknownClass(AliceError):
    """Fine-class id outside the dataset's label space."""


# -- training ----------------------------------------------------------------

class InvalidLabel(AliceError):
    """A training label is outside the head's arity."""


# -- session loop -------------------------------------------------------------

class ConfigError(AliceError):
    """Session configuration is malformed (caller fault)."""


class UnknownTicket(AliceError):
    """Referenced query ticket is not pending."""


class WrongPhase(AliceError):
    """Operation not accepted in the session's current phase."""


class EmptySplit(AliceError):
    """Evaluation requested on a split with no samples."""
