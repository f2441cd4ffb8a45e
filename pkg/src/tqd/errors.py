"""Exception types shared across the library.

The CLI maps these onto stable exit codes; library callers can catch
the base class or the specific failure they care about.
"""


class TqdError(Exception):
    """Base class for all library errors."""


class DataError(TqdError):
    """Malformed, empty, or non-finite input data (manifests, scores, specs)."""


class SamplingError(TqdError):
    """Batch preparation could not produce a batch (no retainable samples,
    rejection-attempt cap exceeded)."""


class NumericError(TqdError):
    """A numeric invariant broke at runtime (NaN loss, non-finite activation,
    failed statistical check)."""


class CheckpointError(TqdError):
    """A checkpoint file is corrupt or does not match the requested model."""


class UsageError(TqdError):
    """Bad command-line arguments or flag combinations."""
