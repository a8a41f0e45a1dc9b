"""Exception types shared across the toolkit."""


class MfasrError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(MfasrError):
    """Tensor shapes are incompatible with the requested operation."""


class GenotypeError(MfasrError):
    """Genotype has the wrong length or genes outside the choice set."""


class SliceError(MfasrError):
    """Requested sub-network widths exceed the shared store's widths."""


class FormatError(MfasrError):
    """A serialized artifact (weight file, image file) is malformed."""


class TapError(MfasrError):
    """A required tap label is missing or its width is inconsistent."""


class PipelineError(MfasrError):
    """A pipeline stage cannot run, e.g. a predecessor artifact is missing."""


class DivergenceError(MfasrError):
    """Training produced a non-finite loss; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MissingEntry(MfasrError):
    """Latency table has no entry for an operator key."""

    def __init__(self, key):
        super().__init__(f"no latency entry for operator key {key!r}")
        self.key = key


class NoFeasibleCandidate(MfasrError):
    """No genotype in the search space satisfies the latency budget."""


class ConfigError(MfasrError):
    """Run configuration is invalid; message lists every violation."""
