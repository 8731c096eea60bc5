"""
Exception types raised across driftlens.

Each error also derives from the closest built-in so callers can catch
ValueError / OSError / LookupError generically. The CLI maps these types to
exit codes in one place (see driftlens.cli.exit_code_for).
"""


class DriftLensError(Exception):
    """Base class for all driftlens errors"""


# --- input validation ---

class ValidationError(DriftLensError, ValueError):
    """Non-finite values or otherwise invalid numeric input"""


class SpecError(DriftLensError, ValueError):
    """A DomainSpec, architecture or run configuration violates its invariants"""


class SizeError(DriftLensError, ValueError):
    """Matrix dimensions are too small or do not match"""


class EstimatorDomainError(DriftLensError, ValueError):
    """The requested HSIC estimator is undefined for this sample count"""


class PairingError(DriftLensError, ValueError):
    """Two activation sets cannot be paired sample by sample"""


class InsufficientSamplesError(DriftLensError, ValueError):
    """Every minibatch was dropped, nothing left to estimate from"""


class ArchitectureError(DriftLensError, ValueError):
    """Two CKA maps or models do not share a layer layout"""


class TrainingError(DriftLensError, ValueError):
    """A readout could not be fitted"""


class LengthError(DriftLensError, ValueError):
    """A signal is shorter than the analysis window"""

    def __init__(self, message, required):
        super().__init__(message)
        self.required = required


class AlignmentError(DriftLensError, ValueError):
    """Two HR series are not sampled at the same timestamps"""


class UndefinedCorrelationError(DriftLensError, ValueError):
    """Pearson correlation is undefined (constant input or too few points)"""


class TransformDomainError(DriftLensError, ValueError):
    """Fisher z transform applied to |r| >= 1"""


class InsufficientDataError(DriftLensError, ValueError):
    """Not enough values for the requested statistic"""


class CiUndefinedError(InsufficientDataError):
    """Confidence interval undefined; the partial summary (means only) is attached"""

    def __init__(self, message, summary=None):
        super().__init__(message)
        self.summary = summary


class SelectionError(DriftLensError, ValueError):
    """Model selection has nothing to choose from"""


# --- coverage / lookup ---

class CoverageError(DriftLensError, LookupError):
    """A table or model grid is missing entries"""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class SubjectLookupError(DriftLensError, LookupError):
    """A requested subject does not exist in the dataset"""


class MissingArtifactError(DriftLensError, LookupError):
    """An upstream file is absent; names the command that produces it"""

    def __init__(self, path, producer):
        super().__init__(f"Missing {path}; run `{producer}` first")
        self.path = path
        self.producer = producer


# --- activation dump format ---

class DumpFormatError(DriftLensError, ValueError):
    """The stream is not an activation dump"""


class UnsupportedVersionError(DumpFormatError):
    """Activation dump version is not supported"""


class DumpCorruptionError(DumpFormatError):
    """The stream ends before the declared payload"""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class DumpWriteError(DriftLensError, OSError):
    """Writing an activation dump failed part way"""

    def __init__(self, message, bytes_written):
        super().__init__(message)
        self.bytes_written = bytes_written


class LockError(DriftLensError, OSError):
    """Another driftlens process holds the output directory"""
