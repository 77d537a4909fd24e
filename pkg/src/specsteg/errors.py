"""Exception types shared across the pipeline."""


class SpecstegError(Exception):
    """Base class for all package-specific failures."""


class AudioFormatError(SpecstegError):
    """WAV container or sample format cannot be ingested."""


class CodecError(SpecstegError):
    """Invalid codec configuration or stream contents."""


class CapacityError(SpecstegError):
    """Message does not fit the carrier, or job/stream disagree on capacity."""


class ParityUnreachableError(SpecstegError):
    """Quantizer-step search failed to reach the requested frame parity."""


class DegenerateCoverError(SpecstegError):
    """Cover set has no usable variance for regression fitting."""


class ManifestError(SpecstegError):
    """Dataset manifest is inconsistent or violates uniformity rules."""


class TrainingDivergenceError(SpecstegError):
    """Optimization produced a non-finite loss."""
