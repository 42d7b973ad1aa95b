"""Exception types raised across the toolkit."""


class LenscoderError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(LenscoderError):
    """Operands have incompatible shapes."""


class FormatError(LenscoderError):
    """A file is malformed (bad magic, bad header, dim overflow)."""


class CountMismatch(LenscoderError):
    """Image and label files disagree on the number of examples."""


class DegeneratePsf(LenscoderError):
    """A PSF channel has zero (or non-finite) total energy."""


class ResolutionTooCoarse(LenscoderError):
    """The field grid is too coarse to sample every SLM sub-pixel aperture."""


class UnsupportedDegree(LenscoderError):
    """No primitive polynomial is tabulated for the requested LFSR degree."""


class OutOfField(LenscoderError):
    """The requested object height does not fit in the simulated scene."""


class DegenerateSignal(LenscoderError):
    """Signal variance is zero; an SNR target cannot be met."""


class SingularHomography(LenscoderError):
    """The sampled corner correspondence does not define a homography."""


class TapeIncomplete(LenscoderError):
    """A backward pass was requested through nodes not on the tape."""


class ConfigError(LenscoderError):
    """An experiment configuration is invalid or inconsistent."""
