"""
Errors raised by strf.
"""


class StrfError(Exception):
    """Base class for every error raised by this package."""


class DomainError(StrfError, ValueError):
    """A numerical precondition does not hold (non-positive scale, singular map, ...)."""


class ConfigurationError(StrfError):
    """Configuration, manifest and checkpoint disagree with each other."""


class FormatError(StrfError):
    """A file does not follow the expected binary or JSON layout."""


class DatasetError(StrfError):
    """Reading or writing dataset files failed."""


class UndefinedEffectSize(DomainError):
    """The pooled standard deviation is zero, so the effect size has no value."""


class GradientError(StrfError):
    """
    A non-finite gradient was produced during training.

    ``step`` is the optimiser step and ``layer`` the parameter name (or
    ``loss``) where the first non-finite value showed up.
    """

    def __init__(self, message, step=None, layer=None):
        super().__init__(message)
        self.step = step
        self.layer = layer

    def __str__(self):
        base = super().__str__()
        if self.step is None and self.layer is None:
            return base
        return f"{base} (step={self.step}, layer={self.layer})"
