import math

from strf.exceptions import DomainError


def validate_positive(name, value):
    """
    Validate a strictly positive, finite real
    """
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(number) or number <= 0:
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


def validate_non_negative(name, value):
    """
    Validate a finite real that is zero or larger
    """
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be a non-negative finite number, got {value!r}")


def validate_finite(name, value):
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")


def validate_odd(name, value):
    """
    Validate a positive odd integer (grid sizes)
    """
    if int(value) != value or value < 1 or value % 2 == 0:
        raise DomainError(f"{name} must be a positive odd integer, got {value!r}")


def validate_probability(name, value):
    if not math.isfinite(value) or not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


def validate_open_unit_interval(name, value):
    if not math.isfinite(value) or not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie strictly between 0 and 1, got {value!r}")


def validate_choice(name, value, choices):
    """
    Validate that a value is one of a fixed set of names
    """
    if value not in choices:
        raise DomainError(f"{name} must be one of {sorted(choices)}, got {value!r}")


def validate_range(name, value_range):
    """
    Validate a (low, high) pair of positive reals with low <= high
    """
    low, high = value_range
    validate_positive(f"{name}[0]", low)
    validate_positive(f"{name}[1]", high)
    if low > high:
        raise DomainError(f"{name} must satisfy low <= high, got {value_range!r}")
