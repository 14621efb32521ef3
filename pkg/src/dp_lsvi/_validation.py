"""Small argument and input checks shared across modules."""
import math
from numbers import Real


def check_positive(name, value):
    if not (isinstance(value, Real) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_unit_interval(name, value):
    if not (0.0 < value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
    return value


def check_spec(spec):
    """Raise ``SpecValidationError`` listing every violation of ``spec``."""
    from .linear_mdp import LinearMdpSpec, SpecValidationError, validate_spec

    if not isinstance(spec, LinearMdpSpec):
        raise TypeError(f"expected LinearMdpSpec, got {type(spec).__name__}")
    violations = validate_spec(spec)
    if violations:
        raise SpecValidationError("; ".join(str(v) for v in violations))
    return spec
