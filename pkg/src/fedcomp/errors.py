"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; raised before any simulation work."""


class NumericalStateError(FloatingPointError):
    """A parameter, logit or estimate became non-finite."""


class ValidityError(ValueError):
    """A closed-form expression is evaluated outside its domain of validity."""


class CheckpointError(IOError):
    """Malformed, truncated or mismatched checkpoint file."""
