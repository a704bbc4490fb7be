"""Exception hierarchy shared across the package."""


class GroupActError(Exception):
    """Base class for all library errors."""


class ConfigError(GroupActError):
    """A configuration value violates its documented constraints."""


class ShapeError(GroupActError):
    """Array dimensions are inconsistent with each other or with the model."""


class MaskError(GroupActError):
    """A person mask is invalid (out of range or masks every person)."""


class DegenerateInputError(GroupActError):
    """An input is degenerate for the requested operation (e.g. zero-norm vector)."""


class DegenerateTripletError(GroupActError):
    """Contrastive loss was requested without both positives and negatives."""


class PoolExhaustedError(GroupActError):
    """The candidate pool is too small for the requested selection budget."""


class NumericalError(GroupActError):
    """Training produced non-finite values."""


class ValidationError(GroupActError):
    """Persisted or imported data failed validation."""


class ParseError(ValidationError):
    """A file could not be parsed; the message names the offending location."""
