"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class SelfNormError(Exception):
    """Base class for all errors raised by selfnorm_lab."""


class DomainError(SelfNormError, ValueError):
    """An argument lies outside the domain of the operation."""


class DegenerateVarianceError(SelfNormError, ArithmeticError):
    """A normalizing variance is zero, so the statistic is undefined."""


class ConfigError(SelfNormError, ValueError):
    """Invalid model or run configuration.

    ``key`` and ``line`` locate the offending entry when it came from a
    config file.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class PopulationOverflowError(SelfNormError, OverflowError):
    """A branching population left the representable floating range."""

    def __init__(self, generation):
        self.generation = generation
        super().__init__(f"population overflow at generation {generation}")


class UnsupportedModelError(SelfNormError, TypeError):
    """The requested operation has no oracle for this model family."""


class EnvelopeShapeMismatch(SelfNormError):
    """An envelope shape vanishes where the observed log-ratio does not."""
