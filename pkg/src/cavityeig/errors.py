"""Exception hierarchy; the CLI maps each family to an exit code."""


class CavityError(Exception):
    """Base class for all package errors."""


class ConfigError(CavityError, ValueError):
    """Invalid or inconsistent run configuration (exit code 1)."""


class NumericalError(CavityError, RuntimeError):
    """A numerical procedure failed (exit code 2)."""


class ConvergenceError(NumericalError):
    pass


class ClusterError(NumericalError):
    """An index of F collides with an eigenvalue outside F."""


class DegenerateFieldError(NumericalError):
    """Permittivity is degenerate where a formula divides by its norm."""


class PropertyViolation(CavityError, AssertionError):
    """A checked mathematical property does not hold (exit code 3)."""
