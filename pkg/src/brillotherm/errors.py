"""Exception hierarchy shared by all modules.

The CLI maps each family onto a fixed exit code, so new exceptions should
derive from one of the four family bases below.
"""


class BrillothermError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BrillothermError, ValueError):
    """Invalid or incomplete user input (exit code 2)."""


class PhysicsError(BrillothermError):
    """A physical model cannot be evaluated for the given inputs (exit code 3)."""


class InstabilityError(PhysicsError):
    """Effective mechanical linewidth is not positive (parametric instability)."""


class NoAdmissibleRootError(PhysicsError):
    """No root of the steady-state quartic inside the admissible interval."""

    def __init__(self, message, real_roots=()):
        super().__init__(message)
        self.real_roots = tuple(real_roots)


class TrackingError(PhysicsError):
    """Resonance continuation across a length grid lost a mode."""


class FitError(BrillothermError):
    """A least-squares fit could not be carried out (exit code 4)."""


class ConvergenceError(FitError):
    """The minimizer hit its iteration limit before converging."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NoFeatureError(FitError):
    """The fit window contains no detectable mechanical feature."""


class UnphysicalResultError(BrillothermError):
    """A result lies outside its physical domain (exit code 5)."""
