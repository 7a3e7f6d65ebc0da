"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid parameters or inconsistent configuration."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (singular system, root bracketing, ...)."""


class CapabilityError(TypeError):
    """The limit-state function lacks a capability the caller needs."""


class StepDiverged(NumericalError):
    """An ensemble update produced non-finite particles."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite particles after iteration {iteration}")


class DegenerateDrift(NumericalError):
    """All drift norms vanished, so no adaptive time step can be formed."""
