"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when a spec, problem definition or config file is invalid."""


class SimulationAborted(RuntimeError):
    """Raised when a closed-loop run cannot continue (infeasible step).

    Carries the partial trace accumulated up to the failing step.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
