"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration or input value violates its contract."""


class SingularConfigurationError(ValueError):
    """Two or more ions coincide; the Coulomb potential is singular."""


class ConvergenceError(RuntimeError):
    """An iterative solve failed; carries the best iterate found."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InstabilityError(RuntimeError):
    """A dynamical eigenvalue acquired a real part; names the offending mode."""

    def __init__(self, message, mode_index=None, growth_rate=None):
        super().__init__(message)
        self.mode_index = mode_index
        self.growth_rate = growth_rate


class IntegrationError(RuntimeError):
    """A time integration aborted; carries the time reached."""

    def __init__(self, message, time_reached=None):
        super().__init__(message)
        self.time_reached = time_reached
