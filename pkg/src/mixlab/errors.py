"""Exception types shared by the solver layers and the command line."""


class ConfigError(ValueError):
    """Invalid or unparseable run configuration."""


class GuardError(RuntimeError):
    """A runtime safety guard stopped a run.

    ``guard`` names the guard (``"blow-up"``, ``"nan"``, ``"clamp-mass"``) and
    ``t`` is the time at which it tripped.
    """

    def __init__(self, guard: str, message: str, t: float = float("nan")):
        super().__init__(message)
        self.guard = guard
        self.t = t
