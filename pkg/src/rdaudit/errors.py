"""Exception types shared across the package."""


class RDAuditError(Exception):
    pass


class ConfigError(RDAuditError, ValueError):
    """Invalid experiment configuration."""


class NumericalError(RDAuditError):
    """A solve did not converge, or time stepping collapsed."""

    def __init__(self, message: str, residual: float | None = None, step: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class BlowUpError(RDAuditError):
    """Some species exceeded the L-infinity guard."""

    def __init__(self, step: int, t: float, value: float, threshold: float):
        super().__init__(
            f"blow-up guard: max u = {value:.6g} > {threshold:.6g} at step {step} (t = {t:.6g})"
        )
        self.step = step
        self.t = t
        self.value = value
        self.threshold = threshold
