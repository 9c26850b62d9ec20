"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 1, runtime aborts (including diagnostics aborts and step-size
failures) exit with 2, and acceptance-check failures exit with 3.
"""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class StepSizeError(RuntimeError):
    """An explicit time step violates the stability bound of a scheme."""


class DiagnosticsAbort(RuntimeError):
    """Diagnostics became untrustworthy (e.g. histogram spill above 1%)."""


class SimulationAbort(RuntimeError):
    """A component error occurred mid-run; carries the last completed step."""

    def __init__(self, message, last_step=None, diagnostics=None):
        super().__init__(message)
        self.last_step = last_step
        self.diagnostics = diagnostics if diagnostics is not None else []
