"""Exception types shared across the package.

Each error carries a short machine-readable ``code`` so that batch runners can
record failures without string matching on messages.
"""


class TTSwingError(Exception):
    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class InvalidParameters(TTSwingError, ValueError):
    code = "invalid-parameters"


class RisingBall(TTSwingError, ValueError):
    """Bounce map called on a ball that is not moving into the table."""

    code = "rising-ball"


class InsufficientExcitation(TTSwingError, ValueError):
    code = "insufficient-excitation"


class DegenerateWindow(TTSwingError, ValueError):
    code = "degenerate-window"


class NoPrediction(TTSwingError, ValueError):
    code = "no-prediction"


class InfeasibleProblem(TTSwingError, ValueError):
    code = "infeasible-problem"


class NoContact(TTSwingError, ValueError):
    code = "no-contact"


class ModelError(TTSwingError, RuntimeError):
    """Mass matrix numerically singular; indicates broken arm parameters."""

    code = "model-error"


class ConfigError(TTSwingError, ValueError):
    code = "invalid-config"

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        loc = ""
        if path:
            loc += f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}".strip() if loc else message)
