"""Exception hierarchy shared by the library and the command-line front end."""


class SSIError(Exception):
    """Base error; ``detail`` is the human-readable message."""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidArgumentError(SSIError, ValueError):
    """Raised when an operation receives arguments outside its contract."""


class SingularHessianError(SSIError, ArithmeticError):
    """Raised when the registration Hessian cannot be inverted (featureless image)."""


class InternalConsistencyError(SSIError, RuntimeError):
    """Raised when a constructed object violates an internal invariant."""


class StageError(SSIError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, detail: str):
        super().__init__(detail)
        self.stage = stage

    def __str__(self) -> str:
        return f"[{self.stage}] {self.detail}"
