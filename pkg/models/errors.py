from typing import Any, Dict, Optional


class ModelError(ValueError):
    """Raised when an input violates the hypotheses a computation relies on."""


class IncomparableFieldsError(ModelError):
    """Raised when Green fields solved on different boxes are compared."""


class ConvergenceError(RuntimeError):
    """
    Raised when an iterative method exhausts its budget or fails its certificate.

    Attributes:
        diagnostics (Dict[str, Any]): Residuals, iteration counts and sizes
            describing how far the method got
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"
