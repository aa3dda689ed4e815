from __future__ import annotations


class SSGLError(ValueError):
    """Bad input data or configuration; the CLI maps it to exit code 1."""


class SolverError(SSGLError):
    """A linear solve failed to reach its residual target."""

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
