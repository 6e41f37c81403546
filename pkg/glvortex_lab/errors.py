"""
Exception types shared by the vortex lab.

The CLI maps these onto exit codes: configuration, precondition and domain
errors exit with 2, numeric non-convergence with 3.
"""

from typing import Optional


class GLVortexError(Exception):
    """Base class for every error raised by glvortex_lab."""


class ConfigurationError(GLVortexError, ValueError):
    """Invalid configuration values, unknown keys or an unusable grid."""


class PreconditionError(GLVortexError, ValueError):
    """An operation was called outside the parameter window it requires."""


class DomainError(GLVortexError, ValueError):
    """A point lies outside the domain or too close to its boundary."""


class NumericError(GLVortexError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(
        self,
        message: str,
        residual: Optional[float] = None,
        iterations: Optional[int] = None,
    ):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

    def __str__(self) -> str:
        base = super().__str__()
        details = []
        if self.residual is not None:
            details.append(f"residual={self.residual:.3e}")
        if self.iterations is not None:
            details.append(f"iterations={self.iterations}")
        return f"{base} ({', '.join(details)})" if details else base
