"""
Exception hierarchy shared by the solver modules.
"""
from typing import Optional


class SupnormError(Exception):
    """Base exception class for supnorm errors"""
    pass


class HamiltonianDomainError(SupnormError):
    """Raised when H is evaluated outside its admissible set (e.g. w(x) <= 0)"""
    pass


class DomainConstructionError(SupnormError):
    """Raised when a grid domain cannot be built"""
    pass


class UnreachableTargetError(SupnormError):
    """Raised when a geodesic is requested for a node at infinite distance"""
    pass


class UnboundedProblemError(SupnormError):
    """Raised when no feasible lambda exists below the configured cap"""
    pass


class ChainStallError(SupnormError):
    """Raised when an ascent chain has no admissible next point"""

    def __init__(self, message: str, node: int, gap: float):
        super().__init__(message)
        self.node = node
        self.gap = gap


class ReportError(SupnormError):
    """Raised when an attainment report cannot be produced"""
    pass


class ConfigError(SupnormError):
    """Raised for unreadable or invalid run configurations"""

    def __init__(self, message: str, key_path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        if key_path:
            message = f"{key_path}: {message}"
        elif line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)
        self.key_path = key_path
        self.line = line
        self.column = column
