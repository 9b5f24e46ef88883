"""Simulated table-tennis striking stack: ball prediction, swing OCP, MPC and plant."""

from .errors import TTSwingError

__version__ = "0.1.0"

__all__ = ["TTSwingError", "__version__"]
