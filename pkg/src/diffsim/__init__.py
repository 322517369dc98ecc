"""Differential-similarity coordinate systems on data manifolds."""
from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
__version__ = "0.1.0"
