"""Graph-based semi-supervised severity classification."""
from .errors import SSGLError, SolverError

__version__ = "0.1.0"

__all__ = ["SSGLError", "SolverError", "__version__"]
