"""Desk-scale lab for generative temporal models with external memory."""

from gtmlab.engine import Tensor, NumericError, ShapeError

__version__ = "0.1.0"

__all__ = ["Tensor", "NumericError", "ShapeError", "__version__"]
