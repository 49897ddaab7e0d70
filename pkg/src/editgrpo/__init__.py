"""Editing-oriented GRPO for token-based speech editing, at desk scale."""
from .errors import InvalidInputError, UnsupportedEditError

__version__ = "0.1.0"

__all__ = ["InvalidInputError", "UnsupportedEditError", "__version__"]
