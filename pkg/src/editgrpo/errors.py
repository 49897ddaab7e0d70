from __future__ import annotations


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class UnsupportedEditError(InvalidInputError):
    """The requested perturbation cannot be applied to this transcript.

    Callers generating prompts fall back to insertion or substitution.
    """
