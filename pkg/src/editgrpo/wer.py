"""Word error rate under a unit-cost minimum edit distance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .textedit import Transcript, _word_ids

Words = Union[Transcript, Sequence[str]]


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def cost(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _as_words(x: Words) -> tuple[str, ...]:
    return x.words if isinstance(x, Transcript) else tuple(x)


def edit_distance(ref: Words, hyp: Words) -> EditCounts:
    """Minimum-cost S/D/I counts aligning ``hyp`` to ``ref``.

    When several alignments share the minimum cost the backtrace prefers
    substitution, then deletion, then insertion.
    """
    r, h = _as_words(ref), _as_words(hyp)
    if not r:
        raise InvalidInputError("reference must be non-empty")
    ir, ih = _word_ids(r, h)
    s, d, i = _kernels.edit_counts(ir, ih)
    return EditCounts(int(s), int(d), int(i), len(r))


def wer(ref: Words, hyp: Words) -> float:
    """``(S + D + I) / len(ref)``; not clipped, so it can exceed 1."""
    c = edit_distance(ref, hyp)
    return c.cost / c.ref_len


def corpus_wer(refs: Sequence[Words], hyps: Sequence[Words]) -> float:
    if len(refs) != len(hyps):
        raise InvalidInputError("refs and hyps differ in length")
    counts = [edit_distance(r, h) for r, h in zip(refs, hyps)]
    return float(np.sum([c.cost for c in counts]) / np.sum([c.ref_len for c in counts]))
