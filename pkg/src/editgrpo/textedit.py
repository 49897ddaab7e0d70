"""Rule-based transcript perturbation and word-level edit alignment.

Editing prompts are built from plain (transcript, tokens) pairs: the
transcript is treated as the original text, one of five perturbations yields
the target text, and a longest-common-subsequence diff between the two marks
the words that were left untouched.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidInputError, UnsupportedEditError

BASIC_KINDS = ("insertion", "deletion", "substitution", "swap")
EDIT_KINDS = BASIC_KINDS + ("multi-edit",)

_PUNCT = re.compile(r"[^\w\s']|_")


@dataclass(frozen=True)
class Transcript:
    words: tuple[str, ...]

    def __post_init__(self):
        words = tuple(self.words)
        object.__setattr__(self, "words", words)
        if not words:
            raise InvalidInputError("transcript must contain at least one word")
        for w in words:
            if not w or any(c.isspace() for c in w):
                raise InvalidInputError(f"invalid word {w!r}")

    @classmethod
    def from_text(cls, text: str) -> Transcript:
        """Lowercase, strip punctuation, split on whitespace."""
        return cls(tuple(normalize_text(text).split()))

    def __len__(self):
        return len(self.words)

    def __str__(self):
        return " ".join(self.words)


def normalize_text(text: str) -> str:
    return " ".join(_PUNCT.sub(" ", text.lower()).replace("'", "").split())


@dataclass(frozen=True)
class EditOp:
    """One perturbation.

    ``positions`` index the transcript the op is applied to. For insertion
    they are insertion slots in ``0..len`` (slot ``len`` appends), listed in
    increasing order and each referring to the source before any insertion.
    A multi-edit carries its basic ops in ``steps``; each step's positions
    refer to the transcript produced by the previous step.
    """

    kind: str
    positions: tuple[int, ...] = ()
    payload: tuple[str, ...] = ()
    steps: tuple[EditOp, ...] = ()

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise InvalidInputError(f"unknown edit kind {self.kind!r}")
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        object.__setattr__(self, "payload", tuple(self.payload))
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.kind == "multi-edit":
            if not self.steps or any(s.kind not in BASIC_KINDS for s in self.steps):
                raise InvalidInputError("multi-edit needs a non-empty list of basic ops")
        elif self.kind == "swap":
            if len(self.positions) != 2 or self.positions[0] == self.positions[1]:
                raise InvalidInputError("swap needs exactly two distinct positions")
        elif self.kind in ("insertion", "substitution"):
            if len(self.payload) != len(self.positions) or not self.positions:
                raise InvalidInputError(f"{self.kind} needs one payload word per position")
        elif not self.positions:
            raise InvalidInputError("deletion needs at least one position")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "positions": list(self.positions), "payload": list(self.payload)}
        if self.steps:
            d["steps"] = [s.to_dict() for s in self.steps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> EditOp:
        return cls(
            d["kind"],
            tuple(d.get("positions", ())),
            tuple(d.get("payload", ())),
            tuple(cls.from_dict(s) for s in d.get("steps", ())),
        )


@dataclass(frozen=True)
class EditAlignment:
    """Kept word pairs plus the edited spans left over on each side.

    Spans are half-open ``(start, stop)`` index ranges.
    """

    kept_pairs: tuple[tuple[int, int], ...]
    edited_ori_spans: tuple[tuple[int, int], ...]
    edited_tar_spans: tuple[tuple[int, int], ...]

    def to_dict(self) -> dict:
        return {
            "kept_pairs": [list(p) for p in self.kept_pairs],
            "edited_ori_spans": [list(s) for s in self.edited_ori_spans],
            "edited_tar_spans": [list(s) for s in self.edited_tar_spans],
        }

    @classmethod
    def from_dict(cls, d: dict) -> EditAlignment:
        return cls(
            tuple(tuple(p) for p in d["kept_pairs"]),
            tuple(tuple(s) for s in d["edited_ori_spans"]),
            tuple(tuple(s) for s in d["edited_tar_spans"]),
        )


@dataclass(frozen=True)
class EditPrompt:
    x_ori: Transcript
    x_tar: Transcript
    tokens_ori: tuple[int, ...]
    op: EditOp
    alignment: EditAlignment
    seed: int
    speaker_id: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "x_ori": str(self.x_ori),
                "x_tar": str(self.x_tar),
                "tokens_ori": list(self.tokens_ori),
                "op": self.op.to_dict(),
                "alignment": self.alignment.to_dict(),
                "seed": self.seed,
                "speaker_id": self.speaker_id,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> EditPrompt:
        d = json.loads(line)
        missing = {"x_ori", "x_tar", "tokens_ori", "op", "alignment", "seed"} - d.keys()
        if missing:
            raise InvalidInputError(f"prompt record missing keys: {sorted(missing)}")
        prompt = cls(
            Transcript(d["x_ori"].split()),
            Transcript(d["x_tar"].split()),
            tuple(int(t) for t in d["tokens_ori"]),
            EditOp.from_dict(d["op"]),
            EditAlignment.from_dict(d["alignment"]),
            int(d["seed"]),
            int(d.get("speaker_id", 0)),
        )
        if len(prompt.tokens_ori) != len(prompt.x_ori):
            raise InvalidInputError("tokens_ori must have one token per original word")
        if prompt.alignment != align(prompt.x_ori, prompt.x_tar):
            raise InvalidInputError("stored alignment does not match the transcripts")
        return prompt


def write_prompts(path, prompts: Iterable[EditPrompt]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in prompts:
            f.write(p.to_json() + "\n")


def read_prompts(path) -> list[EditPrompt]:
    with open(path, encoding="utf-8") as f:
        return [EditPrompt.from_json(line) for line in f if line.strip()]


def max_edit_count(word_count: int) -> int:
    if word_count < 1:
        raise InvalidInputError(f"word_count must be >= 1, got {word_count}")
    return max(1, word_count // 2)


def apply_edit(transcript: Transcript, op: EditOp) -> Transcript:
    """Apply ``op`` to ``transcript`` and return the edited transcript."""
    words = list(transcript.words)
    n = len(words)
    if op.kind == "multi-edit":
        for step in op.steps:
            transcript = apply_edit(transcript, step)
        return transcript

    if op.kind == "insertion":
        if any(not 0 <= p <= n for p in op.positions) or list(op.positions) != sorted(op.positions):
            raise InvalidInputError(f"insertion slots {op.positions} invalid for {n} words")
        out = []
        slots = dict()
        for p, w in zip(op.positions, op.payload):
            slots.setdefault(p, []).append(w)
        for i in range(n + 1):
            out.extend(slots.get(i, ()))
            if i < n:
                out.append(words[i])
        return Transcript(out)

    if any(not 0 <= p < n for p in op.positions):
        raise InvalidInputError(f"positions {op.positions} out of range for {n} words")
    if op.kind == "deletion":
        drop = set(op.positions)
        if len(drop) >= n:
            raise UnsupportedEditError("deletion would empty the transcript")
        return Transcript([w for i, w in enumerate(words) if i not in drop])
    if op.kind == "substitution":
        for p, w in zip(op.positions, op.payload):
            words[p] = w
        return Transcript(words)
    a, b = op.positions
    words[a], words[b] = words[b], words[a]
    return Transcript(words)


def _sample_basic(transcript, kind, count, rng, lexicon):
    words = transcript.words
    n = len(words)
    if kind == "insertion":
        slots = np.sort(rng.integers(0, n + 1, size=count))
        payload = [lexicon[i] for i in rng.integers(0, len(lexicon), size=count)]
        return EditOp(kind, tuple(int(s) for s in slots), tuple(payload))
    if kind == "deletion":
        if n < 2:
            raise UnsupportedEditError("cannot delete from a single-word transcript")
        count = min(count, n - 1)
        pos = np.sort(rng.choice(n, size=count, replace=False))
        return EditOp(kind, tuple(int(p) for p in pos))
    if kind == "substitution":
        pos = np.sort(rng.choice(n, size=min(count, n), replace=False))
        payload = []
        for p in pos:
            choices = [w for w in lexicon if w != words[p]] or list(lexicon)
            payload.append(choices[int(rng.integers(len(choices)))])
        return EditOp(kind, tuple(int(p) for p in pos), tuple(payload))
    # swap: two positions holding different words, otherwise it is a no-op
    if n < 2:
        raise UnsupportedEditError("cannot swap in a single-word transcript")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if words[i] != words[j]]
    if not pairs:
        raise UnsupportedEditError("swap needs two distinct words")
    i, j = pairs[int(rng.integers(len(pairs)))]
    return EditOp("swap", (i, j))


def perturb(
    transcript: Transcript,
    op_kind: str,
    rng: np.random.Generator,
    lexicon: Sequence[str],
    count: int | None = None,
) -> tuple[Transcript, EditOp]:
    """Sample and apply one perturbation.

    Args:
        transcript: original text.
        op_kind: one of ``EDIT_KINDS`` or ``"random"``.
        rng: seeded generator; the result is a pure function of its state.
        lexicon: words available for insertion and substitution, sampled
            uniformly.
        count: words to insert/delete/substitute, or basic ops in a
            multi-edit. Sampled when omitted; must not exceed
            ``max_edit_count(len(transcript))``.

    Returns:
        The target transcript and the op that produced it.
    """
    if not lexicon:
        raise InvalidInputError("lexicon must be non-empty")
    n = len(transcript)
    limit = max_edit_count(n)
    if count is not None and not 1 <= count <= limit:
        raise InvalidInputError(f"edit count {count} outside 1..{limit}")

    if op_kind == "random":
        kinds = ["insertion", "substitution"]
        if n >= 2:
            kinds += ["deletion", "swap"]
        if limit >= 2:
            kinds.append("multi-edit")
        op_kind = kinds[int(rng.integers(len(kinds)))]
        if op_kind == "swap" and len(set(transcript.words)) < 2:
            op_kind = "substitution"
    if op_kind not in EDIT_KINDS:
        raise InvalidInputError(f"unknown edit kind {op_kind!r}")

    if op_kind != "multi-edit":
        k = count if count is not None else int(rng.integers(1, limit + 1))
        op = _sample_basic(transcript, op_kind, k, rng, lexicon)
        return apply_edit(transcript, op), op

    if limit < 2:
        raise UnsupportedEditError("multi-edit needs at least four words")
    n_ops = count if count is not None else int(rng.integers(2, limit + 1))
    n_ops = max(2, n_ops)
    # Repeated kinds are allowed. Draws whose steps cancel out are redrawn.
    for _ in range(64):
        cur = transcript
        steps = []
        for _ in range(n_ops):
            kinds = [k for k in BASIC_KINDS if len(cur) >= 2 or k in ("insertion", "substitution")]
            kind = kinds[int(rng.integers(len(kinds)))]
            try:
                step = _sample_basic(cur, kind, 1, rng, lexicon)
            except UnsupportedEditError:
                step = _sample_basic(cur, "substitution", 1, rng, lexicon)
            cur = apply_edit(cur, step)
            steps.append(step)
        if cur != transcript:
            return cur, EditOp("multi-edit", steps=tuple(steps))
    raise UnsupportedEditError("could not draw a non-trivial multi-edit")  # pragma: no cover


def _word_ids(a: Sequence[str], b: Sequence[str]):
    index: dict[str, int] = {}
    ia = np.array([index.setdefault(w, len(index)) for w in a], dtype=np.int64)
    ib = np.array([index.setdefault(w, len(index)) for w in b], dtype=np.int64)
    return ia, ib


def _spans(indices: Iterable[int], n: int) -> tuple[tuple[int, int], ...]:
    kept = np.zeros(n, dtype=bool)
    kept[list(indices)] = True
    spans = []
    start = None
    for i in range(n):
        if not kept[i] and start is None:
            start = i
        elif kept[i] and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, n))
    return tuple(spans)


def lcs_pairs(a: Sequence[str], b: Sequence[str]) -> tuple[tuple[int, int], ...]:
    """Longest common subsequence as index pairs; empty inputs allowed.

    Among maximal matchings the one with the lexicographically smallest
    ``a`` indices is returned.
    """
    if not a or not b:
        return ()
    ia, ib = _word_ids(a, b)
    return tuple((int(i), int(j)) for i, j in _kernels.lcs_pairs(ia, ib))


def align(x_ori: Transcript, x_tar: Transcript) -> EditAlignment:
    pairs = lcs_pairs(x_ori.words, x_tar.words)
    return EditAlignment(
        pairs,
        _spans((p[0] for p in pairs), len(x_ori)),
        _spans((p[1] for p in pairs), len(x_tar)),
    )


def synth_prompt(
    transcript: Transcript,
    tokens: Sequence[int],
    rng: np.random.Generator,
    lexicon: Sequence[str],
    *,
    op_kind: str = "random",
    seed: int = 0,
    speaker_id: int = 0,
) -> EditPrompt:
    """Turn a plain (transcript, tokens) pair into an editing prompt."""
    if len(tokens) != len(transcript):
        raise InvalidInputError("expected one token per word")
    x_tar, op = perturb(transcript, op_kind, rng, lexicon)
    return EditPrompt(
        x_ori=transcript,
        x_tar=x_tar,
        tokens_ori=tuple(int(t) for t in tokens),
        op=op,
        alignment=align(transcript, x_tar),
        seed=int(seed),
        speaker_id=int(speaker_id),
    )
