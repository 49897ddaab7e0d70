"""Editing-oriented rewards: content (WER), preservation (MCD over the
unedited regions) and speaker similarity, composed coarse-to-fine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import dsp, synthenv
from .errors import InvalidInputError
from .textedit import EditPrompt, lcs_pairs
from .wer import wer as word_error_rate

DEFAULT_SCHEDULE = ((0, 0.9, 0.1), (290, 0.8, 0.2))


@dataclass(frozen=True)
class RewardConfig:
    k_w: float = 12.0
    alpha: float = 1.5
    k_m: float = 0.2
    delta: float = 2.0
    gamma: float = 0.5
    # (first step of the phase, lambda_c, lambda_s)
    lambda_schedule: tuple[tuple[int, float, float], ...] = DEFAULT_SCHEDULE

    def __post_init__(self):
        sched = tuple((int(s), float(c), float(w)) for s, c, w in self.lambda_schedule)
        object.__setattr__(self, "lambda_schedule", sched)
        if self.k_w <= 0 or self.alpha <= 0 or self.k_m <= 0:
            raise InvalidInputError("k_w, alpha and k_m must be positive")
        if self.delta < 0:
            raise InvalidInputError("delta must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidInputError("gamma must lie in [0, 1]")
        if not sched:
            raise InvalidInputError("lambda schedule must be non-empty")
        steps = [s for s, _, _ in sched]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise InvalidInputError("schedule thresholds must be strictly increasing")
        for _, c, s in sched:
            _check_lambdas(c, s)


def _check_lambdas(lc: float, ls: float) -> None:
    if lc < 0 or ls < 0 or not math.isclose(lc + ls, 1.0, rel_tol=0.0, abs_tol=1e-12):
        raise InvalidInputError(f"reward weights must be non-negative and sum to 1, got ({lc}, {ls})")


@dataclass(frozen=True)
class RewardBreakdown:
    w: float
    s: float
    m: Optional[float]
    r_wer: float
    r_mcd: float
    r_sim: float
    r_wer_mcd: float
    r_total: float
    hypothesis: tuple[str, ...] = field(default=(), compare=False)

    def row(self) -> dict:
        return {
            "w": self.w,
            "s": self.s,
            "m": "" if self.m is None else self.m,
            "r_wer": self.r_wer,
            "r_mcd": self.r_mcd,
            "r_sim": self.r_sim,
            "r_total": self.r_total,
        }


def r_wer(w: float, cfg: RewardConfig) -> float:
    if w < 0:
        raise InvalidInputError(f"WER must be non-negative, got {w}")
    return math.exp(-cfg.k_w * w**cfg.alpha)


def r_sim(emb_a, emb_b) -> float:
    a = np.asarray(emb_a, dtype=np.float64)
    b = np.asarray(emb_b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InvalidInputError("zero embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def r_mcd(m: Optional[float], cfg: RewardConfig) -> float:
    """``exp(-k_m * max(m - delta, 0))``; 1 when there is no unedited region."""
    if m is None:
        return 1.0
    if m < 0:
        raise InvalidInputError(f"MCD must be non-negative, got {m}")
    return math.exp(-cfg.k_m * max(m - cfg.delta, 0.0))


def combine_wer_mcd(rw: float, rm: float, gamma: float) -> float:
    return rw * ((1.0 - gamma) + gamma * rm)


def total_reward(r_wer_mcd: float, r_sim: float, lambda_c: float, lambda_s: float) -> float:
    _check_lambdas(lambda_c, lambda_s)
    return lambda_c * r_wer_mcd + lambda_s * r_sim


def schedule_lambdas(step: int, cfg: RewardConfig) -> tuple[float, float]:
    """Weights for ``step``; a threshold step already belongs to the new phase."""
    lc, ls = cfg.lambda_schedule[0][1:]
    for start, c, s in cfg.lambda_schedule:
        if step >= start:
            lc, ls = c, s
    return lc, ls


@dataclass(frozen=True)
class RewardEnv:
    """Frozen decoding/recognition environment the rewards are computed in."""

    spec: synthenv.SynthSpec = synthenv.SynthSpec()
    cep: Optional[dsp.CepstrogramConfig] = None

    def __post_init__(self):
        if self.cep is None:
            object.__setattr__(self, "cep", self.spec.cepstrogram_config())

    def original(self, prompt: EditPrompt) -> tuple[dsp.Waveform, np.ndarray]:
        return _original(self, prompt.tokens_ori, prompt.speaker_id, prompt.seed)

    def decode(self, prompt: EditPrompt, tokens: Sequence[int]) -> dsp.Waveform:
        # the frozen decoder is conditioned on the original speaker and seed
        return synthenv.decode(tokens, prompt.speaker_id, self.spec, prompt.seed)


@lru_cache(maxsize=4096)
def _original(env: RewardEnv, tokens, speaker_id, seed):
    y = synthenv.decode(tokens, speaker_id, env.spec, seed)
    return y, dsp.speaker_embedding(y, env.cep)


def preservation_regions(prompt: EditPrompt, hypothesis: Sequence[str], spec: synthenv.SynthSpec):
    """Time spans of the unedited words on the original and generated sides.

    Kept target words are located in the generated audio by aligning the
    recognized words against the target text.
    """
    kept = prompt.alignment.kept_pairs
    tar_to_hyp = dict(lcs_pairs(prompt.x_tar.words, tuple(hypothesis)))
    ori_idx = [i for i, _ in kept]
    gen_idx = [tar_to_hyp[j] for _, j in kept if j in tar_to_hyp]
    return (
        synthenv.index_spans(ori_idx, len(prompt.x_ori), spec),
        synthenv.index_spans(gen_idx, len(hypothesis), spec),
    )


def preservation_mcd(prompt: EditPrompt, y_hat: dsp.Waveform, hypothesis, env: RewardEnv) -> Optional[float]:
    """MCD between the unedited regions, or ``None`` if there is nothing to compare.

    Kept regions are concatenated per side and aligned with a single DTW.
    If none of the kept words survive in the rollout, the whole rollout is
    compared against the original kept region instead.
    """
    ori_spans, gen_spans = preservation_regions(prompt, hypothesis, env.spec)
    if not ori_spans:
        return None
    y_ori, _ = env.original(prompt)
    ori_region = dsp.extract_region(y_ori, ori_spans)
    gen_region = dsp.extract_region(y_hat, gen_spans) if gen_spans else y_hat
    if len(gen_region) < env.cep.frame_length:
        return None
    return dsp.mcd(dsp.mel_cepstra(ori_region, env.cep), dsp.mel_cepstra(gen_region, env.cep))


def score_rollout(
    prompt: EditPrompt,
    tokens: Sequence[int],
    env: RewardEnv,
    cfg: RewardConfig,
    step: int,
) -> RewardBreakdown:
    """Decode a rollout and compute every reward term for it."""
    y_hat = env.decode(prompt, tokens)
    hyp = synthenv.oracle_asr(y_hat, env.spec)
    w = word_error_rate(prompt.x_tar, hyp)
    rw = r_wer(w, cfg)

    if len(y_hat) >= env.cep.frame_length:
        _, emb_ori = env.original(prompt)
        s = r_sim(emb_ori, dsp.speaker_embedding(y_hat, env.cep))
    else:
        s = 0.0  # no speech to compare
    m = preservation_mcd(prompt, y_hat, hyp, env)
    rm = r_mcd(m, cfg)
    rwm = combine_wer_mcd(rw, rm, cfg.gamma)
    lc, ls = schedule_lambdas(step, cfg)
    return RewardBreakdown(w, s, m, rw, rm, s, rwm, total_reward(rwm, s, lc, ls), hyp)
