"""Group-relative policy optimization over editing prompts."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import policy as pol
from .errors import InvalidInputError
from .rewards import RewardBreakdown, RewardConfig, RewardEnv, schedule_lambdas, score_rollout
from .synthenv import SynthSpec, encode
from .textedit import EditPrompt

METRIC_FIELDS = (
    "step", "mean_reward", "mean_wer", "mean_mcd", "mean_sim",
    "mean_kl", "clip_frac", "lambda_c", "lambda_s",
)
ROLLOUT_FIELDS = ("step", "rollout", "w", "s", "m", "r_wer", "r_mcd", "r_sim", "r_total")


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 4
    clip_eps: float = 0.2
    kl_coeff: float = 0.001
    adv_eps: float = 1e-8
    learning_rate: float = 1e-3
    steps: int = 200
    batch_prompts: int = 8
    sampling: pol.SamplingConfig = pol.SamplingConfig()
    reward: RewardConfig = RewardConfig()
    seed: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise InvalidInputError("group_size must be >= 2")
        # inf switches clipping off entirely
        if not (0.0 < self.clip_eps < 1.0 or self.clip_eps == math.inf):
            raise InvalidInputError("clip_eps must lie in (0, 1) or be inf")
        if self.kl_coeff < 0 or self.adv_eps <= 0 or self.learning_rate < 0:
            raise InvalidInputError("kl_coeff, adv_eps and learning_rate out of range")
        if self.steps < 0 or self.batch_prompts < 1:
            raise InvalidInputError("steps must be >= 0 and batch_prompts >= 1")


def derive_seed(root: int, *tags) -> int:
    """Child seed from a root seed and role tags, independent of global state."""
    h = hashlib.blake2b(repr((int(root),) + tags).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def group_advantages(rewards: Sequence[float], eps: float = 1e-8) -> np.ndarray:
    """``(r - mean) / (std + eps)`` with the population standard deviation."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise InvalidInputError("need at least two rewards per group")
    centered = r - r.mean()
    adv = centered / (r.std() + eps)
    return adv - adv.mean()


def clipped_term(rho: float, advantage: float, clip_eps: float) -> float:
    if rho <= 0:
        raise InvalidInputError("importance ratio must be positive")
    return min(rho * advantage, float(np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps)) * advantage)


def kl_term(p, q) -> float:
    """Exact categorical ``KL(p || q)``.

    Rows of 2-D inputs are per-position distributions; the result is then
    the mean KL over positions.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim not in (1, 2):
        raise InvalidInputError("p and q must share a 1-D or 2-D shape")
    for name, d in (("p", p), ("q", q)):
        if np.any(d <= 0) or np.any(np.abs(d.sum(axis=-1) - 1.0) > 1e-9):
            raise InvalidInputError(f"{name} must be strictly positive and sum to 1")
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=-1)))


def mean_kl(policy_log_probs: np.ndarray, ref_log_probs: np.ndarray) -> float:
    """Per-position KL averaged over the positions of one sequence."""
    p = np.exp(policy_log_probs)
    return float(np.mean((p * (policy_log_probs - ref_log_probs)).sum(axis=1)))


def encode_prompt(prompt: EditPrompt, spec: SynthSpec, pcfg: pol.PolicyConfig) -> pol.PromptEncoding:
    return pol.PromptEncoding.build(encode(prompt.x_ori, spec), encode(prompt.x_tar, spec), prompt.tokens_ori, pcfg)


def policy_config_for(params: pol.PolicyParams) -> pol.PolicyConfig:
    return pol.PolicyConfig(
        vocab_size=params.vocab_size,
        embed_dim=params.token_embeddings.shape[1],
        hidden_dim=params.hidden_bias.shape[0],
        window=params.window,
    )


@dataclass
class GroupBatch:
    prompt: EditPrompt
    encoding: pol.PromptEncoding
    rollouts: list[pol.Rollout]
    rewards: list[RewardBreakdown]
    advantages: np.ndarray
    windows: list[np.ndarray] = field(default_factory=list)
    ref_log_probs: list[np.ndarray] = field(default_factory=list)


def collect_group(
    old_params: pol.PolicyParams,
    ref_params: pol.PolicyParams,
    prompt: EditPrompt,
    env: RewardEnv,
    cfg: GrpoConfig,
    step: int,
    rng: np.random.Generator,
) -> GroupBatch:
    """Sample ``G`` rollouts from the rollout policy, score them, normalize."""
    enc = encode_prompt(prompt, env.spec, policy_config_for(old_params))
    rollouts, rewards = [], []
    for _ in range(cfg.group_size):
        ro = pol.sample_sequence(old_params, enc, cfg.sampling, rng)
        try:
            rb = score_rollout(prompt, ro.speech_tokens, env, cfg.reward, step)
        except Exception as e:
            raise RuntimeError(f"scoring failed for prompt {str(prompt.x_tar)!r}: {e}") from e
        rollouts.append(ro)
        rewards.append(rb)
    adv = group_advantages([r.r_total for r in rewards], cfg.adv_eps)
    batch = GroupBatch(prompt, enc, rollouts, rewards, adv)
    for ro in rollouts:
        win = pol.teacher_windows(old_params, enc, ro.tokens)
        batch.windows.append(win)
        batch.ref_log_probs.append(pol.log_distributions(ref_params, win))
    return batch


def surrogate_batch(groups: Sequence[GroupBatch]) -> pol.SurrogateBatch:
    """Flatten groups so every position carries weight ``1 / (B * G * T_i)``."""
    n_groups = len(groups)
    wins, tgts, advs, olds, refs, wts = [], [], [], [], [], []
    for g in groups:
        G = len(g.rollouts)
        for ro, a, win, ref in zip(g.rollouts, g.advantages, g.windows, g.ref_log_probs):
            T = len(ro)
            wins.append(win)
            tgts.append(np.asarray(ro.tokens, dtype=np.int64))
            advs.append(np.full(T, a))
            olds.append(ro.log_probs)
            refs.append(ref)
            wts.append(np.full(T, 1.0 / (n_groups * G * T)))
    return pol.SurrogateBatch(
        np.concatenate(wins), np.concatenate(tgts), np.concatenate(advs),
        np.concatenate(olds), np.concatenate(refs), np.concatenate(wts),
    )


def policy_gradient(params: pol.PolicyParams, groups: Sequence[GroupBatch], cfg: GrpoConfig):
    """Objective value, its gradient w.r.t. ``params`` and batch statistics."""
    return pol.surrogate_objective(params, surrogate_batch(groups), cfg.clip_eps, cfg.kl_coeff)


def grpo_step(
    actor: pol.PolicyParams,
    ref: pol.PolicyParams,
    prompts: Sequence[EditPrompt],
    env: RewardEnv,
    cfg: GrpoConfig,
    step: int,
    optimizer: pol.Adam,
    rng: Optional[np.random.Generator] = None,
):
    """One rollout-then-update step.

    ``actor`` doubles as the rollout snapshot, so the update is a single
    gradient step taken at the trust-region center.

    Returns:
        ``(new_params, metrics, groups)``.
    """
    if rng is None:
        rng = np.random.default_rng(derive_seed(cfg.seed, "rollout", step))
    groups = [collect_group(actor, ref, p, env, cfg, step, rng) for p in prompts]
    objective, grads, stats = policy_gradient(actor, groups, cfg)
    new = optimizer.step(actor, {k: -g for k, g in grads.items()})
    rb = [r for g in groups for r in g.rewards]
    mcds = [r.m for r in rb if r.m is not None]
    lc, ls = schedule_lambdas(step, cfg.reward)
    metrics = {
        "step": step,
        "mean_reward": float(np.mean([r.r_total for r in rb])),
        "mean_wer": float(np.mean([r.w for r in rb])),
        "mean_mcd": float(np.mean(mcds)) if mcds else float("nan"),
        "mean_sim": float(np.mean([r.s for r in rb])),
        "mean_kl": stats["kl"],
        "clip_frac": stats["clip_frac"],
        "lambda_c": lc,
        "lambda_s": ls,
    }
    return new, metrics, groups


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def train(
    cfg: GrpoConfig,
    prompts: Sequence[EditPrompt],
    ref: pol.PolicyParams,
    env: RewardEnv,
    out_dir=None,
    log=None,
):
    """Run ``cfg.steps`` GRPO steps starting from the reference policy.

    Writes ``checkpoints/policy.ckpt``, ``metrics.csv`` and ``rollouts.csv``
    under ``out_dir`` when given.

    Returns:
        ``(final_params, metrics_rows)``.
    """
    if not prompts:
        raise InvalidInputError("no training prompts")
    actor = ref
    opt = pol.Adam(lr=cfg.learning_rate)
    order_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    order = order_rng.permutation(len(prompts))
    cursor = 0
    rows, rollout_rows = [], []
    for step in range(cfg.steps):
        batch = []
        while len(batch) < min(cfg.batch_prompts, len(prompts)):
            if cursor == len(order):
                order, cursor = order_rng.permutation(len(prompts)), 0
            batch.append(prompts[order[cursor]])
            cursor += 1
        actor, metrics, groups = grpo_step(actor, ref, batch, env, cfg, step, opt)
        rows.append(metrics)
        k = 0
        for g in groups:
            for r in g.rewards:
                rollout_rows.append({"step": step, "rollout": k, **r.row()})
                k += 1
        if log is not None:
            log(metrics)
    if out_dir is not None:
        out = Path(out_dir)
        pol.save_checkpoint(out / "checkpoints" / "policy.ckpt", actor, {"kind": "grpo", "steps": cfg.steps})
        write_csv(out / "metrics.csv", METRIC_FIELDS, rows)
        write_csv(out / "rollouts.csv", ROLLOUT_FIELDS, rollout_rows)
    return actor, rows


def write_csv(path, fieldnames, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in fieldnames})
