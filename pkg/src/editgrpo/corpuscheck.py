"""Offline evaluation: greedy decoding on held-out prompts, scored with the
same reward pipeline used in training."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from . import policy as pol
from .errors import InvalidInputError
from .grpo import encode_prompt, policy_config_for
from .rewards import RewardConfig, RewardEnv, score_rollout
from .synthenv import encode
from .textedit import EditPrompt

ROW_FIELDS = ("index", "edit", "x_tar", "hypothesis", "w", "m", "s", "r_total")

TokenFn = Callable[[EditPrompt], Sequence[int]]


@dataclass(frozen=True)
class EvalReport:
    n_prompts: int
    mean_wer: float
    median_wer: float
    mean_mcd: float  # over prompts that have an unedited region; nan if none
    mean_sim: float
    rows: tuple[dict, ...]

    @classmethod
    def from_rows(cls, rows: Sequence[dict]) -> EvalReport:
        if not rows:
            raise InvalidInputError("no evaluation rows")
        w = np.array([r["w"] for r in rows])
        mcds = [r["m"] for r in rows if r["m"] is not None]
        return cls(
            n_prompts=len(rows),
            mean_wer=float(w.mean()),
            median_wer=float(np.median(w)),
            mean_mcd=float(np.mean(mcds)) if mcds else math.nan,
            mean_sim=float(np.mean([r["s"] for r in rows])),
            rows=tuple(rows),
        )

    def summary(self) -> dict:
        return {
            "n_prompts": self.n_prompts,
            "mean_wer": self.mean_wer,
            "median_wer": self.median_wer,
            "mean_mcd": None if math.isnan(self.mean_mcd) else self.mean_mcd,
            "mean_sim": self.mean_sim,
        }

    def to_json(self) -> str:
        return json.dumps({**self.summary(), "rows": list(self.rows)}, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, stem: str = "eval") -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.csv`` under ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jp, cp = out / f"{stem}.json", out / f"{stem}.csv"
        jp.write_text(self.to_json())
        with open(cp, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=ROW_FIELDS, lineterminator="\n")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({k: ("" if r[k] is None else r[k]) for k in ROW_FIELDS})
        return jp, cp


def greedy_policy(params: pol.PolicyParams, env: RewardEnv, max_len: int = 16) -> TokenFn:
    pcfg = policy_config_for(params)
    cfg = pol.SamplingConfig(temperature=1.0, top_p=1.0, top_k=1, max_len=max_len)

    def run(prompt: EditPrompt):
        enc = encode_prompt(prompt, env.spec, pcfg)
        # greedy decoding never consumes randomness
        return pol.sample_sequence(params, enc, cfg, np.random.default_rng(0)).speech_tokens

    return run


def oracle_policy(env: RewardEnv) -> TokenFn:
    """Emits the target text's own tokens: the best any policy can do."""
    return lambda prompt: encode(prompt.x_tar, env.spec)


def evaluate(
    checkpoint: Union[pol.PolicyParams, TokenFn],
    prompts: Sequence[EditPrompt],
    env: RewardEnv,
    cfg: RewardConfig = RewardConfig(),
    *,
    max_len: int = 16,
    workers: int = 1,
) -> EvalReport:
    """Score ``checkpoint`` on ``prompts`` with the final-phase reward weights.

    ``checkpoint`` is either policy parameters (decoded greedily) or a
    function mapping a prompt to speech tokens.
    """
    if not prompts:
        raise InvalidInputError("no evaluation prompts")
    if isinstance(checkpoint, pol.PolicyParams):
        if checkpoint.vocab_size != env.spec.vocab_size:
            raise InvalidInputError(
                f"checkpoint vocabulary {checkpoint.vocab_size} does not match "
                f"environment vocabulary {env.spec.vocab_size}"
            )
        fn = greedy_policy(checkpoint, env, max_len)
    elif callable(checkpoint):
        fn = checkpoint
    else:
        raise InvalidInputError("checkpoint must be PolicyParams or a callable")
    final_step = cfg.lambda_schedule[-1][0]

    def one(item):
        i, prompt = item
        rb = score_rollout(prompt, tuple(fn(prompt)), env, cfg, final_step)
        return {
            "index": i,
            "edit": prompt.op.kind,
            "x_tar": str(prompt.x_tar),
            "hypothesis": " ".join(rb.hypothesis),
            "w": rb.w,
            "m": rb.m,
            "s": rb.s,
            "r_total": rb.r_total,
        }

    items = list(enumerate(prompts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(one, items))
    else:
        rows = [one(it) for it in items]
    return EvalReport.from_rows(rows)
