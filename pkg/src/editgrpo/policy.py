"""Toy autoregressive token policy with exact log-probabilities.

The network reads a fixed-width window of token ids, concatenates their
embeddings, applies one tanh layer and a softmax over the speech tokens plus
end-of-sequence. Gradients are written out by hand.

Window layout for output position ``t`` (``W`` slots)::

    [tar[t-1], tar[t], tar[t+1], ori[t], h[-1], h[-2], ..., h[-(W-4)]]

``tar``/``ori`` are the target and original text ids (PAD outside the text)
and ``h[-k]`` is the k-th most recent token of the full sequence
``[S, X_ori, X_tar, mu_ori, T, z_<t]``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

TEXT_SLOTS = 4  # tar[t-1], tar[t], tar[t+1], ori[t]
PARAM_NAMES = ("token_embeddings", "context_weights", "hidden_bias", "output_projection", "output_bias")
_MAGIC = b"EGCKPT01"


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int = 16
    embed_dim: int = 16
    hidden_dim: int = 32
    window: int = 8
    init_seed: int = 0

    def __post_init__(self):
        if self.window <= TEXT_SLOTS:
            raise InvalidInputError(f"window must exceed {TEXT_SLOTS}")
        if min(self.vocab_size, self.embed_dim, self.hidden_dim) < 1:
            raise InvalidInputError("policy dimensions must be positive")

    @property
    def eos(self) -> int:
        return self.vocab_size

    @property
    def bos(self) -> int:
        return self.vocab_size + 1

    @property
    def turn(self) -> int:
        return self.vocab_size + 2

    @property
    def pad(self) -> int:
        return self.vocab_size + 3

    @property
    def n_out(self) -> int:
        """Emittable symbols: speech tokens and end-of-sequence."""
        return self.vocab_size + 1

    @property
    def n_in(self) -> int:
        return self.vocab_size + 4


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.8
    top_p: float = 0.95
    top_k: int = 25
    max_len: int = 16

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidInputError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise InvalidInputError("top_p must lie in (0, 1]")
        if self.top_k < 1 or self.max_len < 1:
            raise InvalidInputError("top_k and max_len must be >= 1")


GREEDY = SamplingConfig(temperature=1.0, top_p=1.0, top_k=1)


@dataclass(frozen=True)
class PolicyParams:
    token_embeddings: np.ndarray
    context_weights: np.ndarray
    hidden_bias: np.ndarray
    output_projection: np.ndarray
    output_bias: np.ndarray

    @classmethod
    def init(cls, cfg: PolicyConfig, seed: int | None = None) -> PolicyParams:
        rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
        scale = 0.1 / np.sqrt(cfg.embed_dim)
        u = lambda *shape: rng.uniform(-scale, scale, size=shape)  # noqa: E731
        return cls(
            u(cfg.n_in, cfg.embed_dim),
            u(cfg.window * cfg.embed_dim, cfg.hidden_dim),
            np.zeros(cfg.hidden_dim),
            u(cfg.hidden_dim, cfg.n_out),
            np.zeros(cfg.n_out),
        )

    @classmethod
    def zeros(cls, cfg: PolicyConfig) -> PolicyParams:
        return cls(
            np.zeros((cfg.n_in, cfg.embed_dim)),
            np.zeros((cfg.window * cfg.embed_dim, cfg.hidden_dim)),
            np.zeros(cfg.hidden_dim),
            np.zeros((cfg.hidden_dim, cfg.n_out)),
            np.zeros(cfg.n_out),
        )

    def __post_init__(self):
        for f in fields(self):
            a = np.array(getattr(self, f.name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{f.name} has non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, f.name, a)
        d = self.token_embeddings.shape[1]
        if self.context_weights.shape[0] % d or self.context_weights.shape[1] != self.hidden_bias.shape[0]:
            raise InvalidInputError("context weights do not match embedding/hidden sizes")
        if self.output_projection.shape != (self.hidden_bias.shape[0], self.output_bias.shape[0]):
            raise InvalidInputError("output projection shape mismatch")

    @property
    def window(self) -> int:
        return self.context_weights.shape[0] // self.token_embeddings.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.output_bias.shape[0] - 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def replace(self, **arrays) -> PolicyParams:
        d = self.arrays()
        d.update(arrays)
        return PolicyParams(**d)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def from_flat(self, v: np.ndarray) -> PolicyParams:
        out, k = {}, 0
        for n, a in self.arrays().items():
            out[n] = np.asarray(v[k : k + a.size]).reshape(a.shape)
            k += a.size
        return PolicyParams(**out)

    def distance(self, other: PolicyParams) -> float:
        return float(np.linalg.norm(self.flat() - other.flat()))


@dataclass(frozen=True)
class PromptEncoding:
    """``[S, X_ori, X_tar, mu_ori, T]`` plus the text ids used by the window."""

    sequence: np.ndarray
    ori_ids: np.ndarray
    tar_ids: np.ndarray

    @classmethod
    def build(cls, ori_ids: Sequence[int], tar_ids: Sequence[int], mu_ori: Sequence[int], cfg: PolicyConfig):
        ori = np.asarray(ori_ids, dtype=np.int64)
        tar = np.asarray(tar_ids, dtype=np.int64)
        mu = np.asarray(mu_ori, dtype=np.int64)
        for a in (ori, tar, mu):
            if a.size and (a.min() < 0 or a.max() >= cfg.vocab_size):
                raise InvalidInputError("prompt ids outside the vocabulary")
        seq = np.concatenate([[cfg.bos], ori, tar, mu, [cfg.turn]]).astype(np.int64)
        return cls(seq, ori, tar)


@dataclass(frozen=True)
class Rollout:
    tokens: tuple[int, ...]
    log_probs: np.ndarray
    eos: int

    @property
    def speech_tokens(self) -> tuple[int, ...]:
        return tuple(t for t in self.tokens if t != self.eos)

    def __len__(self):
        return len(self.tokens)


def _pad_take(ids: np.ndarray, idx: np.ndarray, pad: int) -> np.ndarray:
    ok = (idx >= 0) & (idx < ids.shape[0])
    out = np.full(idx.shape, pad, dtype=np.int64)
    out[ok] = ids[idx[ok]]
    return out


def windows(prompt: PromptEncoding, generated: Sequence[int], n_positions: int, window: int, pad: int) -> np.ndarray:
    """Context windows for output positions ``0..n_positions-1``."""
    t = np.arange(n_positions)
    cols = [
        _pad_take(prompt.tar_ids, t - 1, pad),
        _pad_take(prompt.tar_ids, t, pad),
        _pad_take(prompt.tar_ids, t + 1, pad),
        _pad_take(prompt.ori_ids, t, pad),
    ]
    full = np.concatenate([prompt.sequence, np.asarray(generated, dtype=np.int64)])
    base = prompt.sequence.shape[0]
    for k in range(1, window - TEXT_SLOTS + 1):
        cols.append(_pad_take(full, base + t - k, pad))
    return np.stack(cols, axis=1)


def _forward(params: PolicyParams, win: np.ndarray):
    x = params.token_embeddings[win].reshape(win.shape[0], -1)
    h = np.tanh(x @ params.context_weights + params.hidden_bias)
    logits = h @ params.output_projection + params.output_bias
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return x, h, logp


def _backward(params: PolicyParams, win, x, h, dlogits) -> dict[str, np.ndarray]:
    dh = dlogits @ params.output_projection.T
    da = dh * (1.0 - h * h)
    dx = (da @ params.context_weights.T).reshape(win.shape[0], win.shape[1], -1)
    d_emb = np.zeros_like(params.token_embeddings)
    np.add.at(d_emb, win, dx)
    return {
        "token_embeddings": d_emb,
        "context_weights": x.T @ da,
        "hidden_bias": da.sum(axis=0),
        "output_projection": h.T @ dlogits,
        "output_bias": dlogits.sum(axis=0),
    }


def log_distributions(params: PolicyParams, win: np.ndarray) -> np.ndarray:
    """Log-probabilities over emittable symbols for each window row."""
    return _forward(params, np.atleast_2d(win))[2]


def next_distribution(params: PolicyParams, window_ids: Sequence[int]) -> np.ndarray:
    win = np.asarray(window_ids, dtype=np.int64)
    if win.size == 0:
        raise InvalidInputError("context must be non-empty")
    return np.exp(log_distributions(params, win[None, :])[0])


def truncate(probs: np.ndarray, top_k: int, top_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Top-k then nucleus truncation; returns kept ids and renormalized probs."""
    order = np.argsort(-probs, kind="stable")[:top_k]
    cum = np.cumsum(probs[order])
    n_keep = min(order.size, int(np.searchsorted(cum, top_p, side="left")) + 1)
    keep = order[:n_keep]
    q = probs[keep]
    return keep, q / q.sum()


def sample_sequence(
    params: PolicyParams,
    prompt: PromptEncoding,
    cfg: SamplingConfig,
    rng: np.random.Generator,
) -> Rollout:
    """Sample until end-of-sequence or ``cfg.max_len`` tokens.

    The stored log-probabilities come from the untruncated, temperature-1
    distribution, so importance ratios stay defined off the sampled support.
    """
    eos = params.vocab_size
    pad = eos + 3
    w = params.window
    tokens: list[int] = []
    logps = []
    for t in range(cfg.max_len):
        win = windows(prompt, tokens, t + 1, w, pad)[t : t + 1]
        x = params.token_embeddings[win].reshape(1, -1)
        h = np.tanh(x @ params.context_weights + params.hidden_bias)
        logits = (h @ params.output_projection + params.output_bias)[0]
        z = logits - logits.max()
        logp = z - np.log(np.exp(z).sum())
        zt = z / cfg.temperature
        pt = np.exp(zt - zt.max())
        pt /= pt.sum()
        keep, q = truncate(pt, cfg.top_k, cfg.top_p)
        if keep.size == 1:
            tok = int(keep[0])
        else:
            tok = int(keep[min(int(np.searchsorted(np.cumsum(q), rng.random(), side="right")), keep.size - 1)])
        tokens.append(tok)
        logps.append(logp[tok])
        if tok == eos:
            break
    return Rollout(tuple(tokens), np.array(logps), eos)


def sequence_log_prob(params: PolicyParams, prompt: PromptEncoding, tokens: Sequence[int]) -> tuple[float, np.ndarray]:
    """Total and per-token log-probability of ``tokens`` under ``params``."""
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.size and (toks.min() < 0 or toks.max() > params.vocab_size):
        raise InvalidInputError("token outside the policy's output vocabulary")
    win = windows(prompt, toks, toks.size, params.window, params.vocab_size + 3)
    logp = _forward(params, win)[2]
    per = logp[np.arange(toks.size), toks]
    return float(per.sum()), per


def teacher_windows(params: PolicyParams, prompt: PromptEncoding, tokens: Sequence[int]) -> np.ndarray:
    toks = np.asarray(tokens, dtype=np.int64)
    return windows(prompt, toks, toks.size, params.window, params.vocab_size + 3)


def nll_loss_and_grad(params: PolicyParams, batch: Sequence[tuple[PromptEncoding, Sequence[int]]]):
    """Next-token loss over target tokens followed by end-of-sequence.

    Each sequence is normalized by its length including end-of-sequence and
    the batch is averaged.

    Returns:
        ``(loss, grads)`` with ``grads`` keyed like ``PolicyParams.arrays()``.
    """
    if not batch:
        raise InvalidInputError("empty batch")
    eos = params.vocab_size
    wins, targets, weights = [], [], []
    for prompt, target in batch:
        full = list(target) + [eos]
        wins.append(teacher_windows(params, prompt, full))
        targets.append(full)
        weights.append(np.full(len(full), 1.0 / (len(full) * len(batch))))
    win = np.concatenate(wins)
    tgt = np.concatenate(targets).astype(np.int64)
    wt = np.concatenate(weights)
    x, h, logp = _forward(params, win)
    rows = np.arange(tgt.size)
    loss = float(-(wt * logp[rows, tgt]).sum())
    dlogits = np.exp(logp)
    dlogits[rows, tgt] -= 1.0
    dlogits *= wt[:, None]
    return loss, _backward(params, win, x, h, dlogits)


@dataclass
class SurrogateBatch:
    """Flattened per-position inputs to the clipped surrogate."""

    windows: np.ndarray
    targets: np.ndarray
    advantages: np.ndarray
    old_log_probs: np.ndarray
    ref_log_probs: np.ndarray
    weights: np.ndarray


def surrogate_objective(params: PolicyParams, b: SurrogateBatch, clip_eps: float, kl_coeff: float, need_grad=True):
    """Weighted sum over positions of ``min(rho*A, clip(rho)*A) - beta*KL``.

    Returns ``(objective, grads_of_objective, stats)``; ``grads`` is ``None``
    when ``need_grad`` is false. ``stats`` holds the weighted KL, the clipped
    fraction and the raw ratios.
    """
    x, h, logp = _forward(params, b.windows)
    rows = np.arange(b.targets.size)
    lp = logp[rows, b.targets]
    rho = np.exp(lp - b.old_log_probs)
    clipped = np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_term = rho * b.advantages
    clipped_term = clipped * b.advantages
    term = np.minimum(unclipped_term, clipped_term)
    p = np.exp(logp)
    log_ratio = logp - b.ref_log_probs
    kl = (p * log_ratio).sum(axis=1)
    objective = float((b.weights * (term - kl_coeff * kl)).sum())
    stats = {
        "kl": float((b.weights * kl).sum() / b.weights.sum()),
        "clip_frac": float(np.mean(clipped_term < unclipped_term)),
        "rho": rho,
    }
    if not need_grad:
        return objective, None, stats
    active = unclipped_term <= clipped_term
    coef = b.weights * np.where(active, b.advantages * rho, 0.0)
    dlogits = -p * coef[:, None]
    dlogits[rows, b.targets] += coef
    dlogits -= (kl_coeff * b.weights)[:, None] * p * (log_ratio - kl[:, None])
    return objective, _backward(params, b.windows, x, h, dlogits), stats


def surrogate_grad(
    params: PolicyParams,
    prompt: PromptEncoding,
    tokens: Sequence[int],
    advantage: float,
    old_log_probs: np.ndarray,
    ref_log_probs: np.ndarray,
    clip_eps: float,
    kl_coeff: float,
):
    """Objective and gradient of one rollout's term, normalized by its length."""
    win = teacher_windows(params, prompt, tokens)
    n = win.shape[0]
    b = SurrogateBatch(
        win,
        np.asarray(tokens, dtype=np.int64),
        np.full(n, float(advantage)),
        np.asarray(old_log_probs, dtype=np.float64),
        np.asarray(ref_log_probs, dtype=np.float64),
        np.full(n, 1.0 / n),
    )
    obj, grads, _ = surrogate_objective(params, b, clip_eps, kl_coeff)
    return obj, grads


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: PolicyParams, grads: dict[str, np.ndarray]) -> PolicyParams:
        """Descend along ``grads`` and return new parameters."""
        self.t += 1
        out = {}
        for name, p in params.arrays().items():
            g = grads[name]
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            out[name] = p - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return PolicyParams(**out)


def save_checkpoint(path, params: PolicyParams, meta: dict | None = None) -> None:
    """Write tensors to ``path`` and a JSON sidecar next to it.

    Layout: 8-byte magic, u32 tensor count, then per tensor a u32 name
    length, UTF-8 name, u32 rank, u64 dims and little-endian float64 data.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        arrays = params.arrays()
        f.write(_MAGIC + struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)) + nb + struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    sidecar = {"tensors": {n: list(a.shape) for n, a in params.arrays().items()}}
    sidecar.update(meta or {})
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:8] != _MAGIC:
        raise InvalidInputError(f"{path} is not a policy checkpoint")
    (count,) = struct.unpack_from("<I", buf, 8)
    k = 12
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, k)
        k += 4
        name = buf[k : k + nlen].decode()
        k += nlen
        (ndim,) = struct.unpack_from("<I", buf, k)
        k += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, k)
        k += 8 * ndim
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=k).reshape(shape)
        k += 8 * size
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return PolicyParams(**arrays), meta


def pretrain(
    params: PolicyParams,
    examples: Sequence[tuple[PromptEncoding, Sequence[int]]],
    steps: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    loss_threshold: float | None = None,
) -> tuple[PolicyParams, list[float]]:
    """Supervised next-token training with Adam on random minibatches.

    Stops early once a minibatch loss falls below ``loss_threshold``.
    """
    if steps and not examples:
        raise InvalidInputError("no pretraining examples")
    opt = Adam(lr=lr)
    losses = []
    for _ in range(steps):
        idx = rng.choice(len(examples), size=min(batch_size, len(examples)), replace=False)
        loss, grads = nll_loss_and_grad(params, [examples[i] for i in idx])
        if not np.isfinite(loss):
            raise FloatingPointError(f"pretraining diverged at step {len(losses)} (loss={loss})")
        losses.append(loss)
        params = opt.step(params, grads)
        if loss_threshold is not None and loss < loss_threshold:
            break
    return params, losses
