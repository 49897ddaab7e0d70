"""Run configuration: one YAML file, one section per component."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InvalidInputError
from .grpo import GrpoConfig
from .policy import PolicyConfig, SamplingConfig
from .rewards import RewardConfig
from .synthenv import SynthSpec


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 30
    learning_rate: float = 0.01
    batch_size: int = 16
    loss_threshold: float | None = None

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise InvalidInputError("invalid pretraining settings")


@dataclass(frozen=True)
class CorpusConfig:
    heldout: int = 60

    def __post_init__(self):
        if self.heldout < 0:
            raise InvalidInputError("heldout must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    env: SynthSpec = SynthSpec()
    policy: PolicyConfig = PolicyConfig()
    pretrain: PretrainConfig = PretrainConfig()
    grpo: GrpoConfig = GrpoConfig()
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def __post_init__(self):
        if self.policy.vocab_size != self.env.vocab_size:
            raise InvalidInputError("policy.vocab_size must equal env.vocab_size")


def _section(data, section) -> dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidInputError(f"section {section!r} must be a mapping")
    return dict(data)


def _build(cls, data, section):
    data = _section(data, section)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InvalidInputError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kw = dict(data)
    for k, v in kw.items():
        if isinstance(v, list):
            kw[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return cls(**kw)


def from_dict(d: dict | None) -> RunConfig:
    d = _section(d, "top level")
    allowed = {"seed", "env", "policy", "pretrain", "grpo", "sampling", "reward", "corpus"}
    unknown = set(d) - allowed
    if unknown:
        raise InvalidInputError(f"unknown config sections: {sorted(unknown)}")
    seed = int(d.get("seed", 0))
    env = _build(SynthSpec, d.get("env"), "env")
    pol_d = _section(d.get("policy"), "policy")
    pol_d.setdefault("vocab_size", env.vocab_size)
    grpo_d = _section(d.get("grpo"), "grpo")
    grpo_d.setdefault("seed", seed)
    grpo_d["sampling"] = _build(SamplingConfig, d.get("sampling"), "sampling")
    grpo_d["reward"] = _build(RewardConfig, d.get("reward"), "reward")
    return RunConfig(
        seed=seed,
        env=env,
        policy=_build(PolicyConfig, pol_d, "policy"),
        pretrain=_build(PretrainConfig, d.get("pretrain"), "pretrain"),
        grpo=_build(GrpoConfig, grpo_d, "grpo"),
        corpus=_build(CorpusConfig, d.get("corpus"), "corpus"),
    )


def to_dict(cfg: RunConfig) -> dict:
    """Plain nested mapping that ``from_dict`` turns back into ``cfg``."""

    def plain(x):
        if dataclasses.is_dataclass(x):
            return {f.name: plain(getattr(x, f.name)) for f in dataclasses.fields(x)}
        if isinstance(x, (tuple, list)):
            return [plain(v) for v in x]
        return x

    grpo = plain(cfg.grpo)
    sampling = grpo.pop("sampling")
    reward = grpo.pop("reward")
    return {
        "seed": cfg.seed,
        "env": plain(cfg.env),
        "policy": plain(cfg.policy),
        "pretrain": plain(cfg.pretrain),
        "grpo": grpo,
        "sampling": sampling,
        "reward": reward,
        "corpus": plain(cfg.corpus),
    }


def load(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    return from_dict(yaml.safe_load(p.read_text()))


def dump(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
