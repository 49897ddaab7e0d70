"""Command-line entry point.

Every command writes into its own run directory::

    <out>/manifest.json     written first, completed at the end
    <out>/metrics.csv       (train)
    <out>/checkpoints/      (pretrain, train)
    <out>/reports/          (pretrain loss curve, eval reports)

``replay`` re-executes a command from its manifest alone.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as config_mod, corpuscheck, grpo, policy as pol, synthenv, textedit
from .errors import InvalidInputError
from .rewards import RewardEnv

log = logging.getLogger("editgrpo")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Run:
    """Run directory plus its manifest."""

    def __init__(self, out, command, args, cfg, seeds, inputs):
        for p in inputs.values():
            if not Path(p).exists():
                raise FileNotFoundError(f"input not found: {p}")
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "manifest.json"
        self.manifest = {
            "command": command,
            "args": args,
            "config": config_mod.to_dict(cfg),
            "seeds": seeds,
            "inputs": {k: {"path": str(Path(p).resolve()), "sha256": file_hash(p)} for k, p in inputs.items()},
            "outputs": {},
            "status": "running",
            "started_at": _now(),
            "finished_at": None,
        }
        self._write()

    def _write(self):
        self.path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")

    def finish(self, outputs):
        self.manifest["outputs"] = {
            str(Path(p).relative_to(self.dir)): file_hash(p) for p in sorted(map(Path, outputs))
        }
        self.manifest["status"] = "complete"
        self.manifest["finished_at"] = _now()
        self._write()


def _prompt_file(path) -> Path:
    p = Path(path)
    return p / "prompts_train.jsonl" if p.is_dir() else p


def _edit_histogram(prompts):
    hist = {k: 0 for k in textedit.EDIT_KINDS}
    for p in prompts:
        hist[p.op.kind] += 1
    return hist


def gen_corpus(n, seed, out, cfg: config_mod.RunConfig):
    if n < 1:
        raise UsageError("--n must be >= 1")
    heldout = cfg.corpus.heldout
    if heldout >= n:
        raise UsageError(f"held-out size {heldout} leaves no training prompts out of {n}")
    seeds = {"corpus": seed, "prompts": grpo.derive_seed(seed, "prompts")}
    run = Run(out, "gen-corpus", {"n": n, "seed": seed}, cfg, seeds, {})
    spec = cfg.env
    pairs = synthenv.make_corpus(n, spec, seed)
    rng = np.random.default_rng(seeds["prompts"])
    lex = synthenv.lexicon(spec.vocab_size)
    prompts = [
        textedit.synth_prompt(p.transcript, p.tokens, rng, lex, seed=p.seed, speaker_id=p.speaker_id) for p in pairs
    ]
    n_train = n - heldout
    files = {
        "corpus": run.dir / "corpus.jsonl",
        "train": run.dir / "prompts_train.jsonl",
        "heldout": run.dir / "prompts_heldout.jsonl",
        "meta": run.dir / "corpus_meta.json",
    }
    synthenv.write_corpus(files["corpus"], pairs)
    textedit.write_prompts(files["train"], prompts[:n_train])
    textedit.write_prompts(files["heldout"], prompts[n_train:])
    meta = {
        "n": n,
        "seed": seed,
        "split": {"train": [0, n_train], "heldout": [n_train, n]},
        "edit_kinds": _edit_histogram(prompts),
        "env": synthenv.spec_to_dict(spec),
    }
    files["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    run.finish(files.values())
    log.info("wrote %d train and %d held-out prompts to %s", n_train, heldout, run.dir)
    return run


def pretrain(corpus, out, cfg: config_mod.RunConfig, steps=None):
    src = _prompt_file(corpus)
    pc = cfg.pretrain
    n_steps = pc.steps if steps is None else steps
    if n_steps < 0:
        raise UsageError("--steps must be >= 0")
    seeds = {"init": cfg.policy.init_seed, "batches": grpo.derive_seed(cfg.seed, "pretrain")}
    run = Run(out, "pretrain", {"corpus": str(src), "steps": n_steps}, cfg, seeds, {"corpus": src})
    prompts = textedit.read_prompts(src)
    spec = cfg.env
    examples = [(grpo.encode_prompt(p, spec, cfg.policy), synthenv.encode(p.x_tar, spec)) for p in prompts]
    params = pol.PolicyParams.init(cfg.policy)
    params, losses = pol.pretrain(
        params, examples, n_steps, pc.learning_rate, pc.batch_size,
        np.random.default_rng(seeds["batches"]), pc.loss_threshold,
    )
    ckpt = run.dir / "checkpoints" / "reference.ckpt"
    meta = {
        "kind": "reference",
        "steps_run": len(losses),
        "final_loss": losses[-1] if losses else None,
        "env": synthenv.spec_to_dict(spec),
    }
    pol.save_checkpoint(ckpt, params, meta)
    loss_csv = run.dir / "reports" / "pretrain_loss.csv"
    grpo.write_csv(loss_csv, ("step", "loss"), [{"step": i, "loss": v} for i, v in enumerate(losses)])
    run.finish([ckpt, ckpt.with_suffix(".json"), loss_csv])
    log.info("pretrained %d steps, final loss %s", len(losses), meta["final_loss"])
    return run


def _load_policy(path, cfg: config_mod.RunConfig) -> pol.PolicyParams:
    params, _ = pol.load_checkpoint(path)
    if params.vocab_size != cfg.env.vocab_size:
        raise InvalidInputError(
            f"checkpoint {path} has vocabulary {params.vocab_size}, config expects {cfg.env.vocab_size}"
        )
    return params


def train(prompts_path, ref_path, out, cfg: config_mod.RunConfig):
    src = _prompt_file(prompts_path)
    seeds = {"grpo": cfg.grpo.seed}
    run = Run(out, "train", {"prompts": str(src), "ref": str(ref_path)}, cfg, seeds,
              {"prompts": src, "ref": ref_path})
    prompts = textedit.read_prompts(src)
    ref = _load_policy(ref_path, cfg)
    env = RewardEnv(cfg.env)

    def progress(m):
        if m["step"] % 10 == 0 or m["step"] == cfg.grpo.steps - 1:
            log.info("step %d reward %.4f wer %.3f kl %.5f", m["step"], m["mean_reward"], m["mean_wer"], m["mean_kl"])

    grpo.train(cfg.grpo, prompts, ref, env, out_dir=run.dir, log=progress)
    ckpt = run.dir / "checkpoints" / "policy.ckpt"
    run.finish([ckpt, ckpt.with_suffix(".json"), run.dir / "metrics.csv", run.dir / "rollouts.csv"])
    return run


def evaluate(ckpt_path, prompts_path, out, cfg: config_mod.RunConfig, workers=1):
    src = Path(prompts_path)
    run = Run(out, "eval", {"checkpoint": str(ckpt_path), "prompts": str(src)}, cfg, {},
              {"checkpoint": ckpt_path, "prompts": src})
    params = _load_policy(ckpt_path, cfg)
    prompts = textedit.read_prompts(src)
    report = corpuscheck.evaluate(
        params, prompts, RewardEnv(cfg.env), cfg.grpo.reward, max_len=cfg.grpo.sampling.max_len, workers=workers
    )
    paths = report.write(run.dir / "reports")
    run.finish(paths)
    log.info("eval: %s", json.dumps(report.summary()))
    return run


def replay(manifest_path, out, workers=1):
    """Re-run a command with the configuration and inputs its manifest records."""
    m = json.loads(Path(manifest_path).read_text())
    for name, rec in m["inputs"].items():
        p = Path(rec["path"])
        if not p.exists():
            raise FileNotFoundError(f"replay input {name!r} missing: {p}")
        if file_hash(p) != rec["sha256"]:
            raise InvalidInputError(f"replay input {name!r} changed since the run: {p}")
    cfg = config_mod.from_dict(m["config"])
    a, inp = m["args"], {k: v["path"] for k, v in m["inputs"].items()}
    cmd = m["command"]
    if cmd == "gen-corpus":
        return gen_corpus(a["n"], a["seed"], out, cfg)
    if cmd == "pretrain":
        return pretrain(inp["corpus"], out, cfg, a["steps"])
    if cmd == "train":
        return train(inp["prompts"], inp["ref"], out, cfg)
    if cmd == "eval":
        return evaluate(inp["checkpoint"], inp["prompts"], out, cfg, workers)
    raise InvalidInputError(f"manifest has unknown command {cmd!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="editgrpo", description="Editing-oriented GRPO on a synthetic speech environment.")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-corpus", help="synthesize a corpus and editing prompts")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--config")

    t = sub.add_parser("pretrain", help="supervised pretraining of the reference policy")
    t.add_argument("--corpus", required=True, help="prompts JSONL or a gen-corpus run directory")
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--steps", type=int)

    r = sub.add_parser("train", help="GRPO training from a reference checkpoint")
    r.add_argument("--prompts", required=True)
    r.add_argument("--ref", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--config")

    e = sub.add_parser("eval", help="greedy evaluation on held-out prompts")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--prompts", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")

    rp = sub.add_parser("replay", help="re-run a command from its manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True)
    return p


def _set_threads(n: int) -> int:
    # the numba kernels are serial, so the cap only applies to thread pools
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        workers = _set_threads(args.threads)
        if args.command == "replay":
            replay(args.manifest, args.out, workers)
            return EXIT_OK
        try:
            cfg = config_mod.load(args.config)
        except InvalidInputError as e:
            raise UsageError(f"bad config {args.config}: {e}") from None
        if args.command == "gen-corpus":
            gen_corpus(args.n, args.seed, args.out, cfg)
        elif args.command == "pretrain":
            pretrain(args.corpus, args.out, cfg, args.steps)
        elif args.command == "train":
            train(args.prompts, args.ref, args.out, cfg)
        elif args.command == "eval":
            evaluate(args.checkpoint, args.prompts, args.out, cfg, workers)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"editgrpo: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError) as e:
        print(f"editgrpo: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
