from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from editgrpo import grpo as G, policy as pol
from editgrpo.errors import InvalidInputError
from editgrpo.rewards import RewardConfig


def test_config_validation():
    with pytest.raises(InvalidInputError):
        G.GrpoConfig(group_size=1)
    with pytest.raises(InvalidInputError):
        G.GrpoConfig(clip_eps=1.5)
    with pytest.raises(InvalidInputError):
        G.GrpoConfig(kl_coeff=-1)
    assert G.GrpoConfig(clip_eps=math.inf).clip_eps == math.inf
    c = G.GrpoConfig()
    assert (c.group_size, c.kl_coeff, c.clip_eps) == (4, 0.001, 0.2)


def test_group_advantages():
    np.testing.assert_array_equal(G.group_advantages([0.3] * 4), np.zeros(4))
    a = G.group_advantages([0.2, 0.4, 0.6, 0.8])
    np.testing.assert_allclose(a, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-3)
    with pytest.raises(InvalidInputError):
        G.group_advantages([1.0])


def test_group_advantage_properties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = rng.normal(size=rng.integers(2, 9)) * rng.uniform(0.01, 10)
        a = G.group_advantages(r, 1e-8)
        assert abs(a.sum()) <= 1e-12
        sd = r.std()
        assert a.std() == pytest.approx(sd / (sd + 1e-8), abs=1e-6)


@pytest.mark.parametrize(
    "rho,adv,expected",
    [(1.0, 0.37, 0.37), (1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (0.5, 1.0, 0.5), (1.5, -1.0, -1.5)],
)
def test_clipped_term_golden(rho, adv, expected):
    assert G.clipped_term(rho, adv, 0.2) == expected


def test_clipped_term_is_pessimistic():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        rho, adv = rng.uniform(0.01, 3), rng.normal()
        assert G.clipped_term(rho, adv, 0.2) <= rho * adv
    with pytest.raises(InvalidInputError):
        G.clipped_term(0.0, 1.0, 0.2)


def test_kl_term():
    assert G.kl_term([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert G.kl_term([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), rel=1e-12)
    assert G.kl_term([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.1438, abs=1e-4)
    rng = np.random.default_rng(2)
    for _ in range(1000):
        p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        assert G.kl_term(p, q) >= 0
    p = rng.dirichlet(np.ones(4), size=3)
    q = rng.dirichlet(np.ones(4), size=3)
    assert G.kl_term(p, q) == pytest.approx(np.mean([G.kl_term(a, b) for a, b in zip(p, q)]))
    with pytest.raises(InvalidInputError):
        G.kl_term([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(InvalidInputError):
        G.kl_term([1.0, 0.0], [0.5, 0.5])


def test_derive_seed():
    assert G.derive_seed(1, "a", 2) == G.derive_seed(1, "a", 2)
    assert len({G.derive_seed(1, "a", k) for k in range(100)}) == 100
    assert G.derive_seed(1, "a") != G.derive_seed(2, "a")


def _policy(spec, seed=0):
    return pol.PolicyParams.init(pol.PolicyConfig(vocab_size=spec.vocab_size, embed_dim=6, hidden_dim=8), seed)


def _noisy(p, seed, scale=0.5):
    return p.from_flat(p.flat() + scale * np.random.default_rng(seed).normal(size=p.flat().size))


def _reinforce_by_hand(params, groups):
    """(1/B) sum_groups (1/G) sum_i A_i grad log pi(a_i | window_i) for one-token rollouts."""
    E, W, b, U, c = (params.token_embeddings, params.context_weights, params.hidden_bias,
                     params.output_projection, params.output_bias)
    d = E.shape[1]
    out = {n: np.zeros_like(a) for n, a in params.arrays().items()}
    B = len(groups)
    for g in groups:
        for ro, adv, win in zip(g.rollouts, g.advantages, g.windows):
            assert len(ro.tokens) == 1
            ids = win[0]
            x = np.concatenate([E[k] for k in ids])
            h = np.tanh(x @ W + b)
            z = h @ U + c
            p = np.exp(z - z.max())
            p /= p.sum()
            dz = -p
            dz[ro.tokens[0]] += 1.0  # d log p_a / d logits
            dh = U @ dz
            da = dh * (1 - h**2)
            dx = W @ da
            scale = adv / (B * len(g.rollouts))
            out["output_bias"] += scale * dz
            out["output_projection"] += scale * np.outer(h, dz)
            out["hidden_bias"] += scale * da
            out["context_weights"] += scale * np.outer(x, da)
            for k, tok in enumerate(ids):
                out["token_embeddings"][tok] += scale * dx[k * d:(k + 1) * d]
    return out


def test_step_gradient_equals_reinforce_with_baseline(env, prompts, spec):
    actor = _noisy(_policy(spec), 1)
    ref = _policy(spec, 5)
    cfg = G.GrpoConfig(group_size=2, clip_eps=math.inf, kl_coeff=0.0,
                       sampling=pol.SamplingConfig(temperature=1.0, top_k=17, top_p=1.0, max_len=1))
    rng = np.random.default_rng(3)
    groups = [G.collect_group(actor, ref, p, env, cfg, 0, rng) for p in prompts[:6]]
    assert any(np.any(g.advantages != 0) for g in groups)
    _, grads, stats = G.policy_gradient(actor, groups, cfg)
    np.testing.assert_allclose(stats["rho"], 1.0, rtol=0, atol=1e-12)
    expected = _reinforce_by_hand(actor, groups)
    for n in grads:
        np.testing.assert_allclose(grads[n], expected[n], rtol=0, atol=1e-10)


def test_equal_rewards_leave_only_the_kl_gradient(env, prompts, spec):
    actor, ref = _noisy(_policy(spec), 2), _policy(spec, 6)
    cfg = G.GrpoConfig(kl_coeff=0.0)
    groups = [G.collect_group(actor, ref, p, env, cfg, 0, np.random.default_rng(4)) for p in prompts[:3]]
    for g in groups:
        g.advantages = np.zeros(len(g.rollouts))
    _, grads, _ = G.policy_gradient(actor, groups, cfg)
    assert all(np.all(v == 0) for v in grads.values())
    kl_cfg = G.GrpoConfig(kl_coeff=0.5)
    _, grads, _ = G.policy_gradient(actor, groups, kl_cfg)
    assert any(np.any(v != 0) for v in grads.values())


def test_surrogate_weights_normalize_per_sequence(env, prompts, spec):
    actor = _policy(spec)
    groups = [G.collect_group(actor, actor, p, env, G.GrpoConfig(), 0, np.random.default_rng(0)) for p in prompts[:3]]
    b = G.surrogate_batch(groups)
    assert b.weights.sum() == pytest.approx(1.0, rel=1e-12)


def test_collect_group_attaches_prompt_context(env, prompts, spec, monkeypatch):
    def boom(*a, **k):
        raise ValueError("decoder exploded")

    monkeypatch.setattr(G, "score_rollout", boom)
    with pytest.raises(RuntimeError, match=str(prompts[0].x_tar)):
        G.collect_group(_policy(spec), _policy(spec), prompts[0], env, G.GrpoConfig(), 0, np.random.default_rng(0))


def test_grpo_step_is_reproducible(env, prompts, spec):
    ref = _noisy(_policy(spec), 3, 0.2)
    cfg = G.GrpoConfig(seed=11)
    outs = []
    for _ in range(2):
        new, metrics, _ = G.grpo_step(ref, ref, prompts[:4], env, cfg, 0, pol.Adam(cfg.learning_rate))
        outs.append((new.flat(), metrics))
    assert np.array_equal(outs[0][0], outs[1][0]) and outs[0][1] == outs[1][1]
    assert set(outs[0][1]) == set(G.METRIC_FIELDS)


def test_train_outputs_and_frozen_inputs(env, prompts, spec, tmp_path):
    ref = _noisy(_policy(spec), 4, 0.2)
    ref_bytes = ref.flat().tobytes()
    env_before = repr(env)
    rc = RewardConfig(lambda_schedule=((0, 0.9, 0.1), (3, 0.8, 0.2)))
    cfg = G.GrpoConfig(steps=5, batch_prompts=3, reward=rc)
    final, rows = G.train(cfg, prompts[:10], ref, env, out_dir=tmp_path)
    assert ref.flat().tobytes() == ref_bytes and repr(env) == env_before
    assert final.distance(ref) > 0
    with open(tmp_path / "metrics.csv") as f:
        rd = list(csv.DictReader(f))
    assert len(rd) == 5 and tuple(rd[0].keys()) == G.METRIC_FIELDS
    assert [(float(r["lambda_c"]), float(r["lambda_s"])) for r in rd] == [(0.9, 0.1)] * 3 + [(0.8, 0.2)] * 2
    with open(tmp_path / "rollouts.csv") as f:
        rr = list(csv.DictReader(f))
    assert len(rr) == 5 * 3 * 4 and tuple(rr[0].keys()) == G.ROLLOUT_FIELDS
    loaded, _ = pol.load_checkpoint(tmp_path / "checkpoints" / "policy.ckpt")
    assert np.array_equal(loaded.flat(), final.flat())


def test_zero_learning_rate_keeps_params(env, prompts, spec):
    ref = _policy(spec)
    final, rows = G.train(G.GrpoConfig(steps=3, batch_prompts=2, learning_rate=0.0), prompts[:4], ref, env)
    assert np.array_equal(final.flat(), ref.flat())
    assert all(r["mean_kl"] == pytest.approx(0.0, abs=1e-15) for r in rows)


def test_train_needs_prompts(env, spec):
    with pytest.raises(InvalidInputError):
        G.train(G.GrpoConfig(steps=1), [], _policy(spec), env)
