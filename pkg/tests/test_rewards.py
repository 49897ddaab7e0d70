from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest

from editgrpo import rewards as R, synthenv as se, textedit as te
from editgrpo.errors import InvalidInputError

CFG = R.RewardConfig()
mpmath.mp.dps = 40


def golden_r_wer(w):
    return float(mpmath.exp(-12 * mpmath.mpf(w) ** mpmath.mpf("1.5")))


def test_default_hyperparameters():
    assert (CFG.k_w, CFG.alpha, CFG.k_m, CFG.delta, CFG.gamma) == (12.0, 1.5, 0.2, 2.0, 0.5)
    assert CFG.lambda_schedule == ((0, 0.9, 0.1), (290, 0.8, 0.2))


@pytest.mark.parametrize("w,approx", [(0.0, 1.0), (0.1, 0.6842), (1.0, 6.14e-6)])
def test_r_wer_golden(w, approx):
    assert R.r_wer(w, CFG) == pytest.approx(golden_r_wer(w), rel=1e-9)
    assert R.r_wer(w, CFG) == pytest.approx(approx, rel=1e-3)


def test_r_mcd_golden():
    assert R.r_mcd(1.5, CFG) == 1.0
    assert R.r_mcd(7.0, CFG) == pytest.approx(float(mpmath.exp(-1)), rel=1e-9)
    assert R.r_mcd(None, CFG) == 1.0
    with pytest.raises(InvalidInputError):
        R.r_mcd(-0.1, CFG)
    with pytest.raises(InvalidInputError):
        R.r_wer(-0.1, CFG)


def test_r_sim():
    v = np.array([0.6, 0.8])
    assert R.r_sim(v, v) == pytest.approx(1.0, abs=1e-15)
    assert R.r_sim(v, [-0.8, 0.6]) == pytest.approx(0.0, abs=1e-15)
    assert R.r_sim(v, -v) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(InvalidInputError):
        R.r_sim(v, [0.0, 0.0])


def test_combination_and_total_golden():
    assert R.combine_wer_mcd(1.0, 1.0, 0.5) == 1.0
    assert R.combine_wer_mcd(0.8, 0.5, 0.5) == pytest.approx(0.6, rel=1e-12)
    assert R.combine_wer_mcd(0.8, 0.1, 0.0) == 0.8
    assert R.total_reward(0.37, 0.5, 1.0, 0.0) == 0.37
    assert R.total_reward(0.6, 0.9, 0.9, 0.1) == pytest.approx(0.63, rel=1e-12)
    with pytest.raises(InvalidInputError):
        R.total_reward(0.6, 0.9, 0.9, 0.2)


def test_schedule():
    assert R.schedule_lambdas(100, CFG) == (0.9, 0.1)
    assert R.schedule_lambdas(289, CFG) == (0.9, 0.1)
    assert R.schedule_lambdas(290, CFG) == (0.8, 0.2)
    assert R.schedule_lambdas(300, CFG) == (0.8, 0.2)
    assert R.schedule_lambdas(10**9, CFG) == (0.8, 0.2)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        R.RewardConfig(lambda_schedule=((0, 0.9, 0.2),))
    with pytest.raises(InvalidInputError):
        R.RewardConfig(lambda_schedule=((0, 0.9, 0.1), (0, 0.8, 0.2)))
    with pytest.raises(InvalidInputError):
        R.RewardConfig(gamma=1.5)
    with pytest.raises(InvalidInputError):
        R.RewardConfig(lambda_schedule=())


def test_monotonicity_and_bounds_random():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        w1, w2 = np.sort(rng.uniform(0, 3, 2))
        m1, m2 = np.sort(rng.uniform(0, 40, 2))
        g = rng.uniform(0.01, 0.99)
        lc = rng.uniform(0, 1)
        s = rng.uniform(-1, 1)
        rw1, rw2 = R.r_wer(w1, CFG), R.r_wer(w2, CFG)
        rm1, rm2 = R.r_mcd(m1, CFG), R.r_mcd(m2, CFG)
        assert 0 < rw2 <= rw1 <= 1 and (w1 == w2 or rw2 < rw1 or rw1 == 0)
        assert 0 < rm2 <= rm1 <= 1
        if m2 <= CFG.delta:
            assert rm1 == rm2 == 1.0
        c11, c21, c12 = (R.combine_wer_mcd(a, b, g) for a, b in ((rw1, rm1), (rw2, rm1), (rw1, rm2)))
        assert 0 < c11 <= 1
        assert c21 <= c11 and c12 <= c11
        if rw2 < rw1:
            assert c21 < c11
        if rm2 < rm1:
            assert c12 < c11
        # content gate: at fixed preservation the ratio is the WER-reward ratio
        assert c21 / c11 == pytest.approx(rw2 / rw1, rel=1e-9)
        t = R.total_reward(c11, s, lc, 1 - lc)
        assert -(1 - lc) - 1e-12 <= t <= 1 + 1e-12


def test_r_wer_strictly_decreasing_where_representable():
    ws = np.linspace(0, 2, 500)
    r = np.array([R.r_wer(w, CFG) for w in ws])
    assert np.all(np.diff(r) < 0)


def _prompt(ori, tar, spec, speaker=1, seed=77):
    x, y = te.Transcript(tuple(ori.split())), te.Transcript(tuple(tar.split()))
    op = te.EditOp("substitution", (0,), (y.words[0],))
    return te.EditPrompt(x, y, se.encode(x, spec), op, te.align(x, y), seed, speaker)


def test_exact_target_rollout_is_best(env, spec, prompts):
    rng = np.random.default_rng(0)
    beaten = 0
    trials = 0
    for p in prompts[:20]:
        tar = se.encode(p.x_tar, spec)
        best = R.score_rollout(p, tar, env, CFG, 0)
        assert best.w == 0.0 and best.r_wer == 1.0
        if best.m is not None:
            assert best.m == pytest.approx(0.0, abs=1e-9)
        assert best.s > 0.95
        for _ in range(10):
            rand = rng.integers(0, spec.vocab_size, len(tar))
            trials += 1
            beaten += R.score_rollout(p, rand, env, CFG, 0).r_total < best.r_total
    assert beaten / trials >= 0.99


def test_original_tokens_are_penalized(env, prompts):
    for p in prompts[:20]:
        rb = R.score_rollout(p, p.tokens_ori, env, CFG, 0)
        assert rb.w > 0 and rb.r_wer < 1


def test_empty_rollout_and_empty_region(env, spec):
    p = _prompt("alpha bravo", "alpha charlie", spec)
    rb = R.score_rollout(p, (), env, CFG, 0)
    assert rb.w == 1.0 and rb.s == 0.0 and rb.hypothesis == ()
    q = _prompt("alpha", "bravo", spec)
    assert q.alignment.kept_pairs == ()
    rb = R.score_rollout(q, se.encode(q.x_tar, spec), env, CFG, 0)
    assert rb.m is None and rb.r_mcd == 1.0 and rb.w == 0.0


def test_preservation_is_measured_on_kept_words(env, spec):
    p = _prompt("alpha bravo charlie", "alpha delta charlie", spec)
    good = R.score_rollout(p, se.encode(p.x_tar, spec), env, CFG, 0)
    # correct content, but a kept word rendered with another speaker's audio
    other = R.RewardEnv(spec)
    y = other.decode(p, se.encode(p.x_tar, spec))
    mixed = np.concatenate([se.decode([0], 3, spec, p.seed).samples, y.samples[spec.segment_samples:]])
    from editgrpo import dsp

    m_bad = R.preservation_mcd(p, dsp.Waveform(mixed, spec.sample_rate), good.hypothesis, env)
    assert good.m == pytest.approx(0.0, abs=1e-9) and m_bad > good.m


def test_score_is_deterministic(env, prompts):
    p = prompts[0]
    toks = (1, 2, 3, 4)
    assert R.score_rollout(p, toks, env, CFG, 5) == R.score_rollout(p, toks, env, CFG, 5)
    late = R.score_rollout(p, toks, env, CFG, 300)
    early = R.score_rollout(p, toks, env, CFG, 0)
    assert late.r_total == pytest.approx(0.8 * early.r_wer_mcd + 0.2 * early.r_sim, rel=1e-12)
    assert math.isfinite(late.r_total)
