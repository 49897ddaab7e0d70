from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from editgrpo import synthenv, textedit  # noqa: E402
from editgrpo.rewards import RewardEnv  # noqa: E402


@pytest.fixture(scope="session")
def spec():
    return synthenv.SynthSpec()


@pytest.fixture(scope="session")
def env(spec):
    return RewardEnv(spec)


@pytest.fixture(scope="session")
def lex(spec):
    return synthenv.lexicon(spec.vocab_size)


def make_prompts(spec, n, seed, prompt_seed):
    lex = synthenv.lexicon(spec.vocab_size)
    rng = np.random.default_rng(prompt_seed)
    return [
        textedit.synth_prompt(p.transcript, p.tokens, rng, lex, seed=p.seed, speaker_id=p.speaker_id)
        for p in synthenv.make_corpus(n, spec, seed)
    ]


@pytest.fixture(scope="session")
def prompts(spec):
    return make_prompts(spec, 40, seed=3, prompt_seed=4)


# --- acceptance reporting: one PASS/FAIL line per criterion -----------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion id and title")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        cid, title = marker.args
        item.config._criteria[cid] = (title, rep.passed, rep.duration)


def pytest_terminal_summary(terminalreporter, config):
    crit = getattr(config, "_criteria", {})
    if not crit:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(crit):
        title, ok, dur = crit[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {title}  ({dur:.1f}s)")
