"""Both kernel backends must agree exactly."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from editgrpo import _kernels

pytestmark = pytest.mark.skipif("numba" not in _kernels.BACKENDS, reason="numba not installed")
NP, NB = _kernels.BACKENDS["numpy"], _kernels.BACKENDS.get("numba", (None,) * 4)

seqs = st.lists(st.integers(0, 3), max_size=12).map(lambda x: np.array(x, dtype=np.int64))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31), st.booleans())
def test_dtw_backends_agree(n, m, seed, ties):
    rng = np.random.default_rng(seed)
    cost = rng.integers(0, 3, (n, m)).astype(float) if ties else rng.random((n, m))
    a, b = NP[0](cost), NB[0](cost)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(NP[1](a), NB[1](b))


@settings(max_examples=300, deadline=None)
@given(seqs, seqs)
def test_edit_and_lcs_backends_agree(a, b):
    assert tuple(NP[2](a, b)) == tuple(NB[2](a, b))
    np.testing.assert_array_equal(NP[3](a, b), NB[3](a, b))


def test_dispatch_flag_selects_numpy(monkeypatch):
    import importlib

    monkeypatch.setenv("EDITGRPO_NUMBA", "0")
    mod = importlib.reload(_kernels)
    try:
        assert not mod.USE_NUMBA and mod.dtw_accumulate is mod.dtw_accumulate_numpy
    finally:
        monkeypatch.delenv("EDITGRPO_NUMBA")
        importlib.reload(_kernels)
