import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsss import kernels
from nsss.scorer import BM25Index

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not importable")


def attention_inputs(n, d, seed):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=s) for s in ((n, d), (d, d), (d, d), (d, d))]


@needs_numba
@given(st.integers(1, 12), st.integers(1, 6), st.integers(0, 10**6))
@settings(max_examples=40)
def test_attention_paths_agree(n, d, seed):
    X, Wq, Wk, Wv = attention_inputs(n, d, seed)
    fa = kernels.attention_forward_numpy(X, Wq, Wk, Wv)
    fb = kernels.attention_forward_numba(X, Wq, Wk, Wv)
    for a, b in zip(fa, fb):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    dO = np.random.default_rng(seed + 1).normal(size=(n, d))
    ga = kernels.attention_backward_numpy(dO, X, Wq, Wk, Wv, *fa[1:])
    gb = kernels.attention_backward_numba(dO, X, Wq, Wk, Wv, *fb[1:])
    for a, b in zip(ga, gb):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_attention_rows_are_distributions():
    X, Wq, Wk, Wv = attention_inputs(7, 4, 0)
    A = kernels.attention_forward(X, Wq, Wk, Wv)[4]
    assert np.allclose(A.sum(axis=1), 1.0) and np.all(A > 0)


@needs_numba
@given(st.dictionaries(st.text("abcde", min_size=1, max_size=2),
                       st.lists(st.sampled_from(["x", "y", "z", "w"]), max_size=8), min_size=1, max_size=10),
       st.lists(st.sampled_from(["x", "y", "z", "q"]), max_size=5))
def test_bm25_paths_agree(docs, query):
    idx = BM25Index(docs)
    q = np.array([idx.terms[w] for w in query if w in idx.terms], dtype=np.int64)
    args = (idx.indptr, idx.term_ids, idx.tfs, idx.doc_len, idx.idf, q, idx.avgdl, idx.k1, idx.b)
    assert np.allclose(kernels.bm25_scores_numpy(*args), kernels.bm25_scores_numba(*args), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("flag, expected", [("1", "numpy"), ("0", "numba" if kernels.HAVE_NUMBA else "numpy")])
def test_env_switch(flag, expected):
    env = dict(os.environ, NSSS_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from nsss import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
