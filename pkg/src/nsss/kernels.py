"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba versions are used when numba imports and ``NSSS_DISABLE_NUMBA`` is
unset (or ``0``).  Both paths compute the same quantities; they differ only
in floating-point summation order.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _numba_requested() -> bool:
    flag = os.environ.get("NSSS_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --- single-head self-attention -----------------------------------------------

def attention_forward_numpy(X, Wq, Wk, Wv):
    """O = softmax(Q K^T / sqrt(d)) V with Q, K, V linear in X.

    Returns (O, Q, K, V, A); the last four are needed by the backward pass.
    """
    Q = X @ Wq
    K = X @ Wk
    V = X @ Wv
    S = (Q @ K.T) / math.sqrt(Wq.shape[1])
    S = S - S.max(axis=1, keepdims=True)
    A = np.exp(S)
    A /= A.sum(axis=1, keepdims=True)
    return A @ V, Q, K, V, A


def attention_backward_numpy(dO, X, Wq, Wk, Wv, Q, K, V, A):
    """Gradients (dX, dWq, dWk, dWv) of the attention output."""
    scale = 1.0 / math.sqrt(Wq.shape[1])
    dA = dO @ V.T
    dV = A.T @ dO
    dS = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    dQ = (dS @ K) * scale
    dK = (dS.T @ Q) * scale
    dWq = X.T @ dQ
    dWk = X.T @ dK
    dWv = X.T @ dV
    dX = dQ @ Wq.T + dK @ Wk.T + dV @ Wv.T
    return dX, dWq, dWk, dWv


def _attention_forward_loops(X, Wq, Wk, Wv):
    n = X.shape[0]
    Q = np.dot(X, Wq)
    K = np.dot(X, Wk)
    V = np.dot(X, Wv)
    scale = 1.0 / math.sqrt(Wq.shape[1])
    S = np.dot(Q, K.T)
    A = np.empty((n, n))
    for i in range(n):
        m = -np.inf
        for j in range(n):
            s = S[i, j] * scale
            A[i, j] = s
            if s > m:
                m = s
        tot = 0.0
        for j in range(n):
            e = math.exp(A[i, j] - m)
            A[i, j] = e
            tot += e
        for j in range(n):
            A[i, j] /= tot
    return np.dot(A, V), Q, K, V, A


def _attention_backward_loops(dO, X, Wq, Wk, Wv, Q, K, V, A):
    n = X.shape[0]
    scale = 1.0 / math.sqrt(Wq.shape[1])
    dA = np.dot(dO, V.T)
    dV = np.dot(A.T, dO)
    dS = np.empty((n, n))
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += dA[i, j] * A[i, j]
        for j in range(n):
            dS[i, j] = A[i, j] * (dA[i, j] - row) * scale
    dQ = np.dot(dS, K)
    dK = np.dot(dS.T, Q)
    dWq = np.dot(X.T, dQ)
    dWk = np.dot(X.T, dK)
    dWv = np.dot(X.T, dV)
    dX = np.dot(dQ, Wq.T) + np.dot(dK, Wk.T) + np.dot(dV, Wv.T)
    return dX, dWq, dWk, dWv


# --- BM25 ---------------------------------------------------------------------

def bm25_scores_numpy(indptr, term_ids, tfs, doc_len, idf, query_terms, avgdl, k1, b):
    """BM25 score of every document for a bag of query term ids (repeats count)."""
    n_docs = len(doc_len)
    scores = np.zeros(n_docs)
    if len(query_terms) == 0:
        return scores
    qcount = np.bincount(query_terms, minlength=len(idf)).astype(np.float64)
    doc_of = np.repeat(np.arange(n_docs), np.diff(indptr))
    weight = qcount[term_ids]
    hit = weight > 0
    if not hit.any():
        return scores
    tf = tfs[hit]
    norm = k1 * (1.0 - b + b * doc_len[doc_of[hit]] / avgdl)
    contrib = weight[hit] * idf[term_ids[hit]] * tf * (k1 + 1.0) / (tf + norm)
    np.add.at(scores, doc_of[hit], contrib)
    return scores


def _bm25_scores_loops(indptr, term_ids, tfs, doc_len, idf, query_terms, avgdl, k1, b):
    n_docs = doc_len.shape[0]
    qcount = np.zeros(idf.shape[0])
    for t in query_terms:
        qcount[t] += 1.0
    scores = np.zeros(n_docs)
    for d in range(n_docs):
        norm = k1 * (1.0 - b + b * doc_len[d] / avgdl)
        s = 0.0
        for p in range(indptr[d], indptr[d + 1]):
            w = qcount[term_ids[p]]
            if w > 0.0:
                tf = tfs[p]
                s += w * idf[term_ids[p]] * tf * (k1 + 1.0) / (tf + norm)
        scores[d] = s
    return scores


if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    attention_forward_numba = _jit(_attention_forward_loops)
    attention_backward_numba = _jit(_attention_backward_loops)
    bm25_scores_numba = _jit(_bm25_scores_loops)
else:  # pragma: no cover
    attention_forward_numba = _attention_forward_loops
    attention_backward_numba = _attention_backward_loops
    bm25_scores_numba = _bm25_scores_loops


def _contig(*arrays):
    return [np.ascontiguousarray(a, dtype=np.float64) for a in arrays]


if USE_NUMBA:
    def attention_forward(X, Wq, Wk, Wv):
        return attention_forward_numba(*_contig(X, Wq, Wk, Wv))

    def attention_backward(dO, X, Wq, Wk, Wv, Q, K, V, A):
        return attention_backward_numba(*_contig(dO, X, Wq, Wk, Wv, Q, K, V, A))

    def bm25_scores(indptr, term_ids, tfs, doc_len, idf, query_terms, avgdl, k1, b):
        return bm25_scores_numba(indptr, term_ids, tfs, doc_len, idf,
                                 np.asarray(query_terms, dtype=np.int64), float(avgdl), float(k1), float(b))
else:
    attention_forward = attention_forward_numpy
    attention_backward = attention_backward_numpy

    def bm25_scores(indptr, term_ids, tfs, doc_len, idf, query_terms, avgdl, k1, b):
        return bm25_scores_numpy(indptr, term_ids, tfs, doc_len, idf,
                                 np.asarray(query_terms, dtype=np.int64), avgdl, k1, b)
