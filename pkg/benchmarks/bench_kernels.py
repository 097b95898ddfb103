"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 200]

Numba compile time is excluded by one warm-up call per kernel.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from nsss import kernels
from nsss.scorer import BM25Index, code_terms
from nsss.synthetic import generate_synthetic_corpus


def cases(seed: int = 0):
    rng = np.random.default_rng(seed)
    n, d = 128, 32
    X, Wq, Wk, Wv = (rng.normal(size=s) for s in ((n, d), (d, d), (d, d), (d, d)))
    fwd = kernels.attention_forward_numpy(X, Wq, Wk, Wv)
    dO = rng.normal(size=(n, d))
    corpus = generate_synthetic_corpus(seed, 1000)
    idx = BM25Index({sid: code_terms(s) for sid, s in corpus.snippets.items()})
    q = np.array([idx.terms[w] for w in ("file", "read", "json", "data") if w in idx.terms], dtype=np.int64)
    bm = (idx.indptr, idx.term_ids, idx.tfs, idx.doc_len, idx.idf, q, idx.avgdl, idx.k1, idx.b)
    return {
        "attention_forward (128x32)": (kernels.attention_forward_numpy, kernels.attention_forward_numba,
                                       (X, Wq, Wk, Wv)),
        "attention_backward (128x32)": (kernels.attention_backward_numpy, kernels.attention_backward_numba,
                                        (dO, X, Wq, Wk, Wv, *fwd[1:])),
        "bm25_scores (1000 docs)": (kernels.bm25_scores_numpy, kernels.bm25_scores_numba, bm),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    print(f"numba available: {kernels.HAVE_NUMBA}")
    print(f"{'kernel':32s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn, inputs) in cases().items():
        nb_fn(*inputs)  # compile
        t_np = min(timeit.repeat(lambda: np_fn(*inputs), number=args.repeat, repeat=3)) / args.repeat
        t_nb = min(timeit.repeat(lambda: nb_fn(*inputs), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:32s} {t_np * 1e6:10.1f} {t_nb * 1e6:10.1f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
