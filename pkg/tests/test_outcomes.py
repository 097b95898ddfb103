"""Checks on a model trained with the desk preset (seed 0, about 25 s)."""
import numpy as np
import pytest

from nsss.corpus import CodeSnippet, split_queries
from nsss.modules import action_forward, entity_forward
from nsss.scorer import model_score, query_layout
from nsss.synthetic import generate_synthetic_corpus
from nsss.trainer import DESK, DESK_SIMILARITY, train

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def trained():
    corpus = generate_synthetic_corpus(0, 300)
    train_q, test_q = split_queries(corpus, 0.2, 0)
    return corpus, test_q, train(corpus, DESK, DESK_SIMILARITY, queries=train_q)


def test_entity_module_finds_matching_token(trained):
    _, _, params = trained
    snip = CodeSnippet.from_source("x", "def process_1(file, *args, **kwargs):\n    return file.read()\n")
    e = entity_forward("file", snip, params)
    match = np.array([t.text == "file" for t in snip.tokens])
    assert e[match].min() > e[~match].mean()


def test_heldout_positives_outscore_negatives(trained):
    corpus, test_q, params = trained
    rng = np.random.default_rng(0)
    ids = corpus.snippet_ids
    pos, neg = [], []
    for q in test_q:
        lay = query_layout(q)
        if not lay:
            continue
        pos.append(model_score(lay, corpus.snippets[q.paired_snippet_id], params, DESK_SIMILARITY))
        other = q.paired_snippet_id
        while other == q.paired_snippet_id:
            other = ids[int(rng.integers(len(ids)))]
        neg.append(model_score(lay, corpus.snippets[other], params, DESK_SIMILARITY))
    assert np.mean(pos) > np.mean(neg)


def test_action_argmax_on_entity_tokens(trained):
    # measured: 19 of the first 20 held-out pairs
    corpus, test_q, params = trained
    hits = 0
    for q in test_q[:20]:
        ev = query_layout(q).evaluations[0]
        snip = corpus.snippets[q.paired_snippet_id]
        seen = [entity_forward(phrase, snip, params) for _, phrase in ev.seen_args]
        a = action_forward(ev, seen, snip, params)
        e = entity_forward(ev.masked_arg[1], snip, params)
        hits += e[np.argmax(a)] >= 0.5 * e.max()
    assert hits >= 18
