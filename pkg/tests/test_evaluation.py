import math
import zlib
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsss.corpus import corpus_from_records
from nsss.errors import CorpusTooSmall, InvalidArgument, InvalidRank, PoolTooSmall, UnsupportedShape
from nsss.evaluation import (EvalConfig, PerturbKind, QueryResult, breakdown, breakdown_csv, distractors_for, evaluate,
                             perturb_query, perturbation_ratio, precision_at_k, reciprocal_rank, summarize,
                             upper_bound_mrr)
from nsss.modules import Vocab, init_params
from nsss.parser import SemanticParse, action, entity
from nsss.synthetic import generate_synthetic_corpus


class TestMetrics:
    def test_reciprocal_rank(self):
        assert reciprocal_rank(1) == 1.0
        assert reciprocal_rank(4) == 0.25
        for bad in (0, -1, 1.5, True):
            with pytest.raises(InvalidRank):
                reciprocal_rank(bad)

    def test_precision_at_k(self):
        ranked = ["b", "a", "c"]
        assert precision_at_k(ranked, "a", 1) == 0
        assert precision_at_k(ranked, "a", 2) == 1
        assert precision_at_k(ranked, "z", 3) == 0
        with pytest.raises(InvalidArgument):
            precision_at_k(ranked, "a", 0)

    def test_upper_bound_examples(self):
        assert upper_bound_mrr([1, 5, 10], 10) == 1.0
        assert upper_bound_mrr([3, 20], 10) == pytest.approx(0.5 * 1 + 0.5 * (1 / 20))
        assert upper_bound_mrr([None, 2], 1) == pytest.approx(0.25)
        assert upper_bound_mrr([], 10) == 0.0


def brute_force(rankings, k_values):
    """Scan each list for the correct id; no shared code with the harness."""
    rr, hits = [], {k: [] for k in k_values}
    for ids, correct in rankings:
        pos = next((i for i, s in enumerate(ids) if s == correct), None)
        rr.append(0.0 if pos is None else 1.0 / (pos + 1))
        for k in k_values:
            hits[k].append(1.0 if pos is not None and pos < k else 0.0)
    return sum(rr) / len(rr), {k: sum(v) / len(v) for k, v in hits.items()}


def ranking_fixtures(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        size = int(rng.integers(1, 30))
        ids = [f"d{j}" for j in rng.permutation(size)]
        correct = ids[int(rng.integers(size))] if rng.random() < 0.9 else "missing"
        out.append((ids, correct))
    return out


def results_for(rankings):
    return [QueryResult(f"q{i}", c, (ids.index(c) + 1) if c in ids else None, None, False)
            for i, (ids, c) in enumerate(rankings)]


def test_metrics_match_brute_force():
    cfg = EvalConfig(p_at_k=(1, 3, 5))
    for seed in range(200):
        fx = ranking_fixtures(25, seed)
        rec = summarize(results_for(fx), cfg)
        mrr, p = brute_force(fx, cfg.p_at_k)
        assert rec.mrr == mrr
        assert rec.p_at_k == p


@given(st.lists(st.integers(1, 50), min_size=1, max_size=40))
def test_precision_monotone_in_k(ranks):
    rec = summarize([QueryResult(str(i), "c", r, r, False) for i, r in enumerate(ranks)], EvalConfig())
    assert rec.p_at_k[1] <= rec.p_at_k[3] <= rec.p_at_k[5]
    assert rec.p_at_k[1] <= rec.mrr <= 1.0


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(0, 120)


def hashed_score(q, s):
    return zlib.crc32(f"{q.id}|{s.id}".encode()) / 2**32


def test_random_ranker_mrr():
    # a deterministic pseudo-random scorer over 10 candidates: E[MRR] = H_10 / 10
    c = generate_synthetic_corpus(1, 3000)
    rec = evaluate(hashed_score, c, EvalConfig(num_distractors=9, k_rerank=10))
    expected = sum(1 / k for k in range(1, 11)) / 10
    assert expected == pytest.approx(0.2929, abs=1e-4)
    assert abs(rec.mrr - expected) < 0.02


class TestEvaluate:
    def test_oracle_scorer(self, corpus):
        oracle = lambda q, s: 1.0 if s.id == q.paired_snippet_id else 0.0  # noqa: E731
        rec = evaluate(oracle, corpus, EvalConfig(k_rerank=100))
        assert rec.mrr == 1.0 == rec.upper_bound_mrr

    def test_first_stage_only_equals_ranks(self, corpus):
        rec = evaluate(None, corpus)
        assert all(r.rank == r.first_stage_rank for r in rec.results)
        assert rec.n_queries == len(corpus.queries)

    def test_upper_bound_law(self, corpus):
        for scorer in (hashed_score, None):
            rec = evaluate(scorer, corpus, EvalConfig(k_rerank=5))
            assert rec.mrr <= rec.upper_bound_mrr + 1e-9

    def test_model_scorer_respects_upper_bound(self, corpus):
        params = init_params(Vocab(["read", "file", "json", "load"]), d=8, h=6, n_max=512, seed=0)
        rec = evaluate(params, generate_synthetic_corpus(0, 110), EvalConfig(k_rerank=5))
        assert rec.mrr <= rec.upper_bound_mrr + 1e-9

    def test_bit_identical(self, corpus):
        a = evaluate(hashed_score, corpus).to_json()
        b = evaluate(hashed_score, corpus).to_json()
        assert a == b

    def test_corpus_too_small(self):
        with pytest.raises(CorpusTooSmall):
            evaluate(None, generate_synthetic_corpus(0, 20))

    def test_monotone_transform_invariant(self, corpus):
        a = evaluate(hashed_score, corpus)
        b = evaluate(lambda q, s: math.exp(3 * hashed_score(q, s)) - 7, corpus)
        assert [r.rank for r in a.results] == [r.rank for r in b.results]

    def test_config_validation(self):
        with pytest.raises(InvalidArgument):
            EvalConfig(num_distractors=0)
        with pytest.raises(InvalidArgument):
            EvalConfig(num_distractors=9, k_rerank=11)

    def test_multiple_correct(self):
        recs = [{"id": f"s{i}", "code": f"def f{i}(x): return x + {i}", "docstring": f"add {i} to number"}
                for i in range(15)]
        c = corpus_from_records(recs)
        rec = evaluate(None, c, EvalConfig(num_distractors=5, k_rerank=5), queries=c.queries[:2],
                       correct_sets={"s0": ["s0", "s1"], "s1": ["s1"]})
        assert rec.n_queries == 3


@given(st.integers(0, 10**6), st.integers(1, 30))
def test_distractors_disjoint_and_seeded(seed, n):
    ids = [f"s{i:02d}" for i in range(40)]
    got = distractors_for("q", ["s03", "s07"], ids, n, seed)
    assert len(set(got)) == n and not {"s03", "s07"} & set(got)
    assert got == distractors_for("q", ["s03", "s07"], ids, n, seed)


class TestBreakdown:
    def results(self):
        return [QueryResult("a", "x", 1, 1, False, 1, Fraction(2)),
                QueryResult("b", "x", 2, 2, False, 1, Fraction(1)),
                QueryResult("c", "x", 1, 1, False, 2, Fraction(3, 2)),
                QueryResult("d", "x", 1, 3, True, None, None)]

    def test_depth_rows(self):
        rows = breakdown(self.results(), "max_depth")
        assert rows == [{"max_depth": 1, "count": 2, "p_at_1": 0.5},
                        {"max_depth": 2, "count": 1, "p_at_1": 1.0},
                        {"max_depth": None, "count": 1, "p_at_1": 1.0}]

    def test_recomposes_overall(self):
        res = self.results()
        for key in ("max_depth", "avg_args"):
            rows = breakdown(res, key)
            assert sum(r["count"] for r in rows) == len(res)
            total = sum(r["count"] * r["p_at_1"] for r in rows) / len(res)
            assert total == summarize(res, EvalConfig()).p_at_k[1]

    def test_csv(self):
        text = breakdown_csv(breakdown(self.results(), "avg_args"))
        assert text.splitlines()[0] == "avg_args,count,p_at_1"
        assert "1.5,1,1.0" in text


POOL = [SemanticParse(action(v, entity(e))) for v in ("read", "write", "remove", "sort", "load")
        for e in ("file", "list", "json", "table", "url")]


class TestPerturb:
    def test_swap_entity(self):
        base = SemanticParse(action("read", entity("file", "from")))
        out = perturb_query(base, POOL, "swap_entity", count=4)
        assert len({p.root.entity_args[0].payload for p in out}) == 4
        assert all(p.root.verb == "read" and p.root.entity_args[0].preposition == "from" for p in out)
        assert all(p.root.entity_args[0].payload != "file" for p in out)

    def test_swap_verb(self):
        base = SemanticParse(action("read", entity("file")))
        out = perturb_query(base, POOL, PerturbKind.SWAP_VERB, count=4)
        assert sorted(p.root.verb for p in out) == ["load", "remove", "sort", "write"]
        assert all(p.root.entity_args == base.root.entity_args for p in out)

    def test_pool_too_small(self):
        with pytest.raises(PoolTooSmall):
            perturb_query(SemanticParse(action("read", entity("file"))), POOL, "swap_verb", count=20)

    def test_unsupported_shape(self):
        with pytest.raises(UnsupportedShape):
            perturb_query(SemanticParse(action("read", entity("a"), entity("b", "from"))), POOL, "swap_entity", 1)

    def test_deterministic(self):
        base = SemanticParse(action("read", entity("file")))
        assert perturb_query(base, POOL, "swap_entity", 3, seed=4) == perturb_query(base, POOL, "swap_entity", 3, seed=4)

    def test_identical_scores_ratio_one(self, snippet):
        # every verb shares one (zero) embedding, so the action output cannot tell them apart
        params = init_params(Vocab(["read", "write", "file"]), d=6, h=5, n_max=64, seed=0)
        params["verb_emb"][...] = 0.0
        base = SemanticParse(action("read", entity("file")))
        ratios = perturbation_ratio(params, [(base, snippet)], ["swap_verb"], POOL, count=4)
        assert ratios["swap_verb"] == pytest.approx(1.0, abs=1e-12)
