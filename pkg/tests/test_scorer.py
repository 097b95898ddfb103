import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nsss.corpus import CodeSnippet, QueryRecord
from nsss.errors import EmptyIndex, FormatError, InvalidArgument, LengthMismatch, MissingWeights
from nsss.layout import compile_layout
from nsss.modules import Vocab, init_params
from nsss.scorer import (BM25Index, ExternalFirstStage, RankEntry, RankedList, action_score, bm25_rank, model_score,
                         order_by, rerank)
from nsss.similarity import SimilarityConfig, l1_normalize, similarity, similarity_grad

DOT = SimilarityConfig()
RAW = SimilarityConfig.from_mode("dot", "none")

nonneg = st.integers(1, 20).flatmap(
    lambda n: arrays(np.float64, n, elements=st.floats(0, 1, allow_subnormal=False)))


class TestNormalize:
    def test_examples(self):
        assert np.allclose(l1_normalize(np.array([0.2, 0.2])), [0.5, 0.5])
        assert np.allclose(l1_normalize(np.zeros(3)), [1 / 3] * 3)

    @given(nonneg)
    def test_sums_to_one(self, x):
        assert abs(l1_normalize(x).sum() - 1.0) < 1e-9


class TestSimilarity:
    def test_perfect(self):
        assert similarity(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]), DOT) == 1.0

    def test_disjoint(self):
        assert similarity(np.array([1.0, 0]), np.array([0, 1.0]), DOT) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            similarity(np.ones(2), np.ones(3), DOT)

    def test_missing_weights(self):
        with pytest.raises(MissingWeights):
            similarity(np.ones(2), np.ones(2), SimilarityConfig.from_mode("weighted_cosine"))

    def test_l2(self):
        cfg = SimilarityConfig.from_mode("l2", "none")
        assert similarity(np.array([0.5, 0.5]), np.array([0.5, 0.5]), cfg) == pytest.approx(1.0)
        assert similarity(np.array([1.0, 0]), np.array([0, 1.0]), cfg) == pytest.approx(math.exp(-math.sqrt(2)))

    def test_weighted_cosine(self):
        cfg = SimilarityConfig.from_mode("weighted_cosine", "none", weights=[1.0, 4.0])
        a, e = np.array([1.0, 1.0]), np.array([1.0, 0.0])
        assert similarity(a, e, cfg) == pytest.approx(1 / math.sqrt(5))

    @given(nonneg.flatmap(lambda a: st.tuples(st.just(a), arrays(np.float64, len(a), elements=st.floats(0, 1)))))
    def test_dot_range_and_symmetry(self, ae):
        a, e = ae
        for cfg in (DOT, RAW):
            s = similarity(a, e, cfg)
            assert 0.0 <= s <= 1.0 + 1e-12
            assert s == pytest.approx(similarity(e, a, cfg), abs=1e-15)

    @pytest.mark.parametrize("metric", ["dot", "l2", "weighted_cosine"])
    @pytest.mark.parametrize("mode", ["none", "entity", "action", "both"])
    def test_grad_matches_finite_difference(self, metric, mode):
        rng = np.random.default_rng(5)
        a, e = rng.uniform(0.1, 0.9, 6), rng.uniform(0.1, 0.9, 6)
        w = rng.uniform(0.5, 2.0, 6)
        if (metric, mode) == ("dot", "none"):
            a = a / 6  # stay below the clamp at 1
        cfg = SimilarityConfig.from_mode(metric, mode, weights=w if metric == "weighted_cosine" else None)
        _, da, de, _ = similarity_grad(a, e, cfg)
        h = 1e-6
        for i in range(6):
            step = np.eye(6)[i] * h
            assert da[i] == pytest.approx((similarity(a + step, e, cfg) - similarity(a - step, e, cfg)) / (2 * h), abs=1e-7)
            assert de[i] == pytest.approx((similarity(a, e + step, cfg) - similarity(a, e - step, cfg)) / (2 * h), abs=1e-7)


def bm25_by_hand(query, docs, k1=1.2, b=0.75):
    """Direct transcription of the Okapi BM25 formula over token lists."""
    n = len(docs)
    avgdl = sum(len(d) for d in docs.values()) / n
    out = {}
    for did, toks in docs.items():
        s = 0.0
        for term in query:
            df = sum(term in d for d in docs.values())
            if df == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            tf = toks.count(term)
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(toks) / avgdl))
        out[did] = s
    return out


DOCS = {"a": ["read", "file", "lines"], "b": ["write", "file", "file", "json", "dump"], "c": ["sort", "list"]}
# Worked by hand: N=3, avgdl=10/3, idf(file)=ln 1.6, idf(json)=ln(8/3).
# a: ln1.6 * 2.2 / (1 + 1.2*0.925)
# b: ln1.6 * 2*2.2 / (2 + 1.65) + ln(8/3) * 2.2 / (1 + 1.65)
FROZEN = {"a": 0.4900512, "b": 1.3808531, "c": 0.0}


class TestBM25:
    def test_hand_computation(self):
        hand = bm25_by_hand(["file", "json"], DOCS)
        assert hand == pytest.approx(FROZEN, abs=1e-7)
        idx = BM25Index(DOCS)
        scores = dict(zip(idx.doc_ids, idx.scores(["file", "json"])))
        assert scores == pytest.approx(FROZEN, abs=1e-7)

    def test_matching_doc_first(self):
        idx = BM25Index({"a": ["alpha", "beta"], "b": ["gamma"]})
        assert bm25_rank(["alpha"], idx, 2).ids == ["a", "b"]

    def test_k_larger_than_corpus(self):
        idx = BM25Index(DOCS)
        assert sorted(bm25_rank(["file"], idx, 50).ids) == ["a", "b", "c"]

    def test_ties_by_id(self):
        idx = BM25Index({"z": ["x"], "m": ["x"], "a": ["y"]})
        assert bm25_rank(["x"], idx, 3).ids == ["m", "z", "a"]

    def test_errors(self):
        with pytest.raises(EmptyIndex):
            BM25Index({})
        with pytest.raises(InvalidArgument):
            bm25_rank(["x"], BM25Index(DOCS), 0)

    @given(st.dictionaries(st.sampled_from("abcdefgh"), st.lists(st.sampled_from(["u", "v", "w", "x"]), max_size=6),
                           min_size=1),
           st.lists(st.sampled_from(["u", "v", "w", "x", "q"]), max_size=4))
    def test_matches_reference(self, docs, query):
        idx = BM25Index(docs)
        got = dict(zip(idx.doc_ids, idx.scores(query)))
        assert got == pytest.approx(bm25_by_hand(query, docs), abs=1e-9)


class TestExternalFirstStage:
    def test_read(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("q1\ta\t0.5\nq1\tb\t2\n\n", encoding="utf-8")
        fs = ExternalFirstStage.from_tsv(p)
        ranked = fs.rank(QueryRecord("q1", "x", "a"), ["a", "b", "c"], 3)
        assert ranked.ids == ["b", "a", "c"] and ranked.entries[2].first_stage_score == -math.inf

    @pytest.mark.parametrize("body", ["q1\ta\n", "q1\ta\tnope\n", "q1\ta\tnan\n"])
    def test_bad_rows(self, tmp_path, body):
        p = tmp_path / "s.tsv"
        p.write_text(body, encoding="utf-8")
        with pytest.raises(FormatError):
            ExternalFirstStage.from_tsv(p)


@pytest.fixture
def model():
    words = "read points from stream construct point record file json load open x".split()
    return init_params(Vocab(words), d=8, h=6, n_max=64, seed=2)


def snip(i, src):
    return CodeSnippet.from_source(f"s{i:03d}", src)


class TestScores:
    def test_product_rule(self, model, parser):
        lay = compile_layout(parser.parse_query("construct point record by reading points from stream"))
        s = snip(0, "def f(stream):\n    return PointRecord(stream.read())")
        parts = [action_score(ev, s, model, DOT) for ev in lay.evaluations]
        assert model_score(lay, s, model, DOT) == pytest.approx(parts[0] * parts[1], abs=1e-12)

    def test_single_evaluation(self, model, parser):
        lay = compile_layout(parser.parse_query("read json from file"))
        s = snip(0, "x = json.load(open(file))")
        assert model_score(lay, s, model, DOT) == action_score(lay.evaluations[0], s, model, DOT)

    def test_default_range(self, model, parser):
        lay = compile_layout(parser.parse_query("load json"))
        r = model_score(lay, snip(0, "x = json.load(fp)"), model)
        assert 0.0 <= r <= 1.0


def first_stage(n):
    return RankedList("q", tuple(RankEntry(f"s{i:03d}", float(n - i)) for i in range(n)))


class TestRerank:
    def snippets(self, n):
        return {f"s{i:03d}": snip(i, f"x{i} = json.load(open(file_{i % 7}))") for i in range(n)}

    def test_tail_untouched(self, model):
        fs = first_stage(40)
        out = rerank(QueryRecord("q", "read json from file", "s000"), fs, model, DOT, 10, self.snippets(40))
        assert out.entries[10:] == fs.entries[10:]
        assert sorted(out.ids[:10]) == sorted(fs.ids[:10])
        assert all(e.rerank_score is not None for e in out.entries[:10])
        assert not out.fallback

    def test_sorted_by_rerank(self, model):
        out = rerank(QueryRecord("q", "read json from file", "s000"), first_stage(12), model, DOT, 10, self.snippets(12))
        head = out.entries[:10]
        assert [e.snippet_id for e in head] == [sid for sid, _ in order_by((e.snippet_id, e.rerank_score) for e in head)]

    def test_fallback(self, model):
        fs = first_stage(5)
        out = rerank(QueryRecord("q", "check file does not exist", "s000"), fs, model, DOT, 10, self.snippets(5))
        assert out.entries == fs.entries and out.fallback

    def test_empty(self, model):
        with pytest.raises(InvalidArgument):
            rerank(QueryRecord("q", "read json", "s"), RankedList("q", ()), model, DOT, 10, {})

    @given(st.lists(st.tuples(st.sampled_from("abcdef"), st.integers(0, 3)), unique_by=lambda t: t[0]))
    def test_tie_break(self, scored):
        out = order_by([(s, float(v)) for s, v in scored])
        for (s1, v1), (s2, v2) in zip(out, out[1:]):
            assert v1 > v2 or (v1 == v2 and s1 < s2)
