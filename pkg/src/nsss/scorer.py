"""Match probabilities, the BM25 first stage, and top-K re-ranking."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .corpus import CodeSnippet, Corpus, QueryRecord, tokenize_query
from .errors import DataError, EmptyIndex, FormatError, InvalidArgument
from .layout import ActionEvaluation, ModuleLayout, compile_layout
from .modules import ModelParams, action_fwd, encode_fwd, entity_fwd, layout_forward, learned_weights, phrase_words, snippet_ids
from .parser import QueryParser, default_parser
from .similarity import SimilarityConfig, similarity

log = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75


def action_score(ev: ActionEvaluation, snippet: CodeSnippet, params: ModelParams,
                 cfg: SimilarityConfig | None = None) -> float:
    """Similarity between the action module's prediction and the entity module's scores for the masked phrase."""
    cfg = cfg or SimilarityConfig()
    ids = snippet_ids(snippet, params)
    H, _ = encode_fwd(params, ids)

    def ent(phrase):
        return entity_fwd(params, H, params.vocab.ids(phrase_words(phrase)))[0]

    a = action_fwd(params, ev, [ent(p) for _, p in ev.seen_args], H)[0]
    return similarity(a, ent(ev.masked_arg[1]), cfg, learned_weights(params, cfg, len(ids)))


def model_score(layout: ModuleLayout, snippet: CodeSnippet, params: ModelParams,
                cfg: SimilarityConfig | None = None) -> float:
    """Product of the action scores of every evaluation in the layout."""
    return layout_forward(params, layout, snippet, cfg or SimilarityConfig())[0]


# --- ranked lists ----------------------------------------------------------

@dataclass(frozen=True)
class RankEntry:
    snippet_id: str
    first_stage_score: float
    rerank_score: float | None = None


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[RankEntry, ...]
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.snippet_id for e in self.entries]

    def rank_of(self, snippet_id: str) -> int | None:
        """1-based rank, or None when absent."""
        for i, e in enumerate(self.entries, 1):
            if e.snippet_id == snippet_id:
                return i
        return None


def order_by(scored: Iterable[tuple[str, float]]) -> list[tuple[str, float]]:
    """Descending score, ties by ascending id."""
    return sorted(scored, key=lambda t: (-t[1], t[0]))


# --- BM25 ------------------------------------------------------------------

def code_terms(snippet: CodeSnippet) -> list[str]:
    """Lowercase code tokens that carry at least one letter or digit."""
    return [t.text.lower() for t in snippet.tokens if any(ch.isalnum() for ch in t.text)]


class BM25Index:
    """Inverted statistics over code-token documents, stored as CSR arrays."""

    def __init__(self, docs: Mapping[str, Sequence[str]], k1: float = BM25_K1, b: float = BM25_B):
        if not docs:
            raise EmptyIndex("cannot index an empty corpus")
        self.k1, self.b = k1, b
        self.doc_ids = list(docs)
        self.position = {d: i for i, d in enumerate(self.doc_ids)}
        self.terms: dict[str, int] = {}
        indptr, term_ids, tfs, lens = [0], [], [], []
        df: dict[int, int] = defaultdict(int)
        for d in self.doc_ids:
            counts: dict[int, int] = defaultdict(int)
            for w in docs[d]:
                counts[self.terms.setdefault(w, len(self.terms))] += 1
            for t in sorted(counts):
                term_ids.append(t)
                tfs.append(counts[t])
                df[t] += 1
            indptr.append(len(term_ids))
            lens.append(len(docs[d]))
        n = len(self.doc_ids)
        self.indptr = np.array(indptr, dtype=np.int64)
        self.term_ids = np.array(term_ids, dtype=np.int64)
        self.tfs = np.array(tfs, dtype=np.float64)
        self.doc_len = np.array(lens, dtype=np.float64)
        self.avgdl = float(self.doc_len.mean()) or 1.0
        dfa = np.array([df[t] for t in range(len(self.terms))], dtype=np.float64)
        self.idf = np.log(1.0 + (n - dfa + 0.5) / (dfa + 0.5))

    @classmethod
    def from_corpus(cls, corpus: Corpus, **kw) -> "BM25Index":
        return cls({sid: code_terms(s) for sid, s in corpus.snippets.items()}, **kw)

    def __len__(self) -> int:
        return len(self.doc_ids)

    def scores(self, query_tokens: Sequence[str]) -> np.ndarray:
        q = [self.terms[w] for w in query_tokens if w in self.terms]
        return kernels.bm25_scores(self.indptr, self.term_ids, self.tfs, self.doc_len, self.idf,
                                   np.array(q, dtype=np.int64), self.avgdl, self.k1, self.b)


def bm25_rank(query_tokens: Sequence[str], index: BM25Index, K: int, query_id: str = "",
              candidates: Iterable[str] | None = None) -> RankedList:
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    if len(index) == 0:
        raise EmptyIndex("index is empty")
    scores = index.scores(query_tokens)
    pool = index.doc_ids if candidates is None else candidates
    ranked = order_by((sid, float(scores[index.position[sid]])) for sid in pool)[:K]
    return RankedList(query_id, tuple(RankEntry(sid, s) for sid, s in ranked))


class FirstStage(Protocol):
    def rank(self, query: QueryRecord, candidates: Sequence[str], K: int) -> RankedList: ...


@dataclass
class BM25FirstStage:
    index: BM25Index

    def rank(self, query: QueryRecord, candidates: Sequence[str], K: int) -> RankedList:
        return bm25_rank(tokenize_query(query.raw_text), self.index, K, query.id, candidates)


@dataclass
class ExternalFirstStage:
    """First-stage scores read from a ``query_id<TAB>snippet_id<TAB>score`` file.

    Candidates without a score for the query get ``-inf``.
    """
    scores: dict[str, dict[str, float]] = field(default_factory=dict)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "ExternalFirstStage":
        out: dict[str, dict[str, float]] = defaultdict(dict)
        try:
            fh = open(path, encoding="utf-8", newline="")
        except OSError as exc:
            raise DataError(f"cannot read first-stage file {path}: {exc}") from exc
        with fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if len(row) != 3:
                    raise FormatError(lineno, "expected query_id, snippet_id, score")
                try:
                    score = float(row[2])
                except ValueError:
                    raise FormatError(lineno, f"bad score {row[2]!r}") from None
                if math.isnan(score):
                    raise FormatError(lineno, "score is NaN")
                out[row[0]][row[1]] = score
        return cls(dict(out))

    def rank(self, query: QueryRecord, candidates: Sequence[str], K: int) -> RankedList:
        table = self.scores.get(query.id, {})
        ranked = order_by((sid, table.get(sid, -math.inf)) for sid in candidates)[:K]
        return RankedList(query.id, tuple(RankEntry(sid, s) for sid, s in ranked))


# --- re-ranking ------------------------------------------------------------

def query_layout(query: QueryRecord | str, parser: QueryParser | None = None):
    """Compiled layout for a query, or the ParseFailure explaining why there is none."""
    from .errors import LayoutError
    from .parser import FailureReason, ParseFailure

    parser = parser or default_parser()
    text = query.raw_text if isinstance(query, QueryRecord) else query
    parsed = parser.parse_query(text)
    if not parsed:
        return parsed
    try:
        return compile_layout(parsed)
    except LayoutError as exc:
        return ParseFailure(FailureReason.STRUCTURE_UNSUPPORTED, str(exc))


def rerank(query: QueryRecord, first_stage: RankedList, params: ModelParams, cfg: SimilarityConfig | None,
           K: int, snippets: Mapping[str, CodeSnippet], parser: QueryParser | None = None,
           layout=None) -> RankedList:
    """Reorder the top ``K`` entries by model score; entries past ``K`` keep their place.

    When the query has no layout the first-stage list is returned unchanged
    with ``fallback`` set.
    """
    if not first_stage.entries:
        raise InvalidArgument("first-stage list is empty")
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    layout = layout if layout is not None else query_layout(query, parser)
    if not layout:
        return replace(first_stage, fallback=True)
    head, tail = first_stage.entries[:K], first_stage.entries[K:]
    scored = [replace(e, rerank_score=model_score(layout, snippets[e.snippet_id], params, cfg)) for e in head]
    scored.sort(key=lambda e: (-e.rerank_score, e.snippet_id))
    return RankedList(first_stage.query_id, tuple(scored) + tail)
