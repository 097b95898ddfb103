"""Distractor-pool evaluation, ranking metrics, breakdowns and query perturbation."""
from __future__ import annotations

import csv
import io
import json
import math
import zlib
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import CodeSnippet, Corpus, QueryRecord
from .errors import CorpusTooSmall, InvalidArgument, InvalidRank, PoolTooSmall, UnsupportedShape, ZeroOriginalScore
from .layout import compile_layout
from .modules import ModelParams
from .parser import ActionNode, Arg, QueryParser, SemanticParse, avg_args_per_action, default_parser, max_depth
from .scorer import BM25FirstStage, BM25Index, FirstStage, RankedList, model_score, query_layout, rerank
from .similarity import SimilarityConfig

UB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EvalConfig:
    num_distractors: int = 99
    k_rerank: int = 10
    p_at_k: tuple[int, ...] = (1, 3, 5)
    seed: int = 0

    def __post_init__(self):
        if self.num_distractors < 1:
            raise InvalidArgument("num_distractors must be >= 1")
        if not 1 <= self.k_rerank <= self.num_distractors + 1:
            raise InvalidArgument("k_rerank must lie in [1, num_distractors + 1]")
        if any(k < 1 for k in self.p_at_k):
            raise InvalidArgument("p_at_k values must be >= 1")


@dataclass(frozen=True)
class QueryResult:
    query_id: str
    correct_id: str
    rank: int | None               # final rank of the correct snippet
    first_stage_rank: int | None
    fallback: bool
    max_depth: int | None = None
    avg_args: Fraction | None = None


@dataclass
class MetricsRecord:
    mrr: float
    p_at_k: dict[int, float]
    upper_bound_mrr: float
    n_queries: int
    n_fallbacks: int
    results: list[QueryResult] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "p_at_k": {str(k): v for k, v in self.p_at_k.items()},
                "upper_bound_mrr": self.upper_bound_mrr, "n_queries": self.n_queries,
                "n_fallbacks": self.n_fallbacks}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --- metrics ---------------------------------------------------------------

def reciprocal_rank(rank: int) -> float:
    if isinstance(rank, bool) or not isinstance(rank, (int, np.integer)) or rank < 1:
        raise InvalidRank(f"rank must be an integer >= 1, got {rank!r}")
    return 1.0 / int(rank)


def _rr(rank: int | None) -> float:
    return 0.0 if rank is None else reciprocal_rank(rank)


def precision_at_k(ranked: RankedList | Sequence[str], correct_id: str, k: int) -> int:
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    ids = ranked.ids if isinstance(ranked, RankedList) else list(ranked)
    return int(correct_id in ids[:k])


def upper_bound_mrr(first_stage_ranks: Sequence[int | None], k_rerank: int) -> float:
    """Best MRR a re-ranker of the top ``k_rerank`` could reach.

    Queries whose correct snippet is in the first-stage top-k count 1; the
    rest keep their first-stage reciprocal rank (0 when absent).
    """
    if not first_stage_ranks:
        return 0.0
    total = 0.0
    for r in first_stage_ranks:
        total += 1.0 if r is not None and r <= k_rerank else _rr(r)
    return total / len(first_stage_ranks)


def summarize(results: Sequence[QueryResult], cfg: EvalConfig) -> MetricsRecord:
    n = len(results)
    if n == 0:
        return MetricsRecord(0.0, {k: 0.0 for k in cfg.p_at_k}, 0.0, 0, 0, [])
    mrr = sum(_rr(r.rank) for r in results) / n
    p = {k: sum(1 for r in results if r.rank is not None and r.rank <= k) / n for k in cfg.p_at_k}
    ub = upper_bound_mrr([r.first_stage_rank for r in results], cfg.k_rerank)
    return MetricsRecord(mrr, p, ub, n, sum(r.fallback for r in results), list(results))


# --- evaluation loop -------------------------------------------------------

def distractors_for(query_id: str, correct: Iterable[str], snippet_ids: Sequence[str], n: int, seed: int) -> list[str]:
    """A fixed, seeded sample of ``n`` snippet ids excluding every id in ``correct``."""
    excluded = set(correct)
    pool = [s for s in snippet_ids if s not in excluded]
    if len(pool) < n:
        raise CorpusTooSmall(f"need {n} distractors, only {len(pool)} snippets available")
    rng = np.random.default_rng([seed, zlib.crc32(query_id.encode("utf-8"))])
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in sorted(idx)]


ScoreFn = Callable[[QueryRecord, CodeSnippet], float]


def evaluate(scorer: ModelParams | ScoreFn | None, corpus: Corpus, cfg: EvalConfig | None = None,
             sim: SimilarityConfig | None = None, queries: Sequence[QueryRecord] | None = None,
             first_stage: FirstStage | None = None, parser: QueryParser | None = None,
             correct_sets: Mapping[str, Iterable[str]] | None = None) -> MetricsRecord:
    """Rank each query's correct snippet among seeded distractors.

    ``scorer`` is a trained model (re-ranks the first-stage top-k through the
    query layout, falling back on parse failure), a plain function
    ``(query, snippet) -> score`` (re-ranks with it), or ``None`` for the
    first stage alone.  With ``correct_sets`` every listed correct snippet is
    evaluated once, with the other correct snippets removed from its pool.
    """
    cfg = cfg or EvalConfig()
    queries = corpus.queries if queries is None else queries
    first_stage = first_stage or BM25FirstStage(BM25Index.from_corpus(corpus))
    parser = parser or default_parser()
    ids = corpus.snippet_ids
    results = []
    for q in queries:
        correct_all = list(correct_sets.get(q.id, [q.paired_snippet_id])) if correct_sets else [q.paired_snippet_id]
        parsed = parser.parse_query(q.raw_text)
        depth = max_depth(parsed) if parsed else None
        args = avg_args_per_action(parsed) if parsed else None
        layout = query_layout(q, parser) if isinstance(scorer, ModelParams) else None
        for correct in correct_all:
            pool = [correct] + distractors_for(q.id + "\x00" + correct if correct_sets else q.id,
                                               correct_all, ids, cfg.num_distractors, cfg.seed)
            first = first_stage.rank(q, sorted(pool), len(pool))
            fallback = False
            if scorer is None:
                final = first
            elif isinstance(scorer, ModelParams):
                final = rerank(q, first, scorer, sim, cfg.k_rerank, corpus.snippets, parser, layout=layout)
                fallback = final.fallback
            else:
                final = _rerank_with(q, first, scorer, corpus.snippets, cfg.k_rerank)
            results.append(QueryResult(q.id, correct, final.rank_of(correct), first.rank_of(correct),
                                       fallback, depth, args))
    record = summarize(results, cfg)
    if scorer is not None and record.mrr > record.upper_bound_mrr + UB_TOLERANCE:
        raise AssertionError(f"re-ranked MRR {record.mrr} exceeds upper bound {record.upper_bound_mrr}")
    return record


def _rerank_with(q: QueryRecord, first: RankedList, fn: ScoreFn, snippets, k: int) -> RankedList:
    from dataclasses import replace
    head = [replace(e, rerank_score=float(fn(q, snippets[e.snippet_id]))) for e in first.entries[:k]]
    head.sort(key=lambda e: (-e.rerank_score, e.snippet_id))
    return RankedList(first.query_id, tuple(head) + first.entries[k:])


# --- breakdown -------------------------------------------------------------

class BreakdownKey(str, Enum):
    MAX_DEPTH = "max_depth"
    AVG_ARGS = "avg_args"


def breakdown(results: Sequence[QueryResult], key: BreakdownKey | str) -> list[dict]:
    """Per-group counts and mean P@1; queries without a parse are grouped under ``None``."""
    key = BreakdownKey(key)
    groups: dict = defaultdict(list)
    for r in results:
        groups[getattr(r, key.value)].append(1.0 if r.rank == 1 else 0.0)
    rows = []
    for value in sorted(groups, key=lambda v: (v is None, v if v is not None else 0)):
        hits = groups[value]
        rows.append({key.value: value, "count": len(hits), "p_at_1": sum(hits) / len(hits)})
    return rows


def breakdown_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = dict(row)
        for k, v in out.items():
            if isinstance(v, Fraction):
                out[k] = f"{float(v):.4g}"
        writer.writerow(out)
    return buf.getvalue()


# --- perturbation ----------------------------------------------------------

class PerturbKind(str, Enum):
    SWAP_ENTITY = "swap_entity"
    SWAP_VERB = "swap_verb"


def _single_arg(parse: SemanticParse) -> tuple[str, Arg]:
    root = parse.root
    if root.action_args or len(root.entity_args) != 1:
        raise UnsupportedShape("perturbation needs exactly one verb and one entity argument")
    return root.verb, root.entity_args[0]


def perturb_query(parse: SemanticParse, pool: Iterable[SemanticParse], kind: PerturbKind | str, count: int = 20,
                  seed: int = 0) -> list[SemanticParse]:
    """``count`` distinct variants with the entity (or verb) replaced by one drawn from ``pool``."""
    kind = PerturbKind(kind)
    verb, arg = _single_arg(parse)
    pool = list(pool)
    if kind == PerturbKind.SWAP_ENTITY:
        options = sorted({a.payload for p in pool for n in p.actions for a in n.entity_args} - {arg.payload})
    else:
        options = sorted({n.verb for p in pool for n in p.actions if n.surface != ""} - {verb})
    if len(options) < count:
        raise PoolTooSmall(f"{len(options)} distinct replacements for {count} perturbations")
    rng = np.random.default_rng(seed)
    picks = [options[i] for i in rng.choice(len(options), size=count, replace=False)]
    if kind == PerturbKind.SWAP_ENTITY:
        return [SemanticParse(ActionNode(verb, (Arg(arg.preposition, p),))) for p in picks]
    return [SemanticParse(ActionNode(p, (arg,))) for p in picks]


def perturbation_ratio(params: ModelParams, pairs: Sequence[tuple[SemanticParse, CodeSnippet]],
                       kinds: Iterable[PerturbKind | str], pool: Sequence[SemanticParse],
                       sim: SimilarityConfig | None = None, count: int = 20, seed: int = 0) -> dict[str, float]:
    """Mean of score(perturbed) / score(original), pooled over every (pair, perturbation)."""
    out = {}
    originals = []
    for parse, snip in pairs:
        s = model_score(compile_layout(parse), snip, params, sim)
        if s <= 0.0:
            raise ZeroOriginalScore(f"original score is {s}")
        originals.append(s)
    for kind in kinds:
        kind = PerturbKind(kind)
        ratios = []
        for i, ((parse, snip), base) in enumerate(zip(pairs, originals)):
            for variant in perturb_query(parse, pool, kind, count, seed + i):
                ratios.append(model_score(compile_layout(variant), snip, params, sim) / base)
        out[kind.value] = float(np.mean(ratios)) if ratios else math.nan
    return out


def perturbation_pairs(model_record: MetricsRecord, baseline_record: MetricsRecord, corpus: Corpus,
                       parser: QueryParser | None = None, min_pairs: int = 10) -> list[tuple[SemanticParse, CodeSnippet]]:
    """Single-verb, single-entity queries ranked first by both the model and the first stage.

    When fewer than ``min_pairs`` qualify, the first-stage requirement is dropped.
    """
    parser = parser or default_parser()
    base_top = {r.query_id for r in baseline_record.results if r.rank == 1}
    by_id = {q.id: q for q in corpus.queries}

    def collect(require_base: bool):
        out = []
        for r in model_record.results:
            if r.rank != 1 or r.fallback or (require_base and r.query_id not in base_top):
                continue
            parsed = parser.parse_query(by_id[r.query_id].raw_text)
            if parsed and not parsed.root.action_args and len(parsed.root.entity_args) == 1:
                out.append((parsed, corpus.snippets[r.correct_id]))
        return out

    pairs = collect(True)
    return pairs if len(pairs) >= min_pairs else collect(False)
