"""Three-phase training: entity pretraining, action pretraining, end-to-end.

Every phase is plain SGD with batch size 1 and early stopping on a held-out
10% of its examples.  Randomness comes from ``numpy.random.default_rng``
seeded with ``(seed, phase)``, so a run is reproducible from its config.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, QueryRecord
from .errors import DataError, DivergenceDetected, InvalidArgument
from .layout import ModuleLayout
from .modules import (ACTION_GROUP, ENTITY_GROUP, SIMILARITY_GROUP, ActionPretrainCase, EndToEndCase,
                      EntityCase, ModelParams, Vocab, init_params)
from .parser import QueryParser, default_parser
from .scorer import BM25FirstStage, BM25Index, query_layout
from .similarity import Metric, SimilarityConfig
from .weak_labels import build_pretraining_set

log = logging.getLogger(__name__)

PHASES = ("entity_pretrain", "action_pretrain", "end_to_end")


@dataclass
class TrainConfig:
    seed: int = 0
    learning_rate: float = 3e-4
    entity_epochs: int = 8
    action_epochs: int = 8
    e2e_epochs: int = 10
    # per-phase overrides; None means learning_rate
    entity_lr: float | None = None
    action_lr: float | None = None
    e2e_lr: float | None = None
    # rescale each example's gradient to at most this global L2 norm; None disables
    clip_norm: float | None = None
    negative_ratio: float = 1.0
    # share of negatives drawn from the query's first-stage top ``hard_negative_pool``
    hard_negative_fraction: float = 0.0
    hard_negative_pool: int = 10
    patience: int = 3
    holdout_fraction: float = 0.1
    entity_pretrain: bool = True
    action_pretrain: bool = True
    end_to_end: bool = True
    d: int = 64
    h: int = 128
    n_max: int = 256

    def __post_init__(self):
        for name in ("learning_rate", "entity_lr", "action_lr", "e2e_lr"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidArgument(f"{name} must be > 0")
        if not self.negative_ratio > 0:
            raise InvalidArgument("negative_ratio must be > 0")
        if not 0 <= self.hard_negative_fraction <= 1:
            raise InvalidArgument("hard_negative_fraction must be in [0, 1]")
        if self.hard_negative_pool < 1:
            raise InvalidArgument("hard_negative_pool must be >= 1")
        if self.patience < 1:
            raise InvalidArgument("patience must be >= 1")
        if not 0 < self.holdout_fraction < 1:
            raise InvalidArgument("holdout_fraction must be in (0, 1)")

    def lr(self, phase: str) -> float:
        override = {"entity_pretrain": self.entity_lr, "action_pretrain": self.action_lr,
                    "end_to_end": self.e2e_lr}[phase]
        return self.learning_rate if override is None else override

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidArgument(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


# Settings for the 300-pair synthetic corpus on one CPU core (about 25 s per run).
# Early stopping is effectively off; each phase still returns its best
# held-out snapshot.
DESK = TrainConfig(d=32, h=64, learning_rate=0.01, entity_lr=0.5, action_lr=0.2, entity_epochs=40,
                   action_epochs=80, e2e_epochs=20, negative_ratio=5, patience=100)
DESK_SIMILARITY = SimilarityConfig.from_mode("dot", "action")


class Arm(str, Enum):
    FULL = "full"
    NO_ACTION_PRETRAIN = "no_action_pretrain"
    NO_BOTH_PRETRAIN = "no_both_pretrain"
    NO_END_TO_END = "no_end_to_end"


ARM_TOGGLES = {
    Arm.FULL: (True, True, True),
    Arm.NO_ACTION_PRETRAIN: (True, False, True),
    Arm.NO_BOTH_PRETRAIN: (False, False, True),
    Arm.NO_END_TO_END: (True, True, False),
}


class MetricsLog:
    """Collects ``{phase, epoch, loss, val_loss}`` rows and optionally streams them as JSON lines."""

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def __call__(self, phase: str, epoch: int, loss: float, val_loss: float) -> None:
        row = {"phase": phase, "epoch": epoch, "loss": loss, "val_loss": val_loss}
        self.rows.append(row)
        log.info("%s epoch %d loss %.5f val %.5f", phase, epoch, loss, val_loss)
        if self._fh:
            self._fh.write(json.dumps(row) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _rng(cfg: TrainConfig, phase: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, PHASES.index(phase)])


def _check_finite(loss: float, phase: str, epoch: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceDetected(f"non-finite loss in {phase} at epoch {epoch}")


def _split(items: list, fraction: float, rng: np.random.Generator) -> tuple[list, list]:
    if len(items) < 2:
        return items, []
    order = rng.permutation(len(items))
    n_val = max(1, int(round(fraction * len(items))))
    return [items[i] for i in sorted(order[n_val:])], [items[i] for i in sorted(order[:n_val])]


def sgd_loop(params: ModelParams, make_train: Callable[[np.random.Generator], list], val: list,
             groups: Sequence[str], cfg: TrainConfig, epochs: int, phase: str,
             metrics: Callable | None, rng: np.random.Generator) -> ModelParams:
    """SGD over the cases ``make_train`` returns each epoch, updating only tensors in ``groups``.

    Returns the snapshot with the lowest validation loss (the last one when
    there is no validation set).
    """
    names = [k for g in groups for k in params.names(g)]
    lr = cfg.lr(phase)

    def val_loss():
        return float(np.mean([c.loss(params) for c in val])) if val else float("nan")

    best, best_params, stale = val_loss(), params.copy(), 0
    for epoch in range(1, epochs + 1):
        cases = make_train(rng)
        total = 0.0
        for i in rng.permutation(len(cases)):
            loss, grads = cases[i].loss_and_grad(params)
            _check_finite(loss, phase, epoch)
            total += loss
            step = lr
            if cfg.clip_norm is not None:
                norm = math.sqrt(sum(float(np.vdot(grads[k], grads[k])) for k in names))
                if norm > cfg.clip_norm:
                    step = lr * cfg.clip_norm / norm
            for k in names:
                params.tensors[k] -= step * grads[k]
        if not params.all_finite():
            raise DivergenceDetected(f"non-finite parameters in {phase} at epoch {epoch}")
        vl = val_loss()
        if metrics:
            metrics(phase, epoch, total / max(1, len(cases)), vl)
        if not val or vl < best:
            best, best_params, stale = vl, params.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best_params


def sgd_phase(params: ModelParams, cases: list, groups: Sequence[str], cfg: TrainConfig, epochs: int,
              phase: str, metrics: Callable | None = None) -> ModelParams:
    rng = _rng(cfg, phase)
    train, val = _split(cases, cfg.holdout_fraction, rng)
    return sgd_loop(params, lambda r: train, val, groups, cfg, epochs, phase, metrics, rng)


# --- phase 1: entity module ------------------------------------------------

def entity_cases(corpus: Corpus, seed: int, queries: Sequence[QueryRecord] | None = None,
                 parser: QueryParser | None = None) -> list[EntityCase]:
    examples = build_pretraining_set(corpus, seed, parser=parser, queries=queries)
    return [EntityCase(ex.entity_phrase, corpus.snippets[ex.snippet_id], ex.labels.labels.astype(np.float64))
            for ex in examples]


def pretrain_entity(corpus: Corpus, params: ModelParams, cfg: TrainConfig, cases: list | None = None,
                    metrics: Callable | None = None, queries=None, parser: QueryParser | None = None) -> ModelParams:
    cases = cases if cases is not None else entity_cases(corpus, cfg.seed, queries, parser)
    if not cases:
        raise DataError("no entity pretraining examples (no parsable queries?)")
    return sgd_phase(params, cases, [ENTITY_GROUP], cfg, cfg.entity_epochs, "entity_pretrain", metrics)


# --- phase 2: action module ------------------------------------------------

def layouts_for(queries: Iterable[QueryRecord], parser: QueryParser | None = None) -> list[tuple[QueryRecord, ModuleLayout]]:
    parser = parser or default_parser()
    out = []
    for q in queries:
        layout = query_layout(q, parser)
        if layout:
            out.append((q, layout))
    return out


def action_cases(corpus: Corpus, queries: Sequence[QueryRecord] | None = None,
                 parser: QueryParser | None = None) -> list[ActionPretrainCase]:
    pairs = layouts_for(corpus.queries if queries is None else queries, parser)
    return [ActionPretrainCase(ev, corpus.snippets[q.paired_snippet_id]) for q, lay in pairs for ev in lay.evaluations]


def pretrain_action(corpus: Corpus, params: ModelParams, cfg: TrainConfig, metrics: Callable | None = None,
                    queries=None, parser: QueryParser | None = None) -> ModelParams:
    """Fit the action module to the frozen entity module's scores for each masked argument."""
    cases = action_cases(corpus, queries, parser)
    if not cases:
        raise DataError("no action pretraining examples (no parsable queries?)")
    return sgd_phase(params, cases, [ACTION_GROUP], cfg, cfg.action_epochs, "action_pretrain", metrics)


# --- phase 3: end to end ---------------------------------------------------

def sample_negatives(pairs: Sequence[tuple[QueryRecord, ModuleLayout]], snippet_ids: Sequence[str], ratio: float,
                     rng: np.random.Generator, hard: Mapping[str, Sequence[str]] | None = None,
                     hard_fraction: float = 0.0) -> list[tuple[QueryRecord, ModuleLayout, str]]:
    """Mismatched (query, snippet) pairs; never the query's own snippet.

    Each positive gets ``floor(ratio)`` negatives plus one more with
    probability ``ratio - floor(ratio)``.  With probability ``hard_fraction``
    a negative comes from ``hard[query.id]`` (e.g. first-stage top hits)
    instead of the whole corpus.
    """
    if len(snippet_ids) < 2:
        raise DataError("need at least two snippets to sample negatives")
    out = []
    index = {s: i for i, s in enumerate(snippet_ids)}
    whole, frac = int(ratio), ratio - int(ratio)
    for q, lay in pairs:
        n = whole + (1 if rng.random() < frac else 0)
        own = index.get(q.paired_snippet_id)
        pool = [s for s in (hard or {}).get(q.id, ()) if s != q.paired_snippet_id]
        for _ in range(n):
            if pool and rng.random() < hard_fraction:
                out.append((q, lay, pool[int(rng.integers(len(pool)))]))
                continue
            j = int(rng.integers(len(snippet_ids) - (own is not None)))
            if own is not None and j >= own:
                j += 1
            out.append((q, lay, snippet_ids[j]))
    return out


def first_stage_pools(corpus: Corpus, queries: Iterable[QueryRecord], k: int) -> dict[str, list[str]]:
    """Top-``k`` BM25 snippet ids per query over the whole corpus."""
    stage = BM25FirstStage(BM25Index.from_corpus(corpus))
    ids = corpus.snippet_ids
    return {q.id: stage.rank(q, ids, k).ids for q in queries}


def train_end_to_end(corpus: Corpus, params: ModelParams, cfg: TrainConfig, sim: SimilarityConfig | None = None,
                     metrics: Callable | None = None, queries=None, parser: QueryParser | None = None) -> ModelParams:
    sim = sim or SimilarityConfig()
    pairs = layouts_for(corpus.queries if queries is None else queries, parser)
    if not pairs:
        raise DataError("no parsable queries for end-to-end training")
    rng = _rng(cfg, "end_to_end")
    train_pairs, val_pairs = _split(pairs, cfg.holdout_fraction, np.random.default_rng([cfg.seed, 99]))
    ids = corpus.snippet_ids
    hard = (first_stage_pools(corpus, [q for q, _ in pairs], cfg.hard_negative_pool + 1)
            if cfg.hard_negative_fraction > 0 else None)

    def cases_for(ps, r):
        pos = [EndToEndCase(lay, corpus.snippets[q.paired_snippet_id], 1.0, sim) for q, lay in ps]
        negs = sample_negatives(ps, ids, cfg.negative_ratio, r, hard, cfg.hard_negative_fraction)
        neg = [EndToEndCase(lay, corpus.snippets[sid], 0.0, sim) for q, lay, sid in negs]
        return pos + neg

    val_cases = cases_for(val_pairs, np.random.default_rng([cfg.seed, 100])) if val_pairs else []
    groups = [ENTITY_GROUP, ACTION_GROUP]
    if sim.metric == Metric.WEIGHTED_COSINE and sim.weighted_cosine_weights is None:
        groups.append(SIMILARITY_GROUP)

    return sgd_loop(params, lambda r: cases_for(train_pairs, r), val_cases, groups, cfg,
                    cfg.e2e_epochs, "end_to_end", metrics, rng)


# --- orchestration ---------------------------------------------------------

def build_vocab(corpus: Corpus, parser: QueryParser | None = None) -> Vocab:
    """Code tokens, query words and every lexicon word (so unseen verbs still get their own row)."""
    lexicon = (parser or default_parser()).lexicon
    return Vocab.from_corpus(corpus, extra=list(lexicon.entries))


def train(corpus: Corpus, cfg: TrainConfig, sim: SimilarityConfig | None = None, queries=None,
          metrics: Callable | None = None, params: ModelParams | None = None,
          parser: QueryParser | None = None) -> ModelParams:
    """Run the enabled phases in order on ``queries`` (default: all corpus queries)."""
    params = params if params is not None else init_params(build_vocab(corpus, parser), cfg.d, cfg.h, cfg.n_max, cfg.seed)
    if cfg.entity_pretrain:
        params = pretrain_entity(corpus, params, cfg, metrics=metrics, queries=queries, parser=parser)
    if cfg.action_pretrain:
        params = pretrain_action(corpus, params, cfg, metrics=metrics, queries=queries, parser=parser)
    if cfg.end_to_end:
        params = train_end_to_end(corpus, params, cfg, sim, metrics=metrics, queries=queries, parser=parser)
    return params


def run_ablation(arm: Arm | str, corpus: Corpus, cfg: TrainConfig, eval_cfg=None, sim: SimilarityConfig | None = None,
                 test_fraction: float = 0.2, metrics: Callable | None = None) -> dict:
    """Train the arm's phase subset on a query split and evaluate on the held-out queries."""
    from .corpus import split_queries
    from .evaluation import EvalConfig, evaluate

    arm = Arm(arm)
    toggles = dict(zip(("entity_pretrain", "action_pretrain", "end_to_end"), ARM_TOGGLES[arm]))
    cfg = dataclasses.replace(cfg, **toggles)
    train_q, test_q = split_queries(corpus, test_fraction, cfg.seed)
    params = train(corpus, cfg, sim, queries=train_q, metrics=metrics)
    eval_cfg = eval_cfg or EvalConfig(seed=cfg.seed)
    record = evaluate(params, corpus, eval_cfg, sim=sim, queries=test_q)
    return {"arm": arm.value, "seed": cfg.seed, **record.to_dict()}
