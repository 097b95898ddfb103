"""Agreement between action and entity token scores, with gradients.

All functions here are pure numpy on 1-d float64 vectors.  ``*_grad``
variants return the value together with the partial derivatives needed for
end-to-end training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import LengthMismatch, MissingWeights

DEGENERATE_SUM = 1e-12
_L2_SMOOTH = 1e-12


class Metric(str, Enum):
    DOT = "dot"
    L2 = "l2"
    WEIGHTED_COSINE = "weighted_cosine"


@dataclass(frozen=True)
class SimilarityConfig:
    metric: Metric = Metric.DOT
    normalize_entity: bool = True
    normalize_action: bool = True
    weighted_cosine_weights: Sequence[float] | None = None

    @classmethod
    def from_mode(cls, metric: str = "dot", normalize: str = "both", weights=None) -> "SimilarityConfig":
        modes = {"none": (False, False), "entity": (True, False), "action": (False, True), "both": (True, True)}
        if normalize not in modes:
            raise ValueError(f"normalize must be one of {sorted(modes)}")
        ent, act = modes[normalize]
        return cls(Metric(metric), ent, act, weights)

    @property
    def normalize_mode(self) -> str:
        return {(False, False): "none", (True, False): "entity", (False, True): "action",
                (True, True): "both"}[(self.normalize_entity, self.normalize_action)]


def l1_normalize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = x.sum()
    if s < DEGENERATE_SUM:
        return np.full(len(x), 1.0 / len(x)) if len(x) else x.copy()
    return x / s


def l1_normalize_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    s = x.sum()
    if s < DEGENERATE_SUM:
        return np.zeros_like(x)
    y = x / s
    return (dy - dy @ y) / s


def _weights(cfg: SimilarityConfig, n: int, weights) -> np.ndarray:
    w = weights if weights is not None else cfg.weighted_cosine_weights
    if w is None:
        raise MissingWeights("weighted_cosine needs per-position weights")
    w = np.asarray(w, dtype=np.float64)
    if len(w) < n:
        raise LengthMismatch(f"{len(w)} weights for {n} tokens")
    return w[:n]


def similarity_grad(a: np.ndarray, e: np.ndarray, cfg: SimilarityConfig, weights=None):
    """Return (sim, d_sim/d_a, d_sim/d_e, d_sim/d_weights or None)."""
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if a.shape != e.shape:
        raise LengthMismatch(f"{a.shape} != {e.shape}")
    an = l1_normalize(a) if cfg.normalize_action else a
    en = l1_normalize(e) if cfg.normalize_entity else e
    dw = None
    if cfg.metric == Metric.DOT:
        raw = float(an @ en)
        # only reachable without normalization: the product sum can exceed 1
        sim = min(raw, 1.0)
        if sim != raw:
            return sim, np.zeros_like(a), np.zeros_like(e), dw
        d_an, d_en = en, an
    elif cfg.metric == Metric.L2:
        diff = an - en
        dist = math.sqrt(diff @ diff + _L2_SMOOTH)
        sim = math.exp(-dist)
        d_an = -sim * diff / dist
        d_en = -d_an
    else:
        w = _weights(cfg, len(a), weights)
        num = float(np.sum(w * an * en))
        na = math.sqrt(float(np.sum(w * an * an)))
        ne = math.sqrt(float(np.sum(w * en * en)))
        if na < 1e-300 or ne < 1e-300:
            return 0.0, np.zeros_like(a), np.zeros_like(e), np.zeros_like(w)
        cos = num / (na * ne)
        sim = min(max(cos, 0.0), 1.0)
        if sim != cos:
            return sim, np.zeros_like(a), np.zeros_like(e), np.zeros_like(w)
        d_an = w * en / (na * ne) - cos * w * an / (na * na)
        d_en = w * an / (na * ne) - cos * w * en / (ne * ne)
        dw = an * en / (na * ne) - 0.5 * cos * (an * an / (na * na) + en * en / (ne * ne))
    da = l1_normalize_backward(a, d_an) if cfg.normalize_action else d_an
    de = l1_normalize_backward(e, d_en) if cfg.normalize_entity else d_en
    return sim, da, de, dw


def similarity(a: np.ndarray, e: np.ndarray, cfg: SimilarityConfig | None = None, weights=None) -> float:
    cfg = cfg or SimilarityConfig()
    a = np.asarray(a, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if a.shape != e.shape:
        raise LengthMismatch(f"{a.shape} != {e.shape}")
    an = l1_normalize(a) if cfg.normalize_action else a
    en = l1_normalize(e) if cfg.normalize_entity else e
    if cfg.metric == Metric.DOT:
        return min(float(an @ en), 1.0)
    if cfg.metric == Metric.L2:
        diff = an - en
        return math.exp(-math.sqrt(diff @ diff + _L2_SMOOTH))
    w = _weights(cfg, len(a), weights)
    na = math.sqrt(float(np.sum(w * an * an)))
    ne = math.sqrt(float(np.sum(w * en * en)))
    if na < 1e-300 or ne < 1e-300:
        return 0.0
    return min(max(float(np.sum(w * an * en)) / (na * ne), 0.0), 1.0)
