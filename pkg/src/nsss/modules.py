"""Entity discovery and action modules with hand-written backward passes.

Shapes: ``d`` model width, ``h`` hidden width of every two-layer MLP, ``N``
number of code tokens.  All parameters live in one flat ``dict`` of float64
arrays (see :func:`init_params`); gradients use the same keys.

Entity module::

    X  = tok_emb[code] + pos                       (N, d)
    H  = X + attention(X)                          shared code encoder
    e  = sigmoid(mlp(H + mean(tok_emb[phrase]) @ Wp))

Action module for a variant with ``m`` seen arguments::

    j_i = mlp(verb_emb[verb] ++ prep_emb[prep_i])  joint verb/preposition embedding
    row k of the input is  j_0 ++ (j_1 ++ e_1[k]) ++ ... ++ (j_m ++ e_m[k]) ++ H[k]
    Xa  = input @ Win + bin ;  Ha = Xa + attention(Xa)
    a   = sigmoid(mlp(Ha))

``j_0`` uses the masked argument's preposition only; the masked phrase itself
never enters the action module.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .corpus import CodeSnippet, Corpus, tokenize_query
from .errors import NonFiniteGradient, VariantMismatch
from .layout import ActionEvaluation
from .parser import PREPOSITIONS
from .weak_labels import STOPWORDS

CHECKPOINT_VERSION = 1
UNK = "<unk>"

ENTITY_GROUP = "entity"
ACTION_GROUP = "action"
SIMILARITY_GROUP = "similarity"


class Vocab:
    """Lowercase word vocabulary with index 0 reserved for out-of-vocabulary words."""

    def __init__(self, words: Iterable[str]):
        self.words = [UNK] + sorted(set(words) - {UNK})
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.words == other.words

    def ids(self, words: Iterable[str]) -> np.ndarray:
        return np.array([self.index.get(w.lower(), 0) for w in words], dtype=np.int64)

    def id(self, word: str) -> int:
        return self.index.get(word.lower(), 0)

    @classmethod
    def from_corpus(cls, corpus: Corpus, extra: Iterable[str] = ()) -> "Vocab":
        words = set(extra)
        for snip in corpus.snippets.values():
            words.update(t.text.lower() for t in snip.tokens)
        for q in corpus.queries:
            words.update(tokenize_query(q.raw_text))
        return cls(words)


def positional_table(n_max: int, d: int) -> np.ndarray:
    pos = np.arange(n_max)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    table = np.zeros((n_max, d))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate[: d // 2])
    return table / math.sqrt(d)


def param_group(name: str) -> str:
    if name.startswith(("tok_emb", "enc.", "ent.")):
        return ENTITY_GROUP
    if name.startswith("sim."):
        return SIMILARITY_GROUP
    return ACTION_GROUP


def action_input_width(d: int, variant: int) -> int:
    return 2 * d + (variant - 1) * (d + 1)


@dataclass
class ModelParams:
    vocab: Vocab
    d: int
    h: int
    n_max: int
    tensors: dict[str, np.ndarray]
    pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.d <= 0 or self.h <= 0:
            raise ValueError("d and h must be positive")
        self.pos = positional_table(self.n_max, self.d)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.vocab, self.d, self.h, self.n_max,
                           {k: v.copy() for k, v in self.tensors.items()})

    def names(self, group: str | None = None) -> list[str]:
        return [k for k in self.tensors if group is None or param_group(k) == group]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def cosine_weights(self, n: int) -> np.ndarray:
        return np.exp(self.tensors["sim.theta"][:n])

    # persistence -------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "format": "nsss-checkpoint",
            "version": CHECKPOINT_VERSION,
            "d": self.d, "h": self.h, "n_max": self.n_max,
            "vocab": self.vocab.words,
            "shapes": {k: list(v.shape) for k, v in self.tensors.items()},
        }

    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.tensors.items()}
        arrays["manifest"] = np.frombuffer(json.dumps(self.manifest()).encode("utf-8"), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ModelParams":
        with np.load(path, allow_pickle=False) as data:
            manifest = json.loads(bytes(data["manifest"]).decode("utf-8"))
            if manifest.get("format") != "nsss-checkpoint" or manifest.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint {path}")
            tensors = {k: np.array(data[f"param/{k}"]) for k in manifest["shapes"]}
        for k, shape in manifest["shapes"].items():
            if list(tensors[k].shape) != shape:
                raise ValueError(f"shape mismatch for {k}")
        vocab = Vocab(manifest["vocab"][1:])
        return cls(vocab, manifest["d"], manifest["h"], manifest["n_max"], tensors)


def init_params(vocab: Vocab, d: int = 64, h: int = 128, n_max: int = 256, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)

    def uni(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    V, P = len(vocab), len(PREPOSITIONS)
    t: dict[str, np.ndarray] = {
        "tok_emb": uni((V, d), d),
        "enc.Wq": uni((d, d), d), "enc.Wk": uni((d, d), d), "enc.Wv": uni((d, d), d),
        "ent.Wp": uni((d, d), d),
        "ent.W1": uni((d, h), d), "ent.b1": uni((h,), d),
        "ent.w2": uni((h,), h), "ent.b2": uni((1,), h),
        "verb_emb": uni((V, d), d),
        "prep_emb": uni((P, d), d),
    }
    for v in (1, 2, 3):
        p = f"act{v}."
        width = action_input_width(d, v)
        t[p + "J1"] = uni((2 * d, h), 2 * d)
        t[p + "jb1"] = uni((h,), 2 * d)
        t[p + "J2"] = uni((h, d), h)
        t[p + "jb2"] = uni((d,), h)
        t[p + "Win"] = uni((width, d), width)
        t[p + "bin"] = uni((d,), width)
        t[p + "Wq"] = uni((d, d), d)
        t[p + "Wk"] = uni((d, d), d)
        t[p + "Wv"] = uni((d, d), d)
        t[p + "W1"] = uni((d, h), d)
        t[p + "b1"] = uni((h,), d)
        t[p + "w2"] = uni((h,), h)
        t[p + "b2"] = uni((1,), h)
    t["sim.theta"] = np.zeros(n_max)
    return ModelParams(vocab, d, h, n_max, t)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def phrase_words(phrase: str) -> list[str]:
    words = tokenize_query(phrase)
    content = [w for w in words if w not in STOPWORDS]
    return content or words


def prep_index(prep: str | None) -> int | None:
    return None if prep is None else PREPOSITIONS.index(prep) if prep in PREPOSITIONS else None


# --- forward / backward pieces ---------------------------------------------

def encode_fwd(p: ModelParams, ids: np.ndarray):
    X = p["tok_emb"][ids] + p.pos[: len(ids)]
    O, Q, K, V, A = kernels.attention_forward(X, p["enc.Wq"], p["enc.Wk"], p["enc.Wv"])
    return X + O, (ids, X, Q, K, V, A)


def encode_bwd(p: ModelParams, dH, cache, g):
    ids, X, Q, K, V, A = cache
    dX, dWq, dWk, dWv = kernels.attention_backward(dH, X, p["enc.Wq"], p["enc.Wk"], p["enc.Wv"], Q, K, V, A)
    g["enc.Wq"] += dWq
    g["enc.Wk"] += dWk
    g["enc.Wv"] += dWv
    np.add.at(g["tok_emb"], ids, dX + dH)


def entity_fwd(p: ModelParams, H, phrase_ids: np.ndarray):
    """Return (scores, logits, cache)."""
    pe = p["tok_emb"][phrase_ids].mean(axis=0)
    Z = H + pe @ p["ent.Wp"]
    U = np.tanh(Z @ p["ent.W1"] + p["ent.b1"])
    z = U @ p["ent.w2"] + p["ent.b2"][0]
    return _sigmoid(z), z, (phrase_ids, pe, Z, U)


def entity_bwd(p: ModelParams, dz, cache, g):
    """Backprop d(loss)/d(logits); returns d(loss)/dH."""
    phrase_ids, pe, Z, U = cache
    g["ent.w2"] += U.T @ dz
    g["ent.b2"][0] += dz.sum()
    dpre = np.outer(dz, p["ent.w2"]) * (1.0 - U * U)
    g["ent.W1"] += Z.T @ dpre
    g["ent.b1"] += dpre.sum(axis=0)
    dZ = dpre @ p["ent.W1"].T
    dbias = dZ.sum(axis=0)
    g["ent.Wp"] += np.outer(pe, dbias)
    dpe = p["ent.Wp"] @ dbias
    np.add.at(g["tok_emb"], phrase_ids, dpe / len(phrase_ids))
    return dZ


def joint_fwd(p: ModelParams, verb_id: int, prep_id: int | None, variant: int):
    pre = f"act{variant}."
    prep_vec = p["prep_emb"][prep_id] if prep_id is not None else np.zeros(p.d)
    x = np.concatenate([p["verb_emb"][verb_id], prep_vec])
    u = np.tanh(x @ p[pre + "J1"] + p[pre + "jb1"])
    return u @ p[pre + "J2"] + p[pre + "jb2"], (verb_id, prep_id, x, u)


def joint_bwd(p: ModelParams, dj, cache, variant: int, g):
    verb_id, prep_id, x, u = cache
    pre = f"act{variant}."
    g[pre + "J2"] += np.outer(u, dj)
    g[pre + "jb2"] += dj
    dpre = (p[pre + "J2"] @ dj) * (1.0 - u * u)
    g[pre + "J1"] += np.outer(x, dpre)
    g[pre + "jb1"] += dpre
    dx = p[pre + "J1"] @ dpre
    g["verb_emb"][verb_id] += dx[: p.d]
    if prep_id is not None:
        g["prep_emb"][prep_id] += dx[p.d:]


def action_fwd(p: ModelParams, ev: ActionEvaluation, seen: Sequence[np.ndarray], H):
    """Return (scores, logits, cache) for one action evaluation."""
    if len(seen) != len(ev.seen_args):
        raise VariantMismatch(f"{len(seen)} seen score vectors for {len(ev.seen_args)} seen args")
    v = ev.variant
    pre = f"act{v}."
    d = p.d
    Win = p[pre + "Win"]
    if Win.shape[0] != action_input_width(d, v):
        raise VariantMismatch(f"variant {v} weights have width {Win.shape[0]}")
    verb_id = p.vocab.id(ev.verb)
    preps = [prep_index(ev.masked_arg[0])] + [prep_index(a[0]) for a in ev.seen_args]
    joints = [joint_fwd(p, verb_id, pi, v) for pi in preps]
    row = joints[0][0] @ Win[:d] + p[pre + "bin"]
    Xa = H @ Win[-d:]
    for i, e in enumerate(seen):
        off = d + i * (d + 1)
        row = row + joints[i + 1][0] @ Win[off:off + d]
        Xa = Xa + np.outer(e, Win[off + d])
    Xa = Xa + row
    O, Q, K, V, A = kernels.attention_forward(Xa, p[pre + "Wq"], p[pre + "Wk"], p[pre + "Wv"])
    Ha = Xa + O
    U = np.tanh(Ha @ p[pre + "W1"] + p[pre + "b1"])
    z = U @ p[pre + "w2"] + p[pre + "b2"][0]
    return _sigmoid(z), z, (ev, list(seen), H, joints, Xa, Q, K, V, A, Ha, U)


def action_bwd(p: ModelParams, dz, cache, g):
    """Backprop d(loss)/d(logits); returns (dH, [d(loss)/d(seen e_i)])."""
    ev, seen, H, joints, Xa, Q, K, V, A, Ha, U = cache
    v = ev.variant
    pre = f"act{v}."
    d = p.d
    Win = p[pre + "Win"]
    g[pre + "w2"] += U.T @ dz
    g[pre + "b2"][0] += dz.sum()
    dpre = np.outer(dz, p[pre + "w2"]) * (1.0 - U * U)
    g[pre + "W1"] += Ha.T @ dpre
    g[pre + "b1"] += dpre.sum(axis=0)
    dHa = dpre @ p[pre + "W1"].T
    dXa, dWq, dWk, dWv = kernels.attention_backward(dHa, Xa, p[pre + "Wq"], p[pre + "Wk"], p[pre + "Wv"], Q, K, V, A)
    g[pre + "Wq"] += dWq
    g[pre + "Wk"] += dWk
    g[pre + "Wv"] += dWv
    dXa = dXa + dHa
    col = dXa.sum(axis=0)
    gW = g[pre + "Win"]
    g[pre + "bin"] += col
    gW[:d] += np.outer(joints[0][0], col)
    joint_bwd(p, Win[:d] @ col, joints[0][1], v, g)
    d_seen = []
    for i, e in enumerate(seen):
        off = d + i * (d + 1)
        j = joints[i + 1][0]
        gW[off:off + d] += np.outer(j, col)
        joint_bwd(p, Win[off:off + d] @ col, joints[i + 1][1], v, g)
        gW[off + d] += e @ dXa
        d_seen.append(dXa @ Win[off + d])
    gW[-d:] += H.T @ dXa
    dH = dXa @ Win[-d:].T
    return dH, d_seen


# --- public operations ------------------------------------------------------

def snippet_ids(snippet: CodeSnippet, params: ModelParams) -> np.ndarray:
    return params.vocab.ids(snippet.texts[: params.n_max])


def encode_code(snippet: CodeSnippet, params: ModelParams) -> np.ndarray:
    return encode_fwd(params, snippet_ids(snippet, params))[0]


def entity_forward(phrase: str, snippet: CodeSnippet, params: ModelParams) -> np.ndarray:
    if not phrase.strip():
        raise ValueError("entity phrase must be non-empty")
    H = encode_code(snippet, params)
    return entity_fwd(params, H, params.vocab.ids(phrase_words(phrase)))[0]


def joint_verb_prep_embed(verb: str, preposition: str | None, params: ModelParams, variant: int) -> np.ndarray:
    if variant not in (1, 2, 3):
        raise VariantMismatch(f"variant {variant}")
    return joint_fwd(params, params.vocab.id(verb), prep_index(preposition), variant)[0]


def action_forward(ev: ActionEvaluation, seen_scores: Sequence[np.ndarray], snippet: CodeSnippet,
                   params: ModelParams) -> np.ndarray:
    H = encode_code(snippet, params)
    return action_fwd(params, ev, [np.asarray(s, dtype=np.float64) for s in seen_scores], H)[0]


# --- losses with analytic gradients ----------------------------------------

def bce_logits(z, y):
    """Mean binary cross-entropy on logits and its gradient w.r.t. the logits."""
    z = np.asarray(z, dtype=np.float64)
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    return float(loss), (_sigmoid(z) - y) / len(z)


PROB_EPS = 1e-9


def bce_prob(r: float, y: float):
    """Binary cross-entropy on a probability, clipped away from 0 and 1."""
    rc = min(max(r, PROB_EPS), 1.0 - PROB_EPS)
    loss = -(y * math.log(rc) + (1.0 - y) * math.log(1.0 - rc))
    if rc != r:
        return loss, 0.0
    return loss, -y / rc + (1.0 - y) / (1.0 - rc)


@dataclass
class EntityCase:
    """Per-token BCE of the entity module against weak labels."""
    phrase: str
    snippet: CodeSnippet
    labels: np.ndarray

    def trainable(self, p: ModelParams) -> list[str]:
        return p.names(ENTITY_GROUP)

    def loss_and_grad(self, p: ModelParams, g=None):
        g = p.zeros_like() if g is None else g
        ids = snippet_ids(self.snippet, p)
        H, enc_cache = encode_fwd(p, ids)
        _, z, cache = entity_fwd(p, H, p.vocab.ids(phrase_words(self.phrase)))
        loss, dz = bce_logits(z, self.labels[: len(ids)])
        dH = entity_bwd(p, dz, cache, g)
        encode_bwd(p, dH, enc_cache, g)
        return loss, g

    def loss(self, p: ModelParams) -> float:
        ids = snippet_ids(self.snippet, p)
        H, _ = encode_fwd(p, ids)
        _, z, _ = entity_fwd(p, H, p.vocab.ids(phrase_words(self.phrase)))
        return bce_logits(z, self.labels[: len(ids)])[0]


@dataclass
class ActionPretrainCase:
    """Soft-target BCE of the action module against frozen entity scores of the masked phrase.

    Only action parameters receive gradient; the encoder and entity module
    are treated as constants.
    """
    evaluation: ActionEvaluation
    snippet: CodeSnippet

    def trainable(self, p: ModelParams) -> list[str]:
        return p.names(ACTION_GROUP)

    def _inputs(self, p: ModelParams):
        ids = snippet_ids(self.snippet, p)
        H, _ = encode_fwd(p, ids)
        seen = [entity_fwd(p, H, p.vocab.ids(phrase_words(ph)))[0] for _, ph in self.evaluation.seen_args]
        target = entity_fwd(p, H, p.vocab.ids(phrase_words(self.evaluation.masked_arg[1])))[0]
        return H, seen, target

    def loss_and_grad(self, p: ModelParams, g=None):
        g = p.zeros_like() if g is None else g
        H, seen, target = self._inputs(p)
        _, z, cache = action_fwd(p, self.evaluation, seen, H)
        loss, dz = bce_logits(z, target)
        action_bwd(p, dz, cache, g)
        return loss, g

    def loss(self, p: ModelParams) -> float:
        H, seen, target = self._inputs(p)
        _, z, _ = action_fwd(p, self.evaluation, seen, H)
        return bce_logits(z, target)[0]


def learned_weights(p: ModelParams, cfg, n: int):
    """Per-position weights for weighted cosine: learned ones unless the config fixes them."""
    from .similarity import Metric
    if cfg.metric != Metric.WEIGHTED_COSINE or cfg.weighted_cosine_weights is not None:
        return None
    return p.cosine_weights(n)


def layout_forward(p: ModelParams, layout, snippet: CodeSnippet, cfg, keep_cache: bool = False):
    """Score a layout on one snippet.

    Returns (r_hat, per-evaluation similarities, state) where ``state`` holds
    everything :func:`layout_backward` needs when ``keep_cache`` is set.
    """
    from .similarity import similarity, similarity_grad

    ids = snippet_ids(snippet, p)
    H, enc_cache = encode_fwd(p, ids)
    ent: dict[str, tuple] = {}
    for ev in layout.evaluations:
        for _, phrase in ev.seen_args + (ev.masked_arg,):
            if phrase not in ent:
                ent[phrase] = entity_fwd(p, H, p.vocab.ids(phrase_words(phrase)))
    weights = learned_weights(p, cfg, len(ids))
    sims, acts = [], []
    for ev in layout.evaluations:
        seen = [ent[ph][0] for _, ph in ev.seen_args]
        a, z, cache = action_fwd(p, ev, seen, H)
        e = ent[ev.masked_arg[1]][0]
        if keep_cache:
            sims.append(similarity_grad(a, e, cfg, weights))
        else:
            sims.append((similarity(a, e, cfg, weights),))
        acts.append((a, cache))
    r = float(np.prod([s[0] for s in sims]))
    state = (ids, enc_cache, H, ent, acts, sims, weights is not None) if keep_cache else None
    return r, [s[0] for s in sims], state


def layout_backward(p: ModelParams, layout, dr: float, state, g):
    ids, enc_cache, H, ent, acts, sims, learned = state
    values = [s[0] for s in sims]
    dH = np.zeros_like(H)
    d_ent = {ph: np.zeros(len(ids)) for ph in ent}
    for i, ev in enumerate(layout.evaluations):
        others = float(np.prod(values[:i] + values[i + 1:]))
        dsim = dr * others
        _, da, de, dw = sims[i]
        a, cache = acts[i]
        d_ent[ev.masked_arg[1]] += dsim * de
        if dw is not None and learned:
            n = len(ids)
            g["sim.theta"][:n] += dsim * dw * p.cosine_weights(n)
        dz_a = dsim * da * a * (1.0 - a)
        dH_a, d_seen = action_bwd(p, dz_a, cache, g)
        dH += dH_a
        for (_, ph), ds in zip(ev.seen_args, d_seen):
            d_ent[ph] += ds
    for ph, (e, _, cache) in ent.items():
        dz = d_ent[ph] * e * (1.0 - e)
        if np.any(dz):
            dH += entity_bwd(p, dz, cache, g)
    encode_bwd(p, dH, enc_cache, g)


@dataclass
class EndToEndCase:
    """BCE between the layout's match probability and the pair label."""
    layout: object
    snippet: CodeSnippet
    label: float
    cfg: object = None

    def _cfg(self):
        from .similarity import SimilarityConfig
        return self.cfg or SimilarityConfig()

    def loss_and_grad(self, p: ModelParams, g=None):
        g = p.zeros_like() if g is None else g
        r, _, state = layout_forward(p, self.layout, self.snippet, self._cfg(), keep_cache=True)
        loss, dr = bce_prob(r, self.label)
        if dr != 0.0:
            layout_backward(p, self.layout, dr, state, g)
        return loss, g

    def loss(self, p: ModelParams) -> float:
        r, _, _ = layout_forward(p, self.layout, self.snippet, self._cfg())
        return bce_prob(r, self.label)[0]


# --- finite-difference check ------------------------------------------------

def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero coordinates from
    turning round-off into huge relative errors."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central_difference(loss_case, params: ModelParams, name: str, i: int, eps: float, order: int) -> float:
    flat = params[name].reshape(-1)
    old = flat[i]
    steps = ((1, 1.0),) if order == 2 else ((1, 8.0), (2, -1.0))
    total = 0.0
    for m, c in steps:
        flat[i] = old + m * eps
        up = loss_case.loss(params)
        flat[i] = old - m * eps
        down = loss_case.loss(params)
        total += c * (up - down)
    flat[i] = old
    return total / (2.0 * eps if order == 2 else 12.0 * eps)


def gradient_check(loss_case, params: ModelParams, epsilon: float = 1e-4, n_samples: int = 240,
                   seed: int = 0, names: Iterable[str] | None = None, order: int = 4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``order`` selects the 3-point (2) or 5-point (4) central stencil.  Half of
    the sampled coordinates have a nonzero analytic gradient, the rest are
    drawn uniformly over the checked tensors.  By default only the tensors the
    case trains are checked (``loss_case.trainable``).
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    _, grads = loss_case.loss_and_grad(params)
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteGradient(k)
    rng = np.random.default_rng(seed)
    if names is None:
        names = getattr(loss_case, "trainable", lambda p: list(p.tensors))(params)
    pool = list(names)
    nonzero = [(k, i) for k in pool for i in np.flatnonzero(grads[k])]
    coords: list[tuple[str, int]] = []
    if nonzero:
        take = rng.choice(len(nonzero), size=min(n_samples // 2, len(nonzero)), replace=False)
        coords += [nonzero[i] for i in take]
    sizes = np.array([params[k].size for k in pool], dtype=float)
    while len(coords) < n_samples:
        k = pool[rng.choice(len(pool), p=sizes / sizes.sum())]
        coords.append((k, int(rng.integers(params[k].size))))
    worst = 0.0
    for k, i in coords:
        numeric = _central_difference(loss_case, params, k, i, epsilon, order)
        worst = max(worst, relative_error(float(grads[k].reshape(-1)[i]), numeric))
    return worst
