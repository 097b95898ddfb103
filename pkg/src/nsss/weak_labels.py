"""Noisy per-token supervision for the entity module.

Two sources are combined: keyword matching between entity-phrase words and
code tokens (exact, substring or superstring, plus a small synonym table) and
a syntactic pass over the Python AST that tags literal constructors and
comprehensions with the data type they build.
"""
from __future__ import annotations

import ast
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import CodeSnippet, Corpus, tokenize_query
from .errors import LengthMismatch

KEYWORD = "keyword"
STATIC = "static"

MIN_SUBSTRING = 3

SYNONYM_GROUPS: tuple[frozenset[str], ...] = (
    frozenset({"dict", "map"}),
    frozenset({"list", "array"}),
    frozenset({"string", "str", "text"}),
    frozenset({"directory", "folder", "dir", "path"}),
    frozenset({"boolean", "bool", "flag"}),
    frozenset({"file", "fp"}),
)

# words that never carry entity meaning on their own
STOPWORDS = frozenset({
    "a", "an", "the", "all", "each", "every", "some", "any", "given", "new", "of",
    "to", "from", "in", "by", "with", "using", "into", "for", "and", "or",
})

# AST construct -> data type names it builds
STATIC_TYPES: dict[str, tuple[str, ...]] = {
    "List": ("list",),
    "ListComp": ("list",),
    "GeneratorExp": ("generator",),
    "Dict": ("dict",),
    "DictComp": ("dict",),
    "Set": ("set",),
    "SetComp": ("set",),
    "BoolOp": ("boolean",),
    "Bytes": ("bytes",),
    "String": ("string",),
    "Tuple": ("tuple",),
}


@dataclass(frozen=True)
class WeakLabelVector:
    labels: np.ndarray  # int8, one per token
    sources: tuple[frozenset[str], ...]
    analysis_unavailable: bool = False

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, WeakLabelVector):
            return NotImplemented
        return (np.array_equal(self.labels, other.labels) and self.sources == other.sources
                and self.analysis_unavailable == other.analysis_unavailable)

    __hash__ = None

    @classmethod
    def from_sources(cls, sources: Sequence[Iterable[str]], analysis_unavailable: bool = False):
        sources = tuple(frozenset(s) for s in sources)
        labels = np.array([1 if s else 0 for s in sources], dtype=np.int8)
        return cls(labels, sources, analysis_unavailable)

    @classmethod
    def zeros(cls, n: int, analysis_unavailable: bool = False):
        return cls.from_sources([()] * n, analysis_unavailable)


def _substring_match(a: str, b: str) -> bool:
    if a == b:
        return True
    if len(a) >= MIN_SUBSTRING and a in b:
        return True
    return len(b) >= MIN_SUBSTRING and b in a


def expand_synonyms(word: str) -> set[str]:
    """The word plus every synonym whose group has a member contained in it (``folders`` -> folder group)."""
    out = {word}
    for group in SYNONYM_GROUPS:
        if any(m == word or (len(m) >= MIN_SUBSTRING and m in word) for m in group):
            out |= group
    return out


def phrase_terms(entity_phrase: str) -> set[str]:
    terms: set[str] = set()
    for w in tokenize_query(entity_phrase):
        if w not in STOPWORDS:
            terms |= expand_synonyms(w)
    return terms


def token_matches(token_text: str, terms: Iterable[str]) -> bool:
    tok = token_text.lower()
    return any(_substring_match(tok, t) for t in terms)


def keyword_labels(entity_phrase: str, snippet: CodeSnippet) -> WeakLabelVector:
    terms = phrase_terms(entity_phrase)
    return WeakLabelVector.from_sources(
        [(KEYWORD,) if token_matches(t.text, terms) else () for t in snippet.tokens])


# --- static analysis -------------------------------------------------------

def _construct_name(node: ast.AST) -> str | None:
    name = type(node).__name__
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bytes):
            return "Bytes"
        if isinstance(node.value, str):
            return "String"
        return None
    if isinstance(node, ast.JoinedStr):
        return "String"
    return name if name in STATIC_TYPES else None


def _line_offsets(source: str) -> list[int]:
    offsets = [0]
    for line in source.splitlines(keepends=True):
        offsets.append(offsets[-1] + len(line))
    return offsets


def _char_offset(source_lines: list[str], line_starts: list[int], lineno: int, col_bytes: int) -> int:
    line = source_lines[lineno - 1] if lineno - 1 < len(source_lines) else ""
    prefix = line.encode("utf-8")[:col_bytes].decode("utf-8", errors="ignore")
    return line_starts[lineno - 1] + len(prefix)


def typed_spans(source_text: str) -> list[tuple[str, int, int]]:
    """(type name, start, end) character spans of literal constructs and comprehensions.

    Raises SyntaxError (or ValueError/RecursionError from the compiler) for
    sources that do not parse.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tree = ast.parse(source_text)
    lines = source_text.splitlines(keepends=True)
    starts = _line_offsets(source_text)
    out = []
    for node in ast.walk(tree):
        construct = _construct_name(node)
        if construct is None or getattr(node, "end_lineno", None) is None:
            continue
        a = _char_offset(lines, starts, node.lineno, node.col_offset)
        b = _char_offset(lines, starts, node.end_lineno, node.end_col_offset)
        for tname in STATIC_TYPES[construct]:
            out.append((tname, a, b))
    return out


def static_type_labels(snippet: CodeSnippet, entity_phrase: str) -> WeakLabelVector:
    n = len(snippet.tokens)
    try:
        spans = typed_spans(snippet.source_text)
    except (SyntaxError, ValueError, RecursionError, MemoryError, OverflowError):
        return WeakLabelVector.zeros(n, analysis_unavailable=True)
    terms = phrase_terms(entity_phrase)
    hits = [(a, b) for tname, a, b in spans if token_matches(tname, terms)]
    sources = []
    for tok in snippet.tokens:
        s, e = tok.span
        inside = any(a <= s and e <= b for a, b in hits)
        sources.append((STATIC,) if inside else ())
    return WeakLabelVector.from_sources(sources)


def combine_labels(a: WeakLabelVector, b: WeakLabelVector) -> WeakLabelVector:
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} != {len(b)}")
    sources = [x | y for x, y in zip(a.sources, b.sources)]
    return WeakLabelVector.from_sources(sources, a.analysis_unavailable or b.analysis_unavailable)


def label_snippet(entity_phrase: str, snippet: CodeSnippet) -> WeakLabelVector:
    return combine_labels(keyword_labels(entity_phrase, snippet), static_type_labels(snippet, entity_phrase))


@dataclass(frozen=True)
class PretrainExample:
    entity_phrase: str
    snippet_id: str
    labels: WeakLabelVector
    matched: bool


def build_pretraining_set(corpus: Corpus, seed: int, parser=None, queries=None) -> list[PretrainExample]:
    """Matched and randomly mismatched (phrase, snippet) examples, one of each per phrase."""
    from .layout import compile_layout, entity_phrases
    from .parser import default_parser

    parser = parser or default_parser()
    rng = np.random.default_rng(seed)
    ids = corpus.snippet_ids
    index = {sid: i for i, sid in enumerate(ids)}
    out: list[PretrainExample] = []
    for q in (corpus.queries if queries is None else queries):
        parsed = parser.parse_query(q.raw_text)
        if not parsed:
            continue
        phrases = sorted({p for _, p in entity_phrases(compile_layout(parsed))})
        own = index[q.paired_snippet_id]
        for phrase in phrases:
            if len(ids) < 2:
                break
            j = int(rng.integers(len(ids) - 1))
            j = j + 1 if j >= own else j
            for sid, matched in ((q.paired_snippet_id, True), (ids[j], False)):
                snip = corpus.snippets[sid]
                out.append(PretrainExample(phrase, sid, label_snippet(phrase, snip), matched))
    return out
