"""Corpus records, tokenizers and the JSONL corpus format.

A corpus file holds one JSON object per line with ``id``, ``code`` and
``docstring`` fields.  Each line yields one snippet and, when the docstring is
non-empty, one query paired with that snippet.
"""
from __future__ import annotations

import json
import keyword
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CorpusIOError, DataError, DuplicateIdError, FormatError

log = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 256

IDENTIFIER = "identifier"
KEYWORD = "keyword"
LITERAL = "literal"
PUNCTUATION = "punctuation"
OTHER = "other"
TOKEN_KINDS = (IDENTIFIER, KEYWORD, LITERAL, PUNCTUATION, OTHER)


@dataclass(frozen=True)
class CodeToken:
    text: str
    span: tuple[int, int]
    kind: str


@dataclass(frozen=True)
class CodeSnippet:
    id: str
    source_text: str
    tokens: tuple[CodeToken, ...]

    @classmethod
    def from_source(cls, ident: str, source_text: str,
                    max_tokens: int | None = DEFAULT_MAX_TOKENS) -> "CodeSnippet":
        tokens = tokenize_code(source_text)
        if max_tokens is not None and len(tokens) > max_tokens:
            log.info("snippet %s truncated from %d to %d tokens", ident, len(tokens), max_tokens)
            tokens = tokens[:max_tokens]
        return cls(ident, source_text, tuple(tokens))

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class QueryRecord:
    id: str
    raw_text: str
    paired_snippet_id: str


@dataclass(frozen=True)
class Corpus:
    snippets: Mapping[str, CodeSnippet] = field(default_factory=dict)
    queries: tuple[QueryRecord, ...] = ()

    def __post_init__(self):
        for q in self.queries:
            if q.paired_snippet_id not in self.snippets:
                raise DataError(f"query {q.id!r} pairs with unknown snippet {q.paired_snippet_id!r}")

    def __len__(self) -> int:
        return len(self.snippets)

    @property
    def snippet_ids(self) -> list[str]:
        return list(self.snippets)

    def snippet_for(self, query: QueryRecord) -> CodeSnippet:
        return self.snippets[query.paired_snippet_id]

    def subset(self, queries: Iterable[QueryRecord]) -> "Corpus":
        """Same snippet pool, restricted query list."""
        return Corpus(self.snippets, tuple(queries))


# --- code tokenization -----------------------------------------------------

_STRING_PREFIX = r"(?:[rRbBuUfF]|[rR][bBfF]|[bBfF][rR])?"
_CODE_TOKEN_RE = re.compile(
    r"""
    (?P<comment>\#[^\n]*)
  | (?P<string>""" + _STRING_PREFIX + r"""(?:'''(?:\\.|[^\\])*?'''|\"\"\"(?:\\.|[^\\])*?\"\"\"
                |'(?:\\.|[^'\\\n])*'|"(?:\\.|[^"\\\n])*"))
  | (?P<number>(?:0[xX][0-9a-fA-F_]+|0[oO][0-7_]+|0[bB][01_]+
                |(?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][+-]?\d+)?[jJ]?))
  | (?P<name>[^\W\d]\w*)
  | (?P<op>\*\*=|//=|>>=|<<=|\.\.\.|->|:=|==|!=|<=|>=|\*\*|//|<<|>>|[-+*/%&|^@]=|[-+*/%&|^~<>=@.,:;()\[\]{}])
  | (?P<space>\s+)
  | (?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_KEYWORDS = frozenset(keyword.kwlist)


def split_identifier(name: str) -> list[tuple[str, int, int]]:
    """Split an identifier into lowercase subtokens with their offsets.

    Splits on underscores, lower->upper transitions, the last capital of an
    acronym run followed by lowercase (``HTTPServer`` -> ``http``, ``server``)
    and letter/digit boundaries.
    """
    parts = []
    start = None
    n = len(name)
    for i, ch in enumerate(name):
        if ch == "_":
            if start is not None:
                parts.append((start, i))
                start = None
            continue
        if start is None:
            start = i
            continue
        prev = name[i - 1]
        boundary = (
            (ch.isupper() and not prev.isupper() and not prev.isdigit())
            or (ch.isupper() and prev.isupper() and i + 1 < n and name[i + 1].islower())
            or (ch.isdigit() != prev.isdigit())
        )
        if boundary:
            parts.append((start, i))
            start = i
    if start is not None:
        parts.append((start, n))
    return [(name[a:b].lower(), a, b) for a, b in parts]


def tokenize_code(source_text: str) -> list[CodeToken]:
    """Lex Python-style source into identifier subtokens, keywords, literals and punctuation.

    Comments and whitespace are dropped.  Identifiers are split into lowercase
    subtokens, each with its own span inside the identifier; keywords and
    literals keep their source text.
    """
    tokens: list[CodeToken] = []
    for m in _CODE_TOKEN_RE.finditer(source_text):
        group = m.lastgroup
        start, end = m.span()
        text = m.group()
        if group in ("space", "comment"):
            continue
        if group == "name":
            if text in _KEYWORDS:
                tokens.append(CodeToken(text, (start, end), KEYWORD))
                continue
            for sub, a, b in split_identifier(text):
                tokens.append(CodeToken(sub, (start + a, start + b), IDENTIFIER))
        elif group in ("string", "number"):
            tokens.append(CodeToken(text, (start, end), LITERAL))
        elif group == "op":
            tokens.append(CodeToken(text, (start, end), PUNCTUATION))
        else:
            tokens.append(CodeToken(text, (start, end), OTHER))
    return tokens


_QUERY_WORD_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


def tokenize_query(text: str) -> list[str]:
    """Lowercase word tokens; any run of punctuation or whitespace separates words."""
    return _QUERY_WORD_RE.findall(text.lower())


# --- JSONL I/O -------------------------------------------------------------

def corpus_from_records(records: Iterable[Mapping], max_tokens: int | None = DEFAULT_MAX_TOKENS) -> Corpus:
    snippets: dict[str, CodeSnippet] = {}
    queries: list[QueryRecord] = []
    for rec in records:
        ident = rec["id"]
        if ident in snippets:
            raise DuplicateIdError(ident)
        snippets[ident] = CodeSnippet.from_source(ident, rec["code"], max_tokens)
        if rec.get("docstring"):
            queries.append(QueryRecord(ident, rec["docstring"], ident))
    return Corpus(snippets, tuple(queries))


def _parse_line(lineno: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise FormatError(lineno, "record is not a JSON object")
    for key in ("id", "code", "docstring"):
        if not isinstance(obj.get(key), str):
            raise FormatError(lineno, f"field {key!r} missing or not a string")
    if not obj["id"]:
        raise FormatError(lineno, "empty id")
    return obj


def load_corpus(path: str | Path, max_tokens: int | None = DEFAULT_MAX_TOKENS) -> Corpus:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusIOError(f"cannot read corpus {path}: {exc}") from exc
    records = []
    seen = set()
    # JSON strings may hold U+0085 or U+2028 unescaped, so split on newlines only
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        rec = _parse_line(lineno, line)
        if rec["id"] in seen:
            raise DuplicateIdError(rec["id"])
        seen.add(rec["id"])
        records.append(rec)
    return corpus_from_records(records, max_tokens)


def corpus_records(corpus: Corpus) -> list[dict]:
    docs = {q.paired_snippet_id: q.raw_text for q in corpus.queries}
    return [{"id": sid, "code": snip.source_text, "docstring": docs.get(sid, "")}
            for sid, snip in corpus.snippets.items()]


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus_records(corpus):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def dumps_corpus(corpus: Corpus) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in corpus_records(corpus))


def split_queries(corpus: Corpus, fraction: float, seed: int) -> tuple[list[QueryRecord], list[QueryRecord]]:
    """Deterministic (rest, held_out) split of the query list."""
    import numpy as np

    order = np.random.default_rng(seed).permutation(len(corpus.queries))
    n_held = max(1, int(round(fraction * len(order)))) if len(order) > 1 else 0
    held = sorted(order[:n_held].tolist())
    rest = sorted(order[n_held:].tolist())
    return [corpus.queries[i] for i in rest], [corpus.queries[i] for i in held]


def texts(tokens: Sequence[CodeToken]) -> list[str]:
    return [t.text for t in tokens]
