"""Lexicon-driven categorial chart parser for code-search queries.

Queries are read as imperative clauses of the form
``VERB object [prep argument]*`` where an argument is either a noun phrase or
an embedded clause (gerund after ``by``, infinitive after ``to``).  Parsing
uses two atomic categories, ``V`` (an action clause) and ``N`` (a noun
phrase), combined by forward and backward application in a CKY chart:

    verb           V/N   or  V
    noun           N     or  N/N   (compounds such as "point record")
    determiner     N/N
    preposition    (V\\V)/N  or  (V\\V)/V
    "using"        (V\\V)/N   yields a nested ``use`` action

When several derivations span the sentence, the one whose prepositional
phrases attach to the nearest preceding verb wins.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Union

from .corpus import tokenize_query

PREPOSITIONS = ("to", "from", "in", "by", "with", "using", "of", "into", "for")

# TODO(parser): represent negation/adverbs once a query form for them is chosen.
UNSUPPORTED_WORDS = frozenset({
    "not", "no", "never", "don't", "doesn't", "dont", "doesnt", "isn't", "cannot", "can't",
    "won't", "without", "unless", "quickly", "efficiently", "properly", "correctly",
    "safely", "only", "also", "then", "again", "always", "already", "just",
})

QUESTION_PREFIXES = (
    "how do i", "how can i", "how do you", "how should i", "how to", "what is the best way to",
    "what is", "what's", "is there a way to", "i want to", "i need to",
)
_LANGUAGE_RE = re.compile(r"\b(?:(?:in|with|using|for)\s+)?python\s*(?:\d+(?:\.\d+)*)?(?=\W|$)")
_TRAILING_PUNCT_RE = re.compile(r"[\s.,;:!?]+$")
_SENTENCE_BREAK_RE = re.compile(r"[.!?;]\s+\w")


# --- parse tree ------------------------------------------------------------

@dataclass(frozen=True)
class ActionNode:
    verb: str
    args: tuple["Arg", ...]
    # None: same as verb; "": implicit action with no surface word ("using X")
    surface: str | None = field(default=None, compare=False)

    @property
    def entity_args(self) -> list["Arg"]:
        return [a for a in self.args if a.is_entity]

    @property
    def action_args(self) -> list["Arg"]:
        return [a for a in self.args if not a.is_entity]

    def walk(self):
        """Depth-first, pre-order traversal of action nodes."""
        yield self
        for a in self.args:
            if not a.is_entity:
                yield from a.payload.walk()

    def notation(self) -> str:
        parts = [self.verb.capitalize()] + [a.notation() for a in self.args]
        return "ACTION(" + ", ".join(parts) + ")"


@dataclass(frozen=True)
class Arg:
    preposition: str | None
    payload: Union[str, ActionNode]

    def __post_init__(self):
        if isinstance(self.payload, str) and not self.payload.strip():
            raise ValueError("entity phrase must be non-empty")

    @property
    def is_entity(self) -> bool:
        return isinstance(self.payload, str)

    def notation(self) -> str:
        prep = self.preposition.upper() if self.preposition else "None"
        body = self.payload if self.is_entity else self.payload.notation()
        return f"({prep}, {body})"


def entity(phrase: str, preposition: str | None = None) -> Arg:
    return Arg(preposition, phrase)


def action(verb: str, *args: Arg) -> ActionNode:
    return ActionNode(verb, tuple(args))


@dataclass(frozen=True)
class SemanticParse:
    root: ActionNode

    def notation(self) -> str:
        return self.root.notation()

    @property
    def actions(self) -> list[ActionNode]:
        return list(self.root.walk())

    def content_words(self) -> list[str]:
        """Verb surface forms and entity phrase words in sentence order."""
        out: list[str] = []

        def visit(node: ActionNode):
            if node.surface is None:
                out.append(node.verb)
            elif node.surface:
                out.append(node.surface)
            for a in node.args:
                if a.is_entity:
                    out.extend(a.payload.split())
                else:
                    visit(a.payload)

        visit(self.root)
        return out


class FailureReason(str, Enum):
    NO_VERB = "no_verb"
    LEXICON_MISS = "lexicon_miss"
    STRUCTURE_UNSUPPORTED = "structure_unsupported"


@dataclass(frozen=True)
class ParseFailure:
    reason: FailureReason
    detail: str = ""

    def __bool__(self):
        return False


ParseOutcome = Union[SemanticParse, ParseFailure]


def max_depth(parse: SemanticParse | ActionNode) -> int:
    node = parse.root if isinstance(parse, SemanticParse) else parse
    nested = [max_depth(a.payload) for a in node.args if not a.is_entity]
    return 1 + max(nested, default=0)


def avg_args_per_action(parse: SemanticParse) -> Fraction:
    nodes = parse.actions
    return Fraction(sum(len(n.entity_args) for n in nodes), len(nodes))


# --- lexicon ---------------------------------------------------------------

VERB, NOUN, PREP, DET = "verb", "noun", "prep", "det"


class Lexicon:
    """Word -> set of coarse categories, with verb inflection lookup."""

    def __init__(self, entries: Mapping[str, str | Iterable[str]]):
        self.entries: dict[str, frozenset[str]] = {}
        for word, cats in entries.items():
            cats = (cats,) if isinstance(cats, str) else tuple(cats)
            bad = set(cats) - {VERB, NOUN, PREP, DET}
            if bad:
                raise ValueError(f"unknown categories {sorted(bad)} for {word!r}")
            self.entries[word.lower()] = frozenset(cats)
        self.verbs = frozenset(w for w, c in self.entries.items() if VERB in c)

    @classmethod
    def default(cls) -> "Lexicon":
        return _default_lexicon()

    @classmethod
    def from_file(cls, path: str | Path) -> "Lexicon":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def categories(self, word: str) -> frozenset[str]:
        return self.entries.get(word, frozenset())

    def known(self, word: str) -> bool:
        return word in self.entries or self.verb_lemma(word) is not None

    def verb_lemma(self, word: str, allow_inflected: bool = True) -> str | None:
        if word in self.verbs:
            return word
        if not allow_inflected:
            return None
        return self.gerund_lemma(word) or self._third_person_lemma(word)

    def gerund_lemma(self, word: str) -> str | None:
        if not word.endswith("ing") or len(word) < 5:
            return None
        stem = word[:-3]
        for cand in (stem, stem + "e", stem[:-1] if len(stem) > 2 and stem[-1] == stem[-2] else None):
            if cand and cand in self.verbs:
                return cand
        return None

    def _third_person_lemma(self, word: str) -> str | None:
        for cand in (word[:-1] if word.endswith("s") else None,
                     word[:-2] if word.endswith("es") else None):
            if cand and cand in self.verbs:
                return cand
        return None


@lru_cache(maxsize=1)
def _default_lexicon() -> Lexicon:
    text = resources.files("nsss").joinpath("data/lexicon.json").read_text(encoding="utf-8")
    return Lexicon(json.loads(text))


# --- chart parser ----------------------------------------------------------

# Categories are plain strings; complex ones are built from these constants.
V, N = "V", "N"
V_N = "V/N"
N_N = "N/N"
VMOD = "V\\V"
PREP_N = "(V\\V)/N"
PREP_V = "(V\\V)/V"


@dataclass(frozen=True)
class _Item:
    cat: str
    sem: object
    cost: int
    head: int  # position of the head verb for clause items


def _apply(left: _Item, right: _Item) -> _Item | None:
    lc, rc = left.cat, right.cat
    if lc == N_N and rc == N:
        return _Item(N, left.sem + right.sem, left.cost + right.cost, -1)
    if lc == V_N and rc == N:
        verb, surface = left.sem
        node = ActionNode(verb, (Arg(None, " ".join(right.sem)),), surface)
        return _Item(V, node, left.cost + right.cost, left.head)
    if lc == PREP_N and rc == N:
        prep, pos = left.sem
        phrase = " ".join(right.sem)
        if prep == "using":
            payload = ActionNode("use", (Arg(None, phrase),), "")
            arg = Arg("using", payload)
        else:
            arg = Arg(prep, phrase)
        return _Item(VMOD, (arg, pos), left.cost + right.cost, -1)
    if lc == PREP_V and rc == V:
        if not right.sem.entity_args:
            return None
        prep, pos = left.sem
        return _Item(VMOD, (Arg(prep, right.sem), pos), left.cost + right.cost, -1)
    if lc == V and rc == VMOD:
        arg, prep_pos = right.sem
        node: ActionNode = left.sem
        node = ActionNode(node.verb, node.args + (arg,), node.surface)
        cost = left.cost + right.cost + (prep_pos - left.head)
        return _Item(V, node, cost, left.head)
    return None


class QueryParser:
    """Preprocess and parse queries against a lexicon."""

    def __init__(self, lexicon: Lexicon | None = None):
        self.lexicon = lexicon or Lexicon.default()

    # preprocessing -----------------------------------------------------

    def preprocess(self, raw: str) -> str:
        text = raw
        while True:
            new = self._preprocess_once(text)
            if new == text:
                return new
            text = new

    def _preprocess_once(self, raw: str) -> str:
        text = " ".join(raw.lower().split())
        text = _TRAILING_PUNCT_RE.sub("", text)
        text = _LANGUAGE_RE.sub(" ", text)
        text = " ".join(text.split())
        text = _TRAILING_PUNCT_RE.sub("", text)
        for prefix in QUESTION_PREFIXES:
            if text == prefix or text.startswith(prefix + " "):
                text = text[len(prefix):].strip()
                break
        text = _TRAILING_PUNCT_RE.sub("", text)
        words = tokenize_query(text)
        if words and self._needs_verb(words):
            text = "load " + text
        return text

    def _needs_verb(self, words: list[str]) -> bool:
        first = words[0]
        if self.lexicon.verb_lemma(first) is not None:
            return False
        if self.lexicon.known(first):
            return True
        return not any(self.lexicon.verb_lemma(w) is not None for w in words[1:])

    # parsing -----------------------------------------------------------

    def parse(self, cleaned: str) -> ParseOutcome:
        if _SENTENCE_BREAK_RE.search(cleaned):
            return ParseFailure(FailureReason.STRUCTURE_UNSUPPORTED, "multiple sentences")
        words = tokenize_query(cleaned)
        if not words:
            return ParseFailure(FailureReason.NO_VERB, "empty query")
        blocked = [w for w in words if w in UNSUPPORTED_WORDS]
        if blocked:
            return ParseFailure(FailureReason.STRUCTURE_UNSUPPORTED, f"unsupported word {blocked[0]!r}")
        lexical = [self._lexical_items(i, w, words) for i, w in enumerate(words)]
        if not any(it.cat in (V, V_N) for items in lexical for it in items):
            return ParseFailure(FailureReason.NO_VERB, "no verb reading for any word")
        best = self._chart(lexical)
        if best is None:
            unknown = [w for w in words if not self.lexicon.known(w)]
            if unknown:
                return ParseFailure(FailureReason.LEXICON_MISS, f"no derivation; unknown {unknown[0]!r}")
            return ParseFailure(FailureReason.STRUCTURE_UNSUPPORTED, "no spanning derivation")
        root: ActionNode = best.sem
        for node in root.walk():
            if not node.entity_args:
                return ParseFailure(FailureReason.STRUCTURE_UNSUPPORTED,
                                    f"action {node.verb!r} has no entity argument")
        return SemanticParse(root)

    def parse_query(self, raw: str) -> ParseOutcome:
        return self.parse(self.preprocess(raw))

    def _lexical_items(self, i: int, word: str, words: list[str]) -> list[_Item]:
        lex = self.lexicon
        cats = lex.categories(word)
        items: list[_Item] = []
        after_prep = i > 0 and PREP in lex.categories(words[i - 1])
        verb = lex.verb_lemma(word, allow_inflected=(i == 0 or after_prep))
        if verb is None and not cats:
            # catch-all: unknown words are verbs sentence-initially (or gerunds after a
            # preposition) and nouns elsewhere
            if i == 0:
                verb = word
            elif after_prep and word.endswith("ing") and len(word) > 4:
                verb = word[:-3]
        if verb is not None and (i == 0 or after_prep):
            # after a preposition, prefer a noun reading when the word has one
            penalty = 1 if (i > 0 and NOUN in cats) else 0
            items.append(_Item(V_N, (verb, word), penalty, i))
            node = ActionNode(verb, (), word)
            items.append(_Item(V, node, penalty, i))
        if PREP in cats:
            items.append(_Item(PREP_V if word != "using" else PREP_N, (word, i), 0, -1))
            if word != "using":
                items.append(_Item(PREP_N, (word, i), 0, -1))
        if DET in cats:
            items.append(_Item(N_N, (word,), 0, -1))
        if NOUN in cats or (not cats and i > 0 and verb is None) or (cats == {VERB} and i > 0 and not after_prep):
            items.append(_Item(N, (word,), 0, -1))
            items.append(_Item(N_N, (word,), 0, -1))
        return items

    @staticmethod
    def _chart(lexical: list[list[_Item]]) -> _Item | None:
        n = len(lexical)
        chart: dict[tuple[int, int], dict[str, _Item]] = {}
        for i, items in enumerate(lexical):
            cell: dict[str, _Item] = {}
            for it in items:
                if it.cat not in cell:
                    cell[it.cat] = it
            chart[(i, i + 1)] = cell
        for width in range(2, n + 1):
            for start in range(0, n - width + 1):
                end = start + width
                cell = {}
                for mid in range(start + 1, end):
                    for left in chart[(start, mid)].values():
                        for right in chart[(mid, end)].values():
                            out = _apply(left, right)
                            if out is None:
                                continue
                            cur = cell.get(out.cat)
                            if cur is None or out.cost < cur.cost:
                                cell[out.cat] = out
                chart[(start, end)] = cell
        return chart[(0, n)].get(V)


_DEFAULT_PARSER: QueryParser | None = None


def default_parser() -> QueryParser:
    global _DEFAULT_PARSER
    if _DEFAULT_PARSER is None:
        _DEFAULT_PARSER = QueryParser()
    return _DEFAULT_PARSER


def preprocess(raw: str) -> str:
    return default_parser().preprocess(raw)


def parse(cleaned: str) -> ParseOutcome:
    return default_parser().parse(cleaned)
