"""Flatten a semantic parse into the list of action evaluations that get scored.

Every action node becomes one evaluation: its entity arguments are split into
the arguments the action module sees and the single masked argument it has to
predict.  Nested actions contribute their own evaluation and are otherwise
dropped from the parent (the prediction is a conjunction over evaluations).

Masking order: the root action masks its last entity argument in surface
order ("load all tables from ???").  Nested actions first move their
preposition-less direct object to the end, so "by reading points from stream"
is evaluated as ``ACTION(Read, (FROM, stream), (None, points))`` with
``points`` masked.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import LayoutError
from .parser import ActionNode, SemanticParse

log = logging.getLogger(__name__)

MAX_ENTITY_ARGS = 3

EntityRef = tuple[str | None, str]


def _ref_notation(ref: EntityRef) -> str:
    prep, phrase = ref
    return f"({prep.upper() if prep else 'None'}, {phrase})"


@dataclass(frozen=True)
class ActionEvaluation:
    verb: str
    seen_args: tuple[EntityRef, ...]
    masked_arg: EntityRef

    def __post_init__(self):
        if not 1 <= self.variant <= MAX_ENTITY_ARGS:
            raise LayoutError("bad_variant", f"{len(self.seen_args)} seen args")

    @property
    def variant(self) -> int:
        return len(self.seen_args) + 1

    def notation(self) -> str:
        parts = [self.verb.capitalize()] + [_ref_notation(r) for r in self.seen_args + (self.masked_arg,)]
        return "ACTION(" + ", ".join(parts) + ")"


@dataclass(frozen=True)
class ModuleLayout:
    evaluations: tuple[ActionEvaluation, ...]

    def __post_init__(self):
        if not self.evaluations:
            raise LayoutError("empty_layout")

    def notation(self) -> str:
        return "\n".join(f"{i}. {ev.notation()}" for i, ev in enumerate(self.evaluations, 1))


def masking_order(node: ActionNode, nested: bool) -> list[EntityRef]:
    """Entity arguments of ``node`` in the order used for masking (last one is masked)."""
    refs = [(a.preposition, a.payload) for a in node.entity_args]
    if len(refs) > MAX_ENTITY_ARGS:
        log.warning("action %r has %d entity args; keeping the first %d",
                    node.verb, len(refs), MAX_ENTITY_ARGS)
        refs = refs[:MAX_ENTITY_ARGS]
    if nested:
        direct = [r for r in refs if r[0] is None][:1]
        if direct:
            refs.remove(direct[0])
            refs.append(direct[0])
    return refs


def compile_layout(parse: SemanticParse | ActionNode) -> ModuleLayout:
    root = parse.root if isinstance(parse, SemanticParse) else parse
    evaluations = []

    def visit(node: ActionNode, nested: bool):
        refs = masking_order(node, nested)
        if not refs:
            raise LayoutError("no_entity_arg", f"action {node.verb!r}")
        evaluations.append(ActionEvaluation(node.verb, tuple(refs[:-1]), refs[-1]))
        for a in node.action_args:
            visit(a.payload, True)

    visit(root, False)
    return ModuleLayout(tuple(evaluations))


def entity_phrases(layout: ModuleLayout) -> set[EntityRef]:
    out: set[EntityRef] = set()
    for ev in layout.evaluations:
        out.update(ev.seen_args)
        out.add(ev.masked_arg)
    return out
