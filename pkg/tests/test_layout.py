import logging

import pytest
from hypothesis import given, strategies as st

from nsss.errors import LayoutError
from nsss.layout import ActionEvaluation, ModuleLayout, compile_layout, entity_phrases, masking_order
from nsss.parser import ActionNode, Arg, SemanticParse, action, entity
from nsss.synthetic import generate_synthetic_corpus

POINTS_QUERY = "construct point record by reading points from stream"


def test_nested_decomposition(parser):
    layout = compile_layout(parser.parse_query(POINTS_QUERY))
    assert layout.evaluations == (
        ActionEvaluation("construct", (), (None, "point record")),
        ActionEvaluation("read", (("from", "stream"),), (None, "points")),
    )
    assert [ev.variant for ev in layout.evaluations] == [1, 2]
    assert layout.evaluations[1].notation() == "ACTION(Read, (FROM, stream), (None, points))"


def test_tables(parser):
    layout = compile_layout(parser.parse_query("Load all tables from dataset"))
    assert layout.evaluations == (ActionEvaluation("load", ((None, "all tables"),), ("from", "dataset")),)


def test_single_arg(parser):
    (ev,) = compile_layout(parser.parse_query("navigate folders")).evaluations
    assert ev == ActionEvaluation("navigate", (), (None, "folders")) and ev.variant == 1


def test_no_entity_arg():
    node = ActionNode("run", (Arg("by", action("read", entity("x"))),))
    with pytest.raises(LayoutError):
        compile_layout(node)


def test_cap_at_three(caplog):
    node = action("merge", entity("a"), entity("b", "with"), entity("c", "into"), entity("d", "for"))
    with caplog.at_level(logging.WARNING):
        (ev,) = compile_layout(node).evaluations
    assert ev.variant == 3
    assert ev.masked_arg == ("into", "c")
    assert "keeping the first 3" in caplog.text


def test_empty_layout_rejected():
    with pytest.raises(LayoutError):
        ModuleLayout(())


def test_entity_phrases(parser):
    assert entity_phrases(compile_layout(parser.parse_query("Load all tables from dataset"))) == \
        {(None, "all tables"), ("from", "dataset")}
    assert entity_phrases(compile_layout(parser.parse_query(POINTS_QUERY))) == \
        {(None, "point record"), ("from", "stream"), (None, "points")}


def test_entity_phrases_dedup():
    node = ActionNode("copy", (entity("file"), Arg("by", action("open", entity("file")))))
    assert entity_phrases(compile_layout(node)) == {(None, "file")}


queries = st.integers(0, 5000).map(lambda s: generate_synthetic_corpus(s, 1).queries[0].raw_text)


class TestProperties:
    @given(queries)
    def test_one_evaluation_per_verb(self, raw):
        from nsss.parser import default_parser
        parsed = default_parser().parse_query(raw)
        assert len(compile_layout(parsed).evaluations) == len(parsed.actions)

    @given(queries)
    def test_masked_is_last_in_masking_order(self, raw):
        from nsss.parser import default_parser
        parsed = default_parser().parse_query(raw)
        layout = compile_layout(parsed)
        for i, (node, ev) in enumerate(zip(parsed.actions, layout.evaluations)):
            order = masking_order(node, nested=i > 0)
            assert ev.masked_arg == order[-1]
            assert list(ev.seen_args) == order[:-1]

    @given(queries)
    def test_deterministic(self, raw):
        from nsss.parser import default_parser
        parsed = default_parser().parse_query(raw)
        assert compile_layout(parsed) == compile_layout(parsed)
