import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from birar.errors import ParseError, TrajectoryError
from birar.trajectory import (Passage, Step, Trajectory, loss_mask, parse, render, response_length,
                              search_calls, step_text)

RAW = "<think>t1</think><search>q1</search><information>d1</information><think>t2</think><answer>a</answer>"


def test_parse_example():
    t = parse(RAW)
    assert len(t.steps) == 2
    assert t.steps[0].search_query == "q1"
    assert len(t.steps[0].retrieved) == 1
    assert t.answer == "a"
    assert search_calls(t) == 1
    assert step_text(t, 2) == "t2"


@pytest.mark.parametrize("raw,kind,tag,offset", [
    ("<think>t</think><answer>a", "UnclosedTag", "answer", 16),
    ("<information>d</information>", "InformationWithoutSearch", "information", 0),
    ("<think>t</think><answer>a</answer><answer>b</answer>", "MultipleAnswers", "answer", 34),
    ("   ", "EmptyInput", "", 0),
    ("no tags here", "EmptyInput", "", 0),
])
def test_parse_errors(raw, kind, tag, offset):
    with pytest.raises(ParseError) as e:
        parse(raw)
    assert (e.value.kind, e.value.tag, e.value.offset) == (kind, tag, offset)


def test_render_round_trip_example():
    t = parse(RAW)
    assert parse(render(t)) == t


def test_render_omits_missing_parts():
    t = Trajectory("q", [Step("only thinking")], None)
    out = render(t)
    assert "<answer>" not in out and "<information>" not in out


def test_response_length_excludes_passages():
    t = Trajectory("q", [Step("one two", "three", [Passage("d", "many many many words here")])], "four five")
    assert response_length(t) == 5


def test_step_index_errors():
    t = parse(RAW)
    with pytest.raises(TrajectoryError):
        step_text(t, 0)
    with pytest.raises(TrajectoryError):
        step_text(t, 3)


def test_nested_tags_are_literal():
    t = parse("<think>a <b> c</think><answer>x</answer>")
    assert t.steps[0].think == "a <b> c"


def test_json_round_trip():
    t = parse(RAW, "which?")
    assert Trajectory.from_json(t.to_json()) == t


def test_loss_mask_complements_information_spans():
    mask = loss_mask(RAW)
    start = RAW.index("<information>")
    stop = RAW.index("</information>") + len("</information>")
    expected = np.ones(len(RAW), dtype=bool)
    expected[start:stop] = False
    assert np.array_equal(mask, expected)


seg = st.text(alphabet="abc xyz.,", min_size=1, max_size=12).filter(lambda s: s.strip() == s and "\n" not in s)
passages = st.lists(st.builds(Passage, st.sampled_from(["d1", "d2", "d3"]), seg), max_size=2)


@st.composite
def trajectories(draw):
    steps = []
    for _ in range(draw(st.integers(1, 4))):
        q = draw(st.none() | seg)
        steps.append(Step(draw(seg), q, draw(passages) if q is not None else []))
    return Trajectory("", steps, draw(st.none() | seg))


@given(trajectories())
def test_round_trip_property(t):
    assert parse(render(t)) == t
