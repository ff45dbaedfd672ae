import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birar.errors import InfoDistError
from birar.infodist import NidVariant, nid, step_to_answer, step_to_question
from birar.lm import TableProvider
from birar.rewards import step_reward
from birar.text import tokenize
from birar.trajectory import Step, Trajectory, step_text

MINMIN, MAXMAX = NidVariant.PAPER_MIN_MIN, NidVariant.CLASSIC_MAX_MAX

TABLE = TableProvider({("a", ("b", "c")): 2, ("b", ("a", "c")): 4, ("a", ("c",)): 8, ("b", ("c",)): 16})


def test_table_minmin_and_swap():
    assert nid(TABLE, ("a",), ("b",), ("c",)).value == 0.25
    assert nid(TABLE, ("b",), ("a",), ("c",)).value == 0.25


def test_table_maxmax():
    assert nid(TABLE, ("a",), ("b",), ("c",), MAXMAX).value == 0.25


def test_default_variant_is_minmin():
    p = TableProvider({("a", ("b", "c")): 1, ("b", ("a", "c")): 6, ("a", ("c",)): 2, ("b", ("c",)): 8})
    assert nid(p, ("a",), ("b",), ("c",)).value == 0.5
    assert nid(p, ("a",), ("b",), ("c",), MAXMAX).value == 0.75


def _traj(think="t one", answer="ans", question="the q"):
    return Trajectory(question, [Step(think)], answer)


def test_step_to_answer_fixture():
    p = TableProvider({("t one", ("ans", "the q")): 3, ("ans", ("t one", "the q")): 6,
                       ("t one", ("the q",)): 12, ("ans", ("the q",)): 4})
    d = step_to_answer(p, _traj(), 1)
    assert d.value == 0.75 and not d.degenerate
    assert step_reward(d.value) == pytest.approx(0.4724, abs=1e-4)


def test_memorizing_fixture_gives_zero():
    p = TableProvider({("ans", ("ans", "the q")): 0, ("ans", ("the q",)): 4})
    assert step_to_answer(p, _traj(think="ans"), 1).value == 0.0


def test_step_to_question_fixture():
    p = TableProvider({("t one", ("the q", "ans")): 1, ("the q", ("t one", "ans")): 5,
                       ("t one", ("ans",)): 2, ("the q", ("ans",)): 10})
    assert step_to_question(p, _traj(), 1).value == 0.5


def test_empty_think_gives_zero():
    p = TableProvider({("the q", ("ans",)): 10})
    assert step_to_question(p, _traj(think=""), 1).value == 0.0


def test_degenerate_denominator_flagged():
    p = TableProvider({("a", ("b", "c")): 1, ("b", ("a", "c")): 1, ("a", ("c",)): 1e-12, ("b", ("c",)): 5})
    d = nid(p, ("a",), ("b",), ("c",))
    assert d.value == 0.0 and d.degenerate


def test_step_index_and_missing_answer():
    with pytest.raises(InfoDistError):
        step_to_answer(TABLE, _traj(), 2)
    with pytest.raises(InfoDistError):
        step_to_answer(TABLE, _traj(answer=None), 1)


def test_step_distance_consistency(provider7, world7):
    q = world7.questions[5]
    traj = Trajectory(q.text, [Step("I should look up the x of y."), Step("So the answer is z.")], "zed")
    for i in (1, 2):
        for v in (MINMIN, MAXMAX):
            direct = nid(provider7, tokenize(step_text(traj, i)), tokenize("zed"), tokenize(q.text), v)
            assert step_to_answer(provider7, traj, i, v) == direct
            swapped = nid(provider7, tokenize(step_text(traj, i)), tokenize(q.text), tokenize("zed"), v)
            assert step_to_question(provider7, traj, i, v) == swapped


texts = st.lists(st.sampled_from(["the", "of", "mother", "is", "kai", "bro", "zu", "what", "x"]),
                 min_size=0, max_size=6).map(tuple)


@settings(max_examples=150, deadline=None)
@given(texts, texts, texts, st.sampled_from([MINMIN, MAXMAX]))
def test_symmetry_and_nonnegativity(provider7, a, b, c, variant):
    d1 = nid(provider7, a, b, c, variant)
    d2 = nid(provider7, b, a, c, variant)
    assert d1.value == d2.value
    assert d1.value >= 0 and math.isfinite(d1.value)
