import math

import numpy as np
import pytest
from conftest import reward_fixture
from hypothesis import given
from hypothesis import strategies as st

from birar.errors import RewardError
from birar.lm import TableProvider
from birar.rewards import (RewardMode, backward_reward, cascade, em, forward_reward, normalize_answer,
                           outcome_reward, score, step_reward)
from birar.trajectory import Step, Trajectory


def test_step_reward_examples():
    assert step_reward(0.0) == 1.0
    assert step_reward(math.log(2.0)) == pytest.approx(0.5, abs=1e-15)
    assert step_reward(0.75) == pytest.approx(0.4724, abs=1e-4)
    with pytest.raises(RewardError):
        step_reward(-0.1)
    with pytest.raises(RewardError):
        step_reward(float("nan"))


@given(st.floats(0, 50), st.floats(0, 50))
def test_step_reward_monotone(a, b):
    if a < b:
        assert step_reward(a) >= step_reward(b)
    assert 0 < step_reward(a) <= 1


def test_cascade_examples():
    assert cascade([1.0, 0.3], True) == 1.0
    assert cascade([0.5, 0.5], True) == 0.75
    assert cascade([0.2, 0.4, 0.6], False) == 0.0
    assert cascade([], True) == 0.0
    with pytest.raises(RewardError):
        cascade([1.2], True)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_cascade_closed_form(rs):
    assert abs(cascade(rs, True) - (1 - np.prod([1 - r for r in rs]))) <= 1e-12
    assert 0 <= cascade(rs, True) <= 1


def test_early_step_dominance():
    rng = np.random.default_rng(11)
    for _ in range(300):
        rs = rng.uniform(0, 1, rng.integers(2, 8))
        i = int(rng.integers(1, len(rs)))
        j = int(rng.integers(0, i))
        bumped = rs.copy()
        bumped[j] = min(1.0, rs[j] + rng.uniform(0, 0.5))

        def marginal(v):
            return np.prod(1 - v[:i]) * v[i]

        assert marginal(bumped) <= marginal(rs) + 1e-15


def test_em_examples():
    assert em("The Eiffel Tower!", "eiffel tower") == 1
    assert em("Paris", "Paris") == 1
    assert em("paris, france", "paris") == 0
    assert em(None, "x") == 0
    assert normalize_answer("  An   apple, the  pie. ") == "apple pie"


def test_forward_fixture():
    provider, traj = reward_fixture()
    b = forward_reward(provider, traj, "Smith")
    assert b.d_ta == [0.75, math.log(2.0)]
    assert b.r_ta[0] == pytest.approx(0.4724, abs=1e-4) and b.r_ta[1] == pytest.approx(0.5, abs=1e-15)
    assert b.R_forward == pytest.approx(0.7362, abs=1e-4)
    assert b.R_forward == pytest.approx(math.exp(-0.75) + (1 - math.exp(-0.75)) * 0.5, abs=1e-12)
    assert b.correct and b.R_outcome == 1.0


class LengthProvider:
    """Cost of a target is its token count, halved when any context is given."""

    def bits(self, target, contexts=()):
        return len(target) / (2.0 if any(contexts) else 1.0)


def test_wrong_answer_gates_everything():
    _, traj = reward_fixture()
    wrong = Trajectory(traj.question, traj.steps, "jones")
    b = score(LengthProvider(), wrong, "smith")
    assert not b.correct
    assert b.R_forward == b.R_backward == b.R_outcome == 0.0
    assert all(r > 0 for r in b.r_ta + b.r_tq)


def test_missing_answer_scored_against_gold():
    _, traj = reward_fixture()
    unanswered = Trajectory(traj.question, traj.steps, None)
    b = score(LengthProvider(), unanswered, "smith")
    assert b.R_forward == 0.0 and len(b.d_ta) == 2


def test_single_zero_distance_step():
    p = TableProvider({("a", ("a", "q")): 0.0, ("a", ("q",)): 3.0})
    b = forward_reward(p, Trajectory("q", [Step("a")], "a"), "a")
    assert b.R_forward == 1.0


def test_backward_and_totals(provider7, world7, env7):
    from birar.synthenv import run_plan, to_trajectory

    q = world7.split("eval")[0]
    traj = to_trajectory(run_plan(env7, q.qid, q.certificate))
    b = score(provider7, traj, q.gold_answer)
    assert b.R_forward == forward_reward(provider7, traj, q.gold_answer).R_forward
    assert b.R_backward == backward_reward(provider7, traj, q.gold_answer).R_backward
    for m in RewardMode:
        assert 0 <= b.total(m) <= 1
    assert outcome_reward(traj, q.gold_answer) == 1.0
    only = score(provider7, traj, q.gold_answer, ("forward",))
    with pytest.raises(RewardError):
        only.total(RewardMode.BACKWARD)


def test_backward_fixture():
    provider, traj = reward_fixture()
    b = backward_reward(provider, traj, "Smith")
    assert b.d_tq == [0.25, 0.5]
    r1, r2 = math.exp(-0.25), math.exp(-0.5)
    assert b.R_backward == pytest.approx(r1 + (1 - r1) * r2, abs=1e-12)
