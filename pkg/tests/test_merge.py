import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from birar.errors import MergeError
from birar.evalreport import evaluate, greedy_chooser
from birar.merge import DEFAULT_GRID, DEFAULT_LAMBDA, MergeSpec, interpolate, sweep
from birar.trainer import TrainConfig, save_checkpoint


def test_default_lambda():
    assert DEFAULT_LAMBDA == 0.25
    assert DEFAULT_GRID == (0.0, 0.25, 0.5, 0.75, 1.0)


def test_hand_example():
    assert interpolate([1.0, 2.0], [3.0, 6.0], 0.25).tolist() == [1.5, 3.0]


def test_endpoints_bit_exact():
    rng = np.random.default_rng(0)
    tf, tb = rng.normal(size=12), rng.normal(size=12)
    tf[0], tb[1] = -0.0, np.inf
    a, b = interpolate(tf, tb, 0.0), interpolate(tf, tb, 1.0)
    assert a.tobytes() == tf.tobytes() and b.tobytes() == tb.tobytes()
    assert a is not tf


def test_fixed_point():
    t = np.random.default_rng(1).normal(size=8)
    for lam in DEFAULT_GRID:
        assert np.array_equal(interpolate(t, t, lam), t)


@given(st.floats(0, 1), st.floats(0, 1))
def test_affine_in_lambda(l1, l2):
    rng = np.random.default_rng(2)
    tf, tb = rng.normal(size=6), rng.normal(size=6)
    mid = 0.5 * (l1 + l2)
    lhs = interpolate(tf, tb, mid)
    rhs = 0.5 * (interpolate(tf, tb, l1) + interpolate(tf, tb, l2))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_errors(tmp_path):
    with pytest.raises(MergeError):
        interpolate([1.0], [1.0, 2.0])
    with pytest.raises(MergeError):
        interpolate([1.0], [2.0], 1.5)
    with pytest.raises(MergeError):
        MergeSpec(tmp_path / "f", tmp_path / "b", -0.1)
    save_checkpoint(tmp_path / "f.json", np.zeros(3), TrainConfig(), 1)
    save_checkpoint(tmp_path / "b.json", np.zeros(4), TrainConfig(), 1)
    with pytest.raises(MergeError):
        MergeSpec(tmp_path / "f.json", tmp_path / "b.json").load()


def test_sweep_endpoints_match_standalone(env7, world7):
    rng = np.random.default_rng(3)
    tf, tb = rng.normal(size=12), rng.normal(size=12)
    qids = [q.qid for q in world7.split("eval")[:25]]
    rows = sweep(tf, tb, DEFAULT_GRID, env7, qids)
    assert [r["lambda"] for r in rows] == list(DEFAULT_GRID)
    for lam, theta in ((0.0, tf), (1.0, tb)):
        alone = evaluate(greedy_chooser(theta), env7, qids).aggregates
        row = next(r for r in rows if r["lambda"] == lam)
        assert all(row[k] == alone[k] for k in ("em", "response_length", "search_calls"))
    with pytest.raises(MergeError):
        sweep(tf, tb, [], env7, qids)
