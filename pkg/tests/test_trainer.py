import math

import numpy as np
import pytest
from conftest import finite_difference, random_grpo_instance
from hypothesis import given
from hypothesis import strategies as st

from birar import kernels, trainer
from birar.errors import TrainError
from birar.policy import FEATURE_DIM, action_probs
from birar.rewards import RewardMode
from birar.trainer import (Scorer, TrainConfig, compute_advantages, grpo_objective, grpo_update,
                           load_checkpoint, read_metrics, sample_group, save_checkpoint, train)


def test_action_probs_examples():
    phi = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(action_probs(np.zeros(3), phi), 0.25, atol=0, rtol=1e-15)
    eye = np.eye(3)
    p = action_probs(np.array([0.0, math.log(2), math.log(4)]), eye)
    assert np.allclose(p, [1 / 7, 2 / 7, 4 / 7], atol=1e-15)
    shifted = action_probs(np.array([5.0, 5 + math.log(2), 5 + math.log(4)]), eye)
    assert np.allclose(shifted, p, atol=1e-15)
    assert abs(p.sum() - 1) <= 1e-15


def test_advantage_examples():
    assert np.allclose(compute_advantages([1, 2, 3]), [-1.2247, 0, 1.2247], atol=1e-4)
    assert np.allclose(compute_advantages([0, 1]), [-1, 1], atol=1e-6)
    assert compute_advantages([0.3] * 5).tolist() == [0.0] * 5


@given(st.lists(st.floats(0, 1), min_size=2, max_size=10))
def test_advantage_properties(rs):
    a = compute_advantages(rs)
    assert abs(a.mean()) <= 1e-9
    if np.var(rs) > 1e-12:
        assert abs(a.std() - 1) <= 1e-6


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        w, packed = random_grpo_instance(rng)
        eps, beta = 0.2, float(rng.uniform(0, 0.1))
        _, grad, _, _ = grpo_objective(w, packed, eps, beta)
        fd = finite_difference(lambda v: grpo_objective(v, packed, eps, beta)[0], w)
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8)


def test_jit_and_numpy_objectives_agree():
    rng = np.random.default_rng(2)
    for _ in range(30):
        w, packed = random_grpo_instance(rng)
        a = kernels.grpo_objective_jit(w, *packed, 0.2, 0.01)
        b = kernels.grpo_objective_numpy(w, *packed, 0.2, 0.01)
        assert abs(a[0] - b[0]) <= 1e-12 and abs(a[2] - b[2]) <= 1e-12 and a[3] == b[3]
        assert np.allclose(a[1], b[1], rtol=1e-10, atol=1e-13)


def test_on_policy_identity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        w, packed = random_grpo_instance(rng)
        phi, ptr, chosen, old, ref, adv, weight = packed
        for a in range(len(chosen)):
            logits = phi[ptr[a]:ptr[a + 1]] @ w
            old[a] = logits[chosen[a]] - (logits.max() + np.log(np.exp(logits - logits.max()).sum()))
        obj, _, kl, clip = grpo_objective(w, (phi, ptr, chosen, old, ref, adv, weight), 0.2, 0.0)
        assert clip == 0.0
        assert abs(obj - float(np.sum(weight * adv))) <= 1e-12


def test_surrogate_within_clip_bounds():
    rng = np.random.default_rng(4)
    eps = 0.2
    for _ in range(50):
        w, packed = random_grpo_instance(rng)
        phi, ptr, chosen, old, ref, adv, weight = packed
        for a in range(len(chosen)):
            one = (phi[ptr[a]:ptr[a + 1]], np.array([0, ptr[a + 1] - ptr[a]]), chosen[a:a + 1], old[a:a + 1],
                   ref[a:a + 1], adv[a:a + 1], np.ones(1))
            surr = grpo_objective(w, one, eps, 0.0)[0]
            logits = one[0] @ w
            logp = logits[chosen[a]] - (logits.max() + np.log(np.exp(logits - logits.max()).sum()))
            r = math.exp(logp - old[a])
            lo, hi = sorted((min(r, 1 - eps) * adv[a], max(r, 1 + eps) * adv[a]))
            assert lo - 1e-12 <= surr <= hi + 1e-12
            assert surr <= r * adv[a] + 1e-12


@given(st.floats(-20, 20))
def test_kl_estimator_nonnegative(x):
    phi = np.array([[1.0, 0.0], [0.0, 1.0]])
    w = np.array([0.3, -0.2])
    logp = float(np.log(action_probs(w, phi))[0])
    packed = (phi, np.array([0, 2]), np.array([0]), np.array([logp]), np.array([logp + x]),
              np.zeros(1), np.ones(1))
    for impl in (kernels.grpo_objective_jit, kernels.grpo_objective_numpy):
        assert impl(w, *packed, 0.2, 1.0)[2] >= 0


def _tiny_config(**kw):
    base = dict(mode="outcome", steps=3, batch_size=2, G=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.G, c.beta, c.eps, c.steps, c.lr, c.mode) == (5, 0.001, 0.2, 200, 0.05, RewardMode.FORWARD)
    for bad in (dict(G=1), dict(eps=1.0), dict(lr=0), dict(optimizer="rmsprop"), dict(mode="sideways")):
        with pytest.raises((TrainError, ValueError)):
            TrainConfig(**bad)


def test_zero_advantage_no_beta_leaves_w(env7):
    scorer = Scorer(RewardMode.OUTCOME)
    qid = sorted(env7.questions)[0]
    grp = sample_group(np.zeros(FEATURE_DIM), env7, qid, 4, scorer)
    for ep in grp.episodes:
        ep.advantage = 0.0
    w = np.random.default_rng(0).normal(size=FEATURE_DIM)
    for opt in ("adam", "sgd"):
        new, diag = grpo_update(w, w, grp, _tiny_config(beta=0.0, optimizer=opt))
        assert np.array_equal(new, w)
        assert diag["clip_fraction"] == 0.0 and 0.0 <= diag["kl"] <= 1e-20  # logp rounding only


def test_deterministic_policy_limit(env7, monkeypatch):
    real = trainer.featurize

    def only_first(env, state):
        actions, phi = real(env, state)
        return actions[:1], phi[:1]

    monkeypatch.setattr(trainer, "featurize", only_first)
    grp = sample_group(np.zeros(FEATURE_DIM), env7, sorted(env7.questions)[0], 5, Scorer(RewardMode.OUTCOME))
    assert len(grp.episodes) == 5
    assert len({tuple(ep.chosen) for ep in grp.episodes}) == 1
    assert grp.advantages == [0.0] * 5


def test_group_is_seeded(env7, provider7):
    scorer = Scorer(RewardMode.FORWARD, provider7)
    qid = sorted(env7.questions)[3]
    w = np.random.default_rng(5).normal(size=FEATURE_DIM)
    a = sample_group(w, env7, qid, 5, scorer, seed=1, step=2, group=0)
    b = sample_group(w, env7, qid, 5, scorer, seed=1, step=2, group=0)
    assert a.rewards == b.rewards and a.advantages == b.advantages
    assert [ep.logp_old for ep in a.episodes] == [ep.logp_old for ep in b.episodes]
    with pytest.raises(TrainError):
        sample_group(w, env7, qid, 1, scorer)


def test_scorer_needs_provider():
    with pytest.raises(TrainError):
        Scorer(RewardMode.FORWARD)


def test_metrics_log_bit_identical(tmp_path, env7, provider7):
    cfg = TrainConfig(mode="forward", steps=20, seed=3)
    train(cfg, env7, provider7, tmp_path / "a")
    train(cfg, env7, provider7, tmp_path / "b")
    la, lb = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    assert la == lb and len(read_metrics(tmp_path / "a" / "metrics.csv")) == 20
    assert (tmp_path / "a" / "theta_forward.json").read_bytes() == (tmp_path / "b" / "theta_forward.json").read_bytes()


def test_parallel_rollouts_match_serial(env7, provider7):
    cfg = TrainConfig(mode="backward", steps=5, seed=4)
    w1, rows1 = train(cfg, env7, provider7)
    w4, rows4 = train(trainer.with_overrides(cfg, workers=4), env7, provider7)
    assert np.array_equal(w1, w4) and rows1 == rows4


def test_checkpoint_round_trip(tmp_path):
    w = np.random.default_rng(6).normal(size=FEATURE_DIM)
    save_checkpoint(tmp_path / "c.json", w, TrainConfig(), 7)
    back, obj = load_checkpoint(tmp_path / "c.json")
    assert np.array_equal(back, w) and obj["step"] == 7 and obj["config"]["mode"] == "forward"
    (tmp_path / "bad.json").write_text('{"w": [1, 2], "feature_dim": 3}')
    with pytest.raises(TrainError):
        load_checkpoint(tmp_path / "bad.json")


def test_non_finite_step_aborts_and_keeps_log(tmp_path, env7, monkeypatch):
    calls = {"n": 0}
    real = trainer.grpo_objective

    def flaky(w, packed, eps, beta):
        calls["n"] += 1
        out = real(w, packed, eps, beta)
        return (float("nan"),) + out[1:] if calls["n"] == 3 else out

    monkeypatch.setattr(trainer, "grpo_objective", flaky)
    with pytest.raises(TrainError, match="non-finite"):
        train(_tiny_config(steps=5), env7, None, tmp_path)
    assert len(read_metrics(tmp_path / "metrics.csv")) == 2
    assert not (tmp_path / "theta_outcome.json").exists()
