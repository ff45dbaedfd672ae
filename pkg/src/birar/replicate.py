"""Desk-scale directional replication across reward modes and seeds.

For each seed, the same world is trained under every reward mode. Each run
records three numbers:

* its convergence step, the first step whose trailing 10-step mean reward
  reaches 90% of the final reward (mean of the last 20 steps);
* greedy EM and mean search calls on the eval split;
* greedy EM on the train split.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .evalreport import evaluate, greedy_chooser
from .synthenv import Environment, generate_world, world_provider
from .trainer import TrainConfig, train

MODES = ("outcome", "forward", "backward")
SMOOTH_WINDOW = 10
FINAL_WINDOW = 20
CONVERGED_FRACTION = 0.9


def convergence_step(rewards, window: int = SMOOTH_WINDOW, final_window: int = FINAL_WINDOW,
                     fraction: float = CONVERGED_FRACTION) -> int:
    """First step ``t`` with mean(rewards[t-window+1 : t+1]) >= fraction * final."""
    r = np.asarray(rewards, dtype=np.float64)
    if len(r) < max(window, final_window):
        raise ValueError(f"need at least {max(window, final_window)} steps, got {len(r)}")
    final = r[-final_window:].mean()
    trailing = np.convolve(r, np.ones(window) / window, mode="valid")
    hit = np.flatnonzero(trailing >= fraction * final)
    return int(hit[0]) + window - 1


@dataclass
class RunResult:
    mode: str
    seed: int
    convergence_step: int
    final_reward: float
    train_em: float
    eval_em: float
    eval_search_calls: float
    seconds: float


def run(world_seed: int = 7, seeds=range(5), modes=MODES, steps: int = 200, **overrides) -> list:
    world = generate_world(world_seed)
    env = Environment.from_world(world)
    provider = world_provider(world)
    train_q = [q.qid for q in world.split("train")]
    eval_q = [q.qid for q in world.split("eval")]
    out = []
    for seed in seeds:
        for mode in modes:
            t0 = time.perf_counter()
            cfg = TrainConfig(mode=mode, seed=seed, steps=steps, **overrides)
            w, rows = train(cfg, env, provider if mode != "outcome" else None)
            rewards = [r[1] for r in rows]
            ev = evaluate(greedy_chooser(w), env, eval_q).aggregates
            tr = evaluate(greedy_chooser(w), env, train_q).aggregates
            out.append(RunResult(mode, int(seed), convergence_step(rewards),
                                 float(np.mean(rewards[-FINAL_WINDOW:])), tr["em"], ev["em"],
                                 ev["search_calls"], time.perf_counter() - t0))
    return out


def summarize(results) -> dict:
    """Per-criterion verdicts for the directional claims."""
    by = {(r.mode, r.seed): r for r in results}
    seeds = sorted({r.seed for r in results})

    def col(mode, attr):
        return np.array([getattr(by[(mode, s)], attr) for s in seeds], dtype=np.float64)

    conv_o, conv_f = col("outcome", "convergence_step"), col("forward", "convergence_step")
    sc_o = col("outcome", "eval_search_calls")
    agree = {m: int(np.sum(col(m, "eval_search_calls") <= sc_o)) for m in ("forward", "backward")}
    em_gap = float(col("forward", "eval_em").mean() - col("outcome", "eval_em").mean())
    need = int(np.ceil(0.8 * len(seeds)))
    return {
        "seeds": seeds,
        "convergence_mean": {m: float(col(m, "convergence_step").mean()) for m in MODES},
        "a_converges_no_later": bool(conv_f.mean() <= conv_o.mean()),
        "a_seedwise_faster_or_equal": int(np.sum(conv_f <= conv_o)),
        "search_calls_mean": {m: float(col(m, "eval_search_calls").mean()) for m in MODES},
        "b_sign_agreement": agree,
        "b_fewer_or_equal_searches": all(v >= need for v in agree.values()),
        "eval_em_mean": {m: float(col(m, "eval_em").mean()) for m in MODES},
        "c_em_gap": em_gap,
        "c_em_within": bool(em_gap >= -0.02),
        "train_em_forward_min": float(col("forward", "train_em").min()),
        "runs": [asdict(r) for r in results],
    }
