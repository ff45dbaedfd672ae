"""Group-relative policy optimization for the linear softmax policy.

Each training step samples ``batch_size`` questions and ``G`` episodes per
question, scores every episode under the run's reward mode, standardizes
rewards within each group, and ascends

    (1/G) sum_i (1/|y_i|) sum_t [min(rho_t A_i, clip(rho_t, 1-eps, 1+eps) A_i) - beta KL_t]

averaged over the batch, where ``rho_t = pi_w / pi_old`` for the t-th action
of episode ``i`` and ``KL_t = pi_ref/pi_w - log(pi_ref/pi_w) - 1``. Only
policy actions enter the sum; retrieved passages are observations and never
carry loss weight. The reference policy is the run's initial parameters.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import TrainError
from .policy import FEATURE_DIM, featurize, log_softmax, sample_action
from .rewards import RewardMode, em, score
from .synthenv import Environment, env_step, reset, to_trajectory
from .trajectory import response_length, search_calls

log = logging.getLogger(__name__)

ADV_FLOOR = 1e-8
VARIANCE_FLOOR = 1e-12
METRICS_HEADER = ("step", "reward", "resp_len", "search_calls", "kl", "clip_frac")


@dataclass(frozen=True)
class TrainConfig:
    mode: RewardMode = RewardMode.FORWARD
    G: int = 5
    lr: float = 0.05
    beta: float = 0.001
    eps: float = 0.2
    steps: int = 200
    seed: int = 0
    inner_epochs: int = 1
    batch_size: int = 8
    workers: int = 1
    optimizer: str = "adam"

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", RewardMode(self.mode))
        if self.G < 2:
            raise TrainError(f"group size G must be >= 2, got {self.G}")
        if self.steps < 0 or self.inner_epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise TrainError("steps >= 0, inner_epochs >= 1, batch_size >= 1 and workers >= 1 are required")
        if not (self.lr > 0 and self.beta >= 0 and 0 < self.eps < 1):
            raise TrainError("lr > 0, beta >= 0 and 0 < eps < 1 are required")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass
class Episode:
    state: object  # final EnvState
    phis: list  # candidate feature matrix per action
    chosen: list
    logp_old: list
    trajectory: object = None
    reward: float = 0.0
    advantage: float = 0.0


@dataclass
class RolloutGroup:
    qid: str
    episodes: list
    rewards: list = field(default_factory=list)
    advantages: list = field(default_factory=list)


def compute_advantages(rewards) -> np.ndarray:
    """Group-standardized rewards with the population standard deviation.

    Above the variance floor the result has exactly zero mean and unit
    standard deviation; below it ``(r - mean) / (std + 1e-8)`` is used, which
    maps identical rewards to zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    centred = r - r.mean()
    # second pass removes the rounding left in the mean, which matters when
    # the spread is near the floor and the division amplifies it
    centred -= centred.mean()
    std = float(np.sqrt(np.mean(centred**2)))
    if std * std > VARIANCE_FLOOR:
        return centred / std
    return centred / (std + ADV_FLOOR)


def rollout(w, env: Environment, qid: str, rng: np.random.Generator) -> Episode:
    state = reset(env, qid)
    ep = Episode(state, [], [], [])
    while not state.done:
        actions, phi = featurize(env, state)
        i, logp = sample_action(w, phi, rng)
        ep.phis.append(phi)
        ep.chosen.append(i)
        ep.logp_old.append(logp)
        _, state = env_step(env, state, actions[i])
    ep.state = state
    ep.trajectory = to_trajectory(state)
    return ep


def episode_rng(seed: int, step: int, group: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, group, episode])


class Scorer:
    """Reward for one rendered episode under a fixed mode and provider."""

    def __init__(self, mode: RewardMode, provider=None):
        if mode is not RewardMode.OUTCOME and provider is None:
            raise TrainError(f"{mode.value} rewards need an LM provider")
        self.mode = mode
        self.provider = provider
        self._memo: dict = {}

    def __call__(self, traj, gold: str) -> float:
        if self.mode is RewardMode.OUTCOME:
            return float(em(traj.answer, gold))
        key = (traj.question, traj.answer, gold, tuple(s.think for s in traj.steps))
        hit = self._memo.get(key)
        if hit is None:
            hit = score(self.provider, traj, gold, (self.mode.value,)).total(self.mode)
            self._memo[key] = hit
        return hit


def sample_group(w, env: Environment, qid: str, G: int, scorer: Scorer,
                 seed: int = 0, step: int = 0, group: int = 0) -> RolloutGroup:
    """G independent episodes at temperature 1, each on its own RNG stream."""
    if G < 2:
        raise TrainError(f"group size G must be >= 2, got {G}")
    gold = env.questions[qid].gold_answer
    episodes = [rollout(w, env, qid, episode_rng(seed, step, group, g)) for g in range(G)]
    for ep in episodes:
        ep.reward = scorer(ep.trajectory, gold)
    rewards = [ep.reward for ep in episodes]
    adv = compute_advantages(rewards)
    for ep, a in zip(episodes, adv):
        ep.advantage = float(a)
    return RolloutGroup(qid, episodes, rewards, adv.tolist())


def pack_groups(groups, w_ref):
    """Flatten every policy action of every episode into kernel arrays."""
    phis, chosen, old, ref, adv, weight, ptr = [], [], [], [], [], [], [0]
    n_groups = len(groups)
    for grp in groups:
        G = len(grp.episodes)
        for ep in grp.episodes:
            n = len(ep.chosen)
            for phi, c, lp in zip(ep.phis, ep.chosen, ep.logp_old):
                phis.append(phi)
                chosen.append(c)
                old.append(lp)
                ref.append(float(log_softmax(phi @ w_ref)[c]))
                adv.append(ep.advantage)
                weight.append(1.0 / (n_groups * G * n))
                ptr.append(ptr[-1] + phi.shape[0])
    dim = len(w_ref)
    return (
        np.vstack(phis) if phis else np.zeros((0, dim)),
        np.asarray(ptr, dtype=np.int64),
        np.asarray(chosen, dtype=np.int64),
        np.asarray(old, dtype=np.float64),
        np.asarray(ref, dtype=np.float64),
        np.asarray(adv, dtype=np.float64),
        np.asarray(weight, dtype=np.float64),
    )


def grpo_objective(w, packed, eps: float, beta: float):
    phi, ptr, chosen, old, ref, adv, weight = packed
    return kernels.grpo_objective(np.asarray(w, dtype=np.float64), phi, ptr, chosen, old, ref, adv, weight,
                                  float(eps), float(beta))


class Adam:
    """Adam moment state for gradient *ascent* (no weight decay)."""

    def __init__(self, dim: int, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0
        self.b1, self.b2, self.eps = b1, b2, eps

    def step(self, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grpo_update(w, w_ref, groups, config: TrainConfig, opt: Adam | None = None):
    """``inner_epochs`` ascent steps on one batch of groups.

    ``opt`` carries Adam moments across calls; without it a fresh state is
    used (or plain gradient steps when ``config.optimizer == "sgd"``).
    Returns ``(new_w, diagnostics)``; diagnostics are measured at the
    incoming parameters (first inner epoch).
    """
    if isinstance(groups, RolloutGroup):
        groups = [groups]
    packed = pack_groups(groups, np.asarray(w_ref, dtype=np.float64))
    w = np.array(w, dtype=np.float64)
    if opt is None and config.optimizer == "adam":
        opt = Adam(len(w))
    diag = None
    for _ in range(config.inner_epochs):
        obj, grad, kl, clip_frac = grpo_objective(w, packed, config.eps, config.beta)
        if not (math.isfinite(obj) and np.all(np.isfinite(grad))):
            raise TrainError(f"non-finite objective or gradient (objective={obj}, kl={kl}); step aborted")
        if diag is None:
            diag = {"loss": -obj, "kl": kl, "clip_fraction": clip_frac}
        w = w + (opt.step(grad, config.lr) if config.optimizer == "adam" else config.lr * grad)
    return w, diag


def save_checkpoint(path, w, config: TrainConfig, step: int) -> None:
    Path(path).write_text(json.dumps({
        "feature_dim": int(len(w)),
        "w": [float(x) for x in w],
        "config": config.to_json(),
        "step": int(step),
    }, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """``(w, checkpoint dict)``."""
    try:
        obj = json.loads(Path(path).read_text())
        w = np.asarray(obj["w"], dtype=np.float64)
    except (OSError, ValueError, KeyError) as exc:
        raise TrainError(f"cannot read checkpoint {path}: {exc}") from exc
    if w.shape != (obj.get("feature_dim"),):
        raise TrainError(f"checkpoint {path}: w has {w.shape[0]} entries but feature_dim={obj.get('feature_dim')}")
    return w, obj


def train(config: TrainConfig, env: Environment, provider=None, out_dir=None, train_qids=None,
          w0=None, on_step=None):
    """Run ``config.steps`` GRPO iterations.

    Returns ``(w, metrics rows)``. With ``out_dir`` the metrics CSV is
    appended row by row (flushed, so an aborted run keeps its partial log)
    and ``theta_<mode>.json`` is written at the end.
    """
    scorer = Scorer(config.mode, provider)
    if train_qids is None:
        train_qids = sorted(q for q, v in env.questions.items() if v.split == "train")
    train_qids = list(train_qids)
    if not train_qids:
        raise TrainError("no training questions")
    w = np.zeros(FEATURE_DIM) if w0 is None else np.array(w0, dtype=np.float64)
    w_ref = w.copy()
    opt = Adam(len(w)) if config.optimizer == "adam" else None
    batch = min(config.batch_size, len(train_qids))
    rows = []
    fh = writer = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        fh.flush()
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for step in range(config.steps):
            pick = np.random.default_rng([config.seed, step, 0x51]).choice(len(train_qids), batch, replace=False)
            qids = [train_qids[i] for i in sorted(pick)]

            def one(j, w=w, step=step, qids=qids):
                return sample_group(w, env, qids[j], config.G, scorer, config.seed, step, j)

            groups = list(pool.map(one, range(batch))) if pool else [one(j) for j in range(batch)]
            w, diag = grpo_update(w, w_ref, groups, config, opt)
            eps_all = [ep for g in groups for ep in g.episodes]
            row = (
                step,
                float(np.mean([ep.reward for ep in eps_all])),
                float(np.mean([response_length(ep.trajectory) for ep in eps_all])),
                float(np.mean([search_calls(ep.trajectory) for ep in eps_all])),
                float(diag["kl"]),
                float(diag["clip_fraction"]),
            )
            rows.append(row)
            if writer is not None:
                writer.writerow([row[0]] + [repr(x) for x in row[1:]])
                fh.flush()
            if on_step is not None:
                on_step(step, w, row)
            log.debug("step %d reward %.4f searches %.3f", step, row[1], row[3])
    finally:
        if pool is not None:
            pool.shutdown()
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / f"theta_{config.mode.value}.json", w, config, config.steps)
    return w, rows


def read_metrics(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise TrainError(f"{path}: unexpected metrics header {header}")
        return [(int(r[0]),) + tuple(float(x) for x in r[1:]) for r in reader]


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
