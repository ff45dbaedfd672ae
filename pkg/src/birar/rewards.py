"""Step rewards, correctness-gated cascading totals, and exact match.

Per-step reward is ``exp(-d)``. The cascade

    R = 1[correct] * sum_i prod_{j<i} (1 - r_j) * r_i

equals ``1[correct] * (1 - prod_i (1 - r_i))``; the running product shrinks
the weight of later steps once earlier ones score well.
"""

from __future__ import annotations

import enum
import math
import re
import string
from dataclasses import asdict, dataclass, field
from typing import Optional

from .errors import RewardError
from .infodist import NidVariant, step_to_answer, step_to_question
from .trajectory import Trajectory

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


class RewardMode(enum.Enum):
    OUTCOME = "outcome"
    FORWARD = "forward"
    BACKWARD = "backward"


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop articles, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def em(pred: Optional[str], gold: str) -> int:
    if pred is None:
        return 0
    return int(normalize_answer(pred) == normalize_answer(gold))


def outcome_reward(traj: Trajectory, gold: str) -> float:
    return float(em(traj.answer, gold))


def step_reward(d: float) -> float:
    d = float(d)
    if d < 0 or math.isnan(d):
        raise RewardError(f"distance must be non-negative, got {d}")
    return math.exp(-d)


def cascade(rs, correct: bool) -> float:
    total = 0.0
    carry = 1.0
    for r in rs:
        if not 0.0 <= r <= 1.0:
            raise RewardError(f"step reward {r} outside [0, 1]")
        total += carry * r
        carry *= 1.0 - r
    # the sum can round a few ulps past 1
    return min(total, 1.0) if correct else 0.0


@dataclass
class RewardBreakdown:
    correct: bool
    R_outcome: float
    d_ta: Optional[list] = None
    d_tq: Optional[list] = None
    r_ta: Optional[list] = None
    r_tq: Optional[list] = None
    R_forward: Optional[float] = None
    R_backward: Optional[float] = None
    degenerate_steps: list = field(default_factory=list)

    def total(self, mode: RewardMode) -> float:
        value = {
            RewardMode.OUTCOME: self.R_outcome,
            RewardMode.FORWARD: self.R_forward,
            RewardMode.BACKWARD: self.R_backward,
        }[mode]
        if value is None:
            raise RewardError(f"{mode.value} reward was not computed")
        return value

    def to_json(self) -> dict:
        return asdict(self)


def _directional(provider, traj, gold, correct, fn, variant):
    # distances are taken against the gold answer, so unanswered rollouts
    # still get per-step diagnostics (their total is gated to 0)
    ds, degenerate = [], []
    for i in range(1, len(traj.steps) + 1):
        dist = fn(provider, traj, i, variant, answer=gold)
        ds.append(dist.value)
        if dist.degenerate:
            degenerate.append(i)
    rs = [step_reward(d) for d in ds]
    return ds, rs, cascade(rs, correct), degenerate


def score(provider, traj: Trajectory, gold: str, modes=("forward", "backward"),
          variant: NidVariant = NidVariant.PAPER_MIN_MIN) -> RewardBreakdown:
    """Breakdown with the requested directional parts filled in."""
    correct = bool(em(traj.answer, gold))
    out = RewardBreakdown(correct=correct, R_outcome=float(correct))
    modes = {m.value if isinstance(m, RewardMode) else m for m in modes}
    if "forward" in modes:
        out.d_ta, out.r_ta, out.R_forward, deg = _directional(provider, traj, gold, correct, step_to_answer, variant)
        out.degenerate_steps = sorted(set(out.degenerate_steps) | set(deg))
    if "backward" in modes:
        out.d_tq, out.r_tq, out.R_backward, deg = _directional(provider, traj, gold, correct, step_to_question, variant)
        out.degenerate_steps = sorted(set(out.degenerate_steps) | set(deg))
    return out


def forward_reward(provider, traj: Trajectory, gold: str, variant=NidVariant.PAPER_MIN_MIN) -> RewardBreakdown:
    return score(provider, traj, gold, ("forward",), variant)


def backward_reward(provider, traj: Trajectory, gold: str, variant=NidVariant.PAPER_MIN_MIN) -> RewardBreakdown:
    return score(provider, traj, gold, ("backward",), variant)
