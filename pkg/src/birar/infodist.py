"""Conditional normalized information distance over provider bit-costs.

    d(a, b | c) = min{K(a|b,c), K(b|a,c)} / min{K(a|c), K(b|c)}

with K(u|v) = -log2 P(u|v) from an LM provider. The classical max/max form is
available as :attr:`NidVariant.CLASSIC_MAX_MAX`. Values are not clamped to
[0, 1]: an LM can assign a conditional cost above the unconditional one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import InfoDistError
from .lm import cond_bits, cond_bits_joint
from .text import TokenSeq, tokenize
from .trajectory import Trajectory, step_text

DENOMINATOR_FLOOR = 1e-9


class NidVariant(enum.Enum):
    PAPER_MIN_MIN = "paper_min_min"
    CLASSIC_MAX_MAX = "classic_max_max"


@dataclass(frozen=True)
class Distance:
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def nid(provider, a: TokenSeq, b: TokenSeq, c: TokenSeq,
        variant: NidVariant = NidVariant.PAPER_MIN_MIN) -> Distance:
    """Distance between ``a`` and ``b`` given background ``c``.

    A denominator below 1e-9 (both strings essentially free given ``c``)
    yields distance 0 with ``degenerate=True`` instead of dividing.
    """
    a, b, c = tuple(a), tuple(b), tuple(c)
    k_a_bc = cond_bits_joint(provider, a, b, c)
    k_b_ac = cond_bits_joint(provider, b, a, c)
    k_a_c = cond_bits(provider, a, c)
    k_b_c = cond_bits(provider, b, c)
    pick = min if variant is NidVariant.PAPER_MIN_MIN else max
    num = pick(k_a_bc, k_b_ac)
    den = pick(k_a_c, k_b_c)
    if den < DENOMINATOR_FLOOR:
        return Distance(0.0, degenerate=True)
    return Distance(num / den)


def _answer_tokens(traj: Trajectory, answer: str | None) -> TokenSeq:
    text = traj.answer if answer is None else answer
    if text is None:
        raise InfoDistError("trajectory has no final answer")
    return tokenize(text)


def step_to_answer(provider, traj: Trajectory, i: int,
                   variant: NidVariant = NidVariant.PAPER_MIN_MIN,
                   answer: str | None = None) -> Distance:
    """d(T_i, A | Q); ``answer`` overrides the trajectory's own answer."""
    if not 1 <= i <= len(traj.steps):
        raise InfoDistError(f"step index {i} out of range 1..{len(traj.steps)}")
    return nid(provider, tokenize(step_text(traj, i)), _answer_tokens(traj, answer),
               tokenize(traj.question), variant)


def step_to_question(provider, traj: Trajectory, i: int,
                     variant: NidVariant = NidVariant.PAPER_MIN_MIN,
                     answer: str | None = None) -> Distance:
    """d(T_i, Q | A)."""
    if not 1 <= i <= len(traj.steps):
        raise InfoDistError(f"step index {i} out of range 1..{len(traj.steps)}")
    return nid(provider, tokenize(step_text(traj, i)), tokenize(traj.question),
               _answer_tokens(traj, answer), variant)
