"""Tagged rollout format: ``<think>``, ``<search>``, ``<information>``, ``<answer>``.

Only top-level tags structure a rollout. Inside a segment everything up to
the first matching close tag is literal text, so nested or repeated tags
never open new segments. Passages inside an information block are written
one per line as ``[doc_id] text``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParseError, TrajectoryError
from .text import tokenize

TAGS = ("think", "search", "information", "answer")
_OPEN = re.compile(r"<(think|search|information|answer)>")
_PASSAGE = re.compile(r"^\[([^\]\n]*)\] ?(.*)$")


@dataclass(frozen=True)
class Passage:
    doc_id: str
    text: str


@dataclass
class Step:
    think: str
    search_query: Optional[str] = None
    retrieved: list = field(default_factory=list)
    malformed: bool = False

    def __post_init__(self):
        if self.retrieved and self.search_query is None:
            raise TrajectoryError("retrieved passages require a search query in the same step")


@dataclass
class Trajectory:
    question: str
    steps: list
    answer: Optional[str] = None
    raw_text: str = field(default="", compare=False)

    def to_json(self) -> dict:
        return {
            "question": self.question,
            "steps": [
                {
                    "think": s.think,
                    "search_query": s.search_query,
                    "retrieved": [{"doc_id": p.doc_id, "text": p.text} for p in s.retrieved],
                }
                for s in self.steps
            ],
            "answer": self.answer,
            "raw_text": self.raw_text or render(self),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Trajectory":
        try:
            steps = [
                Step(
                    think=s.get("think") or "",
                    search_query=s.get("search_query"),
                    retrieved=[Passage(str(p["doc_id"]), str(p["text"])) for p in s.get("retrieved") or []],
                    malformed=not s.get("think"),
                )
                for s in obj["steps"]
            ]
            return cls(str(obj.get("question", "")), steps, obj.get("answer"), obj.get("raw_text") or "")
        except (KeyError, TypeError, AttributeError) as exc:
            raise TrajectoryError(f"invalid trajectory JSON: {exc!r}") from exc


def parse(raw: str, question: str = "") -> Trajectory:
    """Segment a raw rollout into steps.

    A new ``<think>`` opens a step; ``<search>`` and ``<information>`` attach
    to the current step; each information block must directly follow a search
    (or another information block for the same search).
    """
    if not raw.strip():
        raise ParseError("EmptyInput", 0, "", "rollout text is empty")
    steps: list[Step] = []
    answer = None
    last = None  # tag of the previous segment
    pos = 0
    while True:
        m = _OPEN.search(raw, pos)
        if m is None:
            break
        tag = m.group(1)
        close = f"</{tag}>"
        end = raw.find(close, m.end())
        if end < 0:
            raise ParseError("UnclosedTag", m.start(), tag)
        content = raw[m.end() : end]
        pos = end + len(close)

        if tag == "think":
            steps.append(Step(think=content, malformed=content == ""))
        elif tag == "search":
            if not steps or steps[-1].search_query is not None:
                steps.append(Step(think="", malformed=True))
            steps[-1].search_query = content
        elif tag == "information":
            if last not in ("search", "information"):
                raise ParseError("InformationWithoutSearch", m.start(), tag)
            steps[-1].retrieved.extend(_parse_passages(content))
        else:
            if answer is not None:
                raise ParseError("MultipleAnswers", m.start(), tag)
            answer = content
        last = tag
    if last is None:
        raise ParseError("EmptyInput", 0, "", "no tagged segments found")
    return Trajectory(question, steps, answer, raw)


def _parse_passages(content: str) -> list:
    out = []
    for line in content.split("\n"):
        if not line:
            continue
        m = _PASSAGE.match(line)
        out.append(Passage(m.group(1), m.group(2)) if m else Passage("", line))
    return out


def render(traj: Trajectory) -> str:
    parts = []
    for s in traj.steps:
        if not (s.malformed and s.think == "" and s.search_query is not None):
            parts.append(f"<think>{s.think}</think>")
        if s.search_query is not None:
            parts.append(f"<search>{s.search_query}</search>")
        if s.retrieved:
            body = "\n".join(f"[{p.doc_id}] {p.text}" for p in s.retrieved)
            parts.append(f"<information>{body}</information>")
    if traj.answer is not None:
        parts.append(f"<answer>{traj.answer}</answer>")
    return "".join(parts)


def _check_index(traj: Trajectory, i: int) -> None:
    if not 1 <= i <= len(traj.steps):
        raise TrajectoryError(f"step index {i} out of range 1..{len(traj.steps)}")


def step_text(traj: Trajectory, i: int) -> str:
    """Think segment of step ``i`` (1-based)."""
    _check_index(traj, i)
    return traj.steps[i - 1].think


def search_calls(traj: Trajectory) -> int:
    return sum(1 for s in traj.steps if s.search_query is not None)


def response_length(traj: Trajectory) -> int:
    """Token count of model-generated segments; information blocks excluded."""
    n = 0
    for s in traj.steps:
        n += len(tokenize(s.think))
        if s.search_query is not None:
            n += len(tokenize(s.search_query))
    if traj.answer is not None:
        n += len(tokenize(traj.answer))
    return n


def loss_mask(raw: str) -> np.ndarray:
    """Per-character mask: True for model-generated text, False for
    information blocks and their tags (environment output)."""
    mask = np.ones(len(raw), dtype=bool)
    pos = 0
    while True:
        m = _OPEN.search(raw, pos)
        if m is None:
            break
        close = f"</{m.group(1)}>"
        end = raw.find(close, m.end())
        if end < 0:
            break
        stop = end + len(close)
        if m.group(1) == "information":
            mask[m.start() : stop] = False
        pos = stop
    return mask
