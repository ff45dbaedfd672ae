"""Seeded multi-hop QA worlds and the episodic search environment.

A world is a random functional relation graph over invented single-token
entity names. Each fact ``(s, r, o)`` becomes one corpus document whose text
is ``"The r of s is o."`` followed by distractor sentences that mention
other entities. A hop-``h`` question composes ``h`` relations starting from
a topic entity: ``"What is the r2 of the r1 of e0?"``.

The policy acts at the level of whole actions: ``SEARCH(entity, relation)``
runs BM25 over the world corpus, ``ANSWER(entity)`` ends the episode. Think
text is produced from fixed templates so every text-level quantity (step
distances, response length) is still defined on rendered rollouts.
"""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import EnvError
from .retrieval import Document, build_index, load_corpus, search, write_corpus
from .trajectory import Passage, Step, Trajectory, render

WORLD_SCHEMA = "birar.world/1"
RELATION_POOL = (
    "mentor", "rival", "founder", "sibling", "employer", "neighbor",
    "partner", "successor", "patron", "student", "guardian", "editor",
)
_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "br", "kr", "st")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")
_CODAS = ("", "", "n", "r", "l", "s", "x", "nd")
_FACT = re.compile(r"the (\w+) of (\w+) is (\w+)")
_QUESTION = re.compile(r"^what is ((?:the \w+ of )+)(\w+)\?$")


@dataclass(frozen=True)
class WorldParams:
    n_entities: int = 60
    n_relations: int = 6
    n_questions: int = 300
    n_train: int = 200
    hop_depth_mix: tuple = (0.4, 0.4, 0.2)
    distractors_per_doc: int = 1
    relation_density: float = 0.6
    max_steps: int = 4
    top_k: int = 3

    def validate(self) -> None:
        if min(self.n_entities, self.n_relations, self.n_questions, self.max_steps, self.top_k) < 1:
            raise EnvError("world parameters must be positive")
        if self.n_relations > len(RELATION_POOL):
            raise EnvError(f"at most {len(RELATION_POOL)} relations are available")
        if len(self.hop_depth_mix) != 3 or min(self.hop_depth_mix) < 0 or abs(sum(self.hop_depth_mix) - 1.0) > 1e-9:
            raise EnvError(f"hop_depth_mix must be three non-negative weights summing to 1, got {self.hop_depth_mix}")
        if not 0 <= self.n_train <= self.n_questions:
            raise EnvError("n_train must lie in [0, n_questions]")
        if not 0 < self.relation_density <= 1:
            raise EnvError("relation_density must lie in (0, 1]")
        if self.distractors_per_doc < 0:
            raise EnvError("distractors_per_doc must be >= 0")
        deepest = max(h for h, p in zip((1, 2, 3), self.hop_depth_mix) if p > 0)
        if deepest + 1 > self.max_steps:
            raise EnvError(f"{deepest}-hop questions need max_steps >= {deepest + 1}")


@dataclass(frozen=True)
class Question:
    qid: str
    text: str
    gold_answer: str
    hop_depth: int
    gold_chain: tuple  # fact doc ids, in hop order
    split: str
    certificate: tuple  # oracle action plan as ((kind, entity, relation), ...)


@dataclass
class World:
    seed: int
    params: WorldParams
    entities: list
    relations: list
    facts: list  # (subject, relation, object, doc_id)
    corpus: list  # Document
    questions: list  # Question

    def question(self, qid: str) -> Question:
        for q in self.questions:
            if q.qid == qid:
                return q
        raise EnvError(f"unknown question id {qid!r}")

    def split(self, name: str) -> list:
        return [q for q in self.questions if q.split == name]

    def to_json(self) -> dict:
        return {
            "schema": WORLD_SCHEMA,
            "seed": self.seed,
            "params": {**asdict(self.params), "hop_depth_mix": list(self.params.hop_depth_mix)},
            "entities": self.entities,
            "relations": self.relations,
            "facts": [list(f) for f in self.facts],
            "questions": [_question_json(q) for q in self.questions],
        }

    @classmethod
    def from_json(cls, obj: dict, corpus: list) -> "World":
        if obj.get("schema") != WORLD_SCHEMA:
            raise EnvError(f"unsupported world schema {obj.get('schema')!r}")
        p = dict(obj["params"])
        p["hop_depth_mix"] = tuple(p["hop_depth_mix"])
        questions = [
            Question(q["id"], q["text"], q["gold_answer"], q["hop_depth"], tuple(q["gold_chain"]),
                     q["split"], tuple(tuple(a) for a in q["certificate"]))
            for q in obj["questions"]
        ]
        return cls(obj["seed"], WorldParams(**p), list(obj["entities"]), list(obj["relations"]),
                   [tuple(f) for f in obj["facts"]], corpus, questions)


def _question_json(q: Question) -> dict:
    return {
        "id": q.qid, "text": q.text, "gold_answer": q.gold_answer, "hop_depth": q.hop_depth,
        "gold_chain": list(q.gold_chain), "split": q.split,
        "certificate": [list(a) for a in q.certificate],
    }


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def _entity_names(rng, n: int) -> list:
    names: list[str] = []
    seen = set(RELATION_POOL) | {"the", "of", "is", "what", "was", "seen", "with", "answer", "so", "look", "up"}
    attempts = 0
    while len(names) < n:
        attempts += 1
        if attempts > 100 * n:
            raise EnvError("could not generate enough distinct entity names")
        parts = [rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(int(rng.integers(2, 4)))]
        name = "".join(parts) + rng.choice(_CODAS)
        if len(name) >= 4 and name not in seen:
            seen.add(name)
            names.append(name)
    return names


def question_text(topic: str, chain_relations) -> str:
    inner = "".join(f"the {r} of " for r in reversed(chain_relations))
    return f"What is {inner}{topic}?"


def parse_question(text: str):
    """``(topic entity, relations in hop order)`` for a templated question."""
    m = _QUESTION.match(text.lower())
    if not m:
        raise EnvError(f"question does not follow the world template: {text!r}")
    rels = re.findall(r"the (\w+) of ", m.group(1))
    return m.group(2), tuple(reversed(rels))


def generate_world(seed: int, params: Optional[WorldParams] = None) -> World:
    """Deterministic in ``(seed, params)``; every question carries a verified
    oracle plan and passes the breadth-first solvability check."""
    params = params or WorldParams()
    params.validate()
    rng = np.random.default_rng(seed)
    entities = _entity_names(rng, params.n_entities)
    relations = list(RELATION_POOL[: params.n_relations])
    rng.shuffle(relations)

    facts = []
    graph: dict = {}
    for s in entities:
        for r in relations:
            if rng.random() < params.relation_density:
                o = entities[int(rng.integers(len(entities) - 1))]
                if o == s:
                    o = entities[-1]
                doc_id = f"f{len(facts):05d}"
                facts.append((s, r, o, doc_id))
                graph[(s, r)] = (o, doc_id)
    if not facts:
        raise EnvError("world has no facts; raise relation_density or n_entities")

    corpus = []
    for s, r, o, doc_id in facts:
        sentences = [f"The {r} of {s} is {o}."]
        for _ in range(params.distractors_per_doc):
            x = entities[int(rng.integers(len(entities)))]
            sentences.append(f"{s.capitalize()} was seen with {x}.")
        corpus.append(Document(doc_id, s, " ".join(sentences)))

    env = Environment(params, corpus, relations, entities, {})

    questions = []
    seen_q = set()
    attempts = 0
    mix = np.asarray(params.hop_depth_mix, dtype=float)
    while len(questions) < params.n_questions:
        attempts += 1
        if attempts > 200 * params.n_questions:
            raise EnvError(
                f"infeasible parameters: only {len(questions)} of {params.n_questions} solvable questions found"
            )
        depth = int(rng.choice(3, p=mix)) + 1
        topic = entities[int(rng.integers(len(entities)))]
        chain, rels, node, visited = [], [], topic, {topic}
        for _ in range(depth):
            options = [r for r in relations if (node, r) in graph and graph[(node, r)][0] not in visited]
            if not options:
                break
            r = options[int(rng.integers(len(options)))]
            node, doc_id = graph[(node, r)]
            visited.add(node)
            chain.append(doc_id)
            rels.append(r)
        if len(chain) != depth:
            continue
        text = question_text(topic, rels)
        if text in seen_q:
            continue
        plan, cur = [], topic
        for r in rels:
            plan.append(("search", cur, r))
            cur = graph[(cur, r)][0]
        plan.append(("answer", cur, ""))
        qid = f"q{len(questions):04d}"
        split = "train" if len(questions) < params.n_train else "eval"
        q = Question(qid, text, cur, depth, tuple(chain), split, tuple(plan))
        env.questions[qid] = q
        if not _plan_succeeds(env, q, plan) or bfs_plan(env, q) is None:
            del env.questions[qid]
            continue
        seen_q.add(text)
        questions.append(q)
    return World(seed, params, entities, relations, facts, corpus, questions)


def save_world(world: World, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "world.json").write_text(json.dumps(world.to_json(), sort_keys=True, indent=1) + "\n")
    write_corpus(world.corpus, out / "corpus.jsonl")
    with open(out / "questions.jsonl", "w", encoding="utf-8") as fh:
        for q in world.questions:
            fh.write(json.dumps(_question_json(q), sort_keys=True) + "\n")


def load_world(world_dir) -> World:
    d = Path(world_dir)
    try:
        obj = json.loads((d / "world.json").read_text())
    except (OSError, ValueError) as exc:
        raise EnvError(f"cannot read world from {d}: {exc}") from exc
    return World.from_json(obj, load_corpus(d / "corpus.jsonl"))


def load_questions(path) -> list:
    """Question ids listed in a questions.jsonl file."""
    ids = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ids.append(json.loads(line)["id"])
    return ids


# --------------------------------------------------------------------------
# environment
# --------------------------------------------------------------------------


class Action(NamedTuple):
    kind: str  # "search" | "answer"
    entity: str
    relation: str = ""


@dataclass
class EnvState:
    qid: str
    question: str
    step: int = 0
    known: tuple = ()  # entities in discovery order
    facts_read: dict = field(default_factory=dict)  # (subject, relation) -> object
    queries: tuple = ()  # (entity, relation) already searched
    last_revealed: tuple = ()
    history: list = field(default_factory=list)  # (Action, observation)
    done: bool = False
    answer: Optional[str] = None


class Environment:
    """World corpus, BM25 index, and memoised search results."""

    def __init__(self, params: WorldParams, corpus, relations, entities, questions: dict):
        self.params = params
        self.relations = list(relations)
        self.entity_set = frozenset(entities)
        self.index = build_index(corpus)
        self.docs = {d.doc_id: d for d in corpus}
        self.questions = questions
        self._search_cache: dict = {}

    @classmethod
    def from_world(cls, world: World) -> "Environment":
        return cls(world.params, world.corpus, world.relations, world.entities,
                   {q.qid: q for q in world.questions})

    @property
    def max_steps(self) -> int:
        return self.params.max_steps

    def retrieve(self, entity: str, relation: str) -> tuple:
        key = (entity, relation)
        hit = self._search_cache.get(key)
        if hit is None:
            ranked = search(self.index, search_query(entity, relation), self.params.top_k)
            hit = tuple(Passage(doc_id, self.docs[doc_id].text) for doc_id, _ in ranked)
            self._search_cache[key] = hit
        return hit


def search_query(entity: str, relation: str) -> str:
    return f"{entity} {relation}"


def reset(env: Environment, qid: str) -> EnvState:
    q = env.questions.get(qid)
    if q is None:
        raise EnvError(f"unknown question id {qid!r}")
    topic, _ = parse_question(q.text)
    return EnvState(qid=qid, question=q.text, known=(topic,), last_revealed=(topic,))


def candidate_actions(env: Environment, state: EnvState) -> list:
    """All searches over known entities x relations, then all answers."""
    acts = [Action("search", e, r) for e in state.known for r in env.relations]
    acts += [Action("answer", e) for e in state.known]
    return acts


def env_step(env: Environment, state: EnvState, action: Action):
    """Apply ``action``; returns ``(observation, new_state)``. The input state
    is not modified."""
    if state.done:
        raise EnvError("episode already finished")
    if action.entity not in state.known or action.kind not in ("search", "answer"):
        raise EnvError(f"illegal action {action}")
    if action.kind == "search" and action.relation not in env.relations:
        raise EnvError(f"illegal action {action}")
    new = EnvState(
        qid=state.qid, question=state.question, step=state.step + 1, known=state.known,
        facts_read=dict(state.facts_read), queries=state.queries, last_revealed=(),
        history=list(state.history), done=False, answer=None,
    )
    if action.kind == "answer":
        observation: tuple = ()
        new.done = True
        new.answer = action.entity
    else:
        observation = env.retrieve(action.entity, action.relation)
        new.queries = state.queries + ((action.entity, action.relation),)
        known = list(state.known)
        seen = set(known)
        revealed = []
        for p in observation:
            for tok in re.findall(r"\w+", p.text.lower()):
                if tok in env.entity_set and tok not in seen:
                    seen.add(tok)
                    known.append(tok)
                if tok in env.entity_set and tok not in revealed:
                    revealed.append(tok)
            for r, s, o in _FACT.findall(p.text.lower()):
                new.facts_read[(s, r)] = o
        new.known = tuple(known)
        new.last_revealed = tuple(revealed)
        if new.step >= env.max_steps:
            new.done = True
    new.history.append((action, observation))
    return observation, new


def _plan_succeeds(env: Environment, q: Question, plan) -> bool:
    state = reset(env, q.qid)
    for kind, entity, relation in plan:
        if state.done or entity not in state.known:
            return False
        _, state = env_step(env, state, Action(kind, entity, relation))
    return state.done and state.answer == q.gold_answer


def bfs_plan(env: Environment, q: Question) -> Optional[list]:
    """Shortest search sequence (relations restricted to those named in the
    question) after which the gold answer is a known entity, followed by
    ``ANSWER(gold)``. ``None`` when no plan fits within ``max_steps``."""
    _, rels = parse_question(q.text)
    start = reset(env, q.qid)
    frontier = deque([(start, [])])
    seen = {frozenset(start.known)}
    while frontier:
        state, plan = frontier.popleft()
        if q.gold_answer in state.known:
            return plan + [("answer", q.gold_answer, "")]
        if len(plan) + 1 >= env.max_steps:
            continue
        for e in state.known:
            for r in dict.fromkeys(rels):
                if (e, r) in state.queries:
                    continue
                _, nxt = env_step(env, state, Action("search", e, r))
                key = frozenset(nxt.known)
                if key in seen:
                    continue
                seen.add(key)
                frontier.append((nxt, plan + [("search", e, r)]))
    return None


# --------------------------------------------------------------------------
# episodes and rendering
# --------------------------------------------------------------------------


def think_text(action: Action) -> str:
    if action.kind == "search":
        return f"I should look up the {action.relation} of {action.entity}."
    return f"So the answer is {action.entity}."


def to_trajectory(state: EnvState) -> Trajectory:
    """Render a finished episode in the tagged rollout format."""
    if not state.done:
        raise EnvError("episode is not finished")
    steps = []
    for action, observation in state.history:
        if action.kind == "search":
            steps.append(Step(think_text(action), search_query(action.entity, action.relation), list(observation)))
        else:
            steps.append(Step(think_text(action)))
    traj = Trajectory(state.question, steps, state.answer)
    traj.raw_text = render(traj)
    return traj


def run_plan(env: Environment, qid: str, plan) -> EnvState:
    state = reset(env, qid)
    for kind, entity, relation in plan:
        _, state = env_step(env, state, Action(kind, entity, relation))
        if state.done:
            break
    return state


def world_provider(world: World, order: int = 2, k: float = 0.1, cache_weight: float = 0.5):
    """Scoring provider: n-gram trained on the world corpus text."""
    from .lm import NGramProvider, train_ngram
    from .text import tokenize

    model = train_ngram([tokenize(d.text) for d in world.corpus], order, k)
    return NGramProvider(model, cache_weight=cache_weight)
