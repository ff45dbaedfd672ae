"""Featurized softmax policy over environment actions.

``pi(a | s) = softmax_a(w . phi(s, a))`` over ``candidate_actions(s)``.

Feature map (fixed for every world; index: name -- meaning)::

     0 search                    1 for any SEARCH
     1 answer                    1 for any ANSWER
     2 search_rel_in_question    relation is named in the question
     3 search_rel_is_next        relation is the next unresolved hop
     4 search_entity_frontier    entity is the current chain frontier
     5 search_frontier_next      both of the above (the on-chain search)
     6 search_repeat             identical query already issued
     7 search_after_resolved     every hop of the question is already resolved
     8 answer_is_frontier        entity is the current chain frontier
     9 answer_resolved           every hop is resolved
    10 answer_frontier_resolved  both of the above
    11 answer_is_topic           entity is the question's topic entity

The frontier starts at the topic entity and advances along the question's
relations through facts the agent has read in retrieved passages
(``"the r of s is o"``). It uses only what the rollout has observed.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .synthenv import Action, EnvState, Environment, candidate_actions, parse_question

FEATURES = (
    "search", "answer",
    "search_rel_in_question", "search_rel_is_next", "search_entity_frontier", "search_frontier_next",
    "search_repeat", "search_after_resolved",
    "answer_is_frontier", "answer_resolved", "answer_frontier_resolved", "answer_is_topic",
)
FEATURE_DIM = len(FEATURES)


@lru_cache(maxsize=4096)
def _question_parts(text: str):
    return parse_question(text)


def chain_progress(state: EnvState):
    """``(frontier entity, hops resolved, question relations, topic)``."""
    topic, rels = _question_parts(state.question)
    frontier, hops = topic, 0
    for r in rels:
        nxt = state.facts_read.get((frontier, r))
        if nxt is None:
            break
        frontier, hops = nxt, hops + 1
    return frontier, hops, rels, topic


def featurize(env: Environment, state: EnvState):
    """``(actions, phi)`` with ``phi`` of shape ``(len(actions), FEATURE_DIM)``."""
    actions = candidate_actions(env, state)
    frontier, hops, rels, topic = chain_progress(state)
    resolved = hops == len(rels)
    nxt = rels[hops] if not resolved else None
    asked = set(rels)
    issued = set(state.queries)
    phi = np.zeros((len(actions), FEATURE_DIM))
    for i, a in enumerate(actions):
        row = phi[i]
        if a.kind == "search":
            is_front = a.entity == frontier
            is_next = a.relation == nxt
            row[0] = 1.0
            row[2] = a.relation in asked
            row[3] = is_next
            row[4] = is_front
            row[5] = is_front and is_next
            row[6] = (a.entity, a.relation) in issued
            row[7] = resolved
        else:
            is_front = a.entity == frontier
            row[1] = 1.0
            row[8] = is_front
            row[9] = resolved
            row[10] = is_front and resolved
            row[11] = a.entity == topic
    return actions, phi


def log_softmax(logits: np.ndarray) -> np.ndarray:
    top = logits.max()
    return logits - (top + np.log(np.exp(logits - top).sum()))


def action_probs(w: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Softmax of ``phi @ w``; sums to 1 over the candidate rows."""
    return np.exp(log_softmax(phi @ w))


def sample_action(w: np.ndarray, phi: np.ndarray, rng: np.random.Generator):
    """Draw one candidate at temperature 1; returns ``(index, log-prob)``."""
    logp = log_softmax(phi @ w)
    cdf = np.cumsum(np.exp(logp))
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    i = min(i, len(logp) - 1)
    return i, float(logp[i])


def greedy_action(w: np.ndarray, phi: np.ndarray) -> int:
    return int(np.argmax(phi @ w))


def oracle_action(env: Environment, state: EnvState) -> Action:
    """Follows the stored gold plan for the question."""
    q = env.questions[state.qid]
    kind, entity, relation = q.certificate[state.step]
    return Action(kind, entity, relation)
