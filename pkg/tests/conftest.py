import math
from collections import Counter

import numpy as np
import pytest

from birar.lm import TableProvider
from birar.retrieval import Document
from birar.synthenv import Environment, generate_world, world_provider
from birar.text import tokenize
from birar.trajectory import Passage, Step, Trajectory


@pytest.fixture(scope="session")
def world7():
    return generate_world(7)


@pytest.fixture(scope="session")
def env7(world7):
    return Environment.from_world(world7)


@pytest.fixture(scope="session")
def provider7(world7):
    return world_provider(world7)


# ---------------------------------------------------------------- fixture table

Q = "who wrote the book"
T1 = "look up the author"
T2 = "the author is smith"
A = "smith"


def reward_fixture():
    """Two-step trajectory whose step-to-answer distances are 0.75 and ln 2
    and whose step-to-question distances are 0.25 and 0.5.

    Step 1: min(3, 6) / min(12, 4) = 0.75.
    Step 2: min(4 ln 2, 6) / min(12, 4) = ln 2 (4 ln 2 < 6).
    """
    table = {
        (T1, (A, Q)): 3.0, (A, (T1, Q)): 6.0, (T1, (Q,)): 12.0, (A, (Q,)): 4.0,
        (T2, (A, Q)): 4.0 * math.log(2.0), (A, (T2, Q)): 6.0, (T2, (Q,)): 12.0,
        # step-to-question entries: 2 / min(8, 10) = 0.25 and 3 / min(6, 10) = 0.5
        (T1, (Q, A)): 2.0, (Q, (T1, A)): 5.0, (T1, (A,)): 8.0, (Q, (A,)): 10.0,
        (T2, (Q, A)): 3.0, (Q, (T2, A)): 4.0, (T2, (A,)): 6.0,
    }
    traj = Trajectory(Q, [Step(T1, "author book", [Passage("d1", "smith wrote the book")]), Step(T2)], A)
    return TableProvider(table), traj


# ---------------------------------------------------------------- BM25 oracle

def brute_bm25(docs, query, k1=1.2, b=0.75):
    """Score every document directly from its token list (no postings)."""
    toks = [tokenize(d.title + " " + d.text) for d in docs]
    n = len(docs)
    avgdl = sum(len(t) for t in toks) / n
    out = {}
    for d, t in zip(docs, toks):
        tf = Counter(t)
        s, hit = 0.0, False
        for term in set(tokenize(query)):
            df = sum(1 for other in toks if term in other)
            if tf[term] == 0:
                continue
            hit = True
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            s += idf * tf[term] * (k1 + 1) / (tf[term] + k1 * (1 - b + b * len(t) / avgdl))
        if hit:
            out[d.doc_id] = s
    return out


FIXTURE_DOCS = [
    Document("d1", "Paris", "Paris is the capital of France."),
    Document("d2", "Berlin", "Berlin is the capital of Germany. Berlin is large."),
    Document("d3", "Tower", "The Eiffel Tower is in Paris."),
]


# ---------------------------------------------------------------- GRPO instances

def random_grpo_instance(rng, dim=6):
    """Small packed batch with ratios spread around 1 and mixed-sign advantages."""
    n = int(rng.integers(1, 6))
    sizes = rng.integers(2, 5, n)
    ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    phi = rng.normal(size=(int(ptr[-1]), dim))
    chosen = np.array([rng.integers(s) for s in sizes], dtype=np.int64)
    w = rng.normal(scale=0.5, size=dim)
    old = np.empty(n)
    ref = np.empty(n)
    for a in range(n):
        logits = phi[ptr[a]:ptr[a + 1]] @ w
        lse = logits.max() + np.log(np.exp(logits - logits.max()).sum())
        lp = logits[chosen[a]] - lse
        old[a] = lp + rng.normal(scale=0.3)
        ref[a] = lp + rng.normal(scale=0.3)
    adv = rng.normal(size=n)
    weight = rng.uniform(0.05, 0.5, n)
    return w, (phi, ptr, chosen, old, ref, adv, weight)


def finite_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    for d in range(len(w)):
        e = np.zeros_like(w)
        e[d] = h
        g[d] = (f(w + e) - f(w - e)) / (2 * h)
    return g


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
