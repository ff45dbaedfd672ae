#!/usr/bin/env python3
"""Numba vs numpy timings for the three hot kernels.

Usage:
    python benchmarks/bench_kernels.py [--repeat 20]

Each kernel runs once untimed (JIT compile or cache load), then ``repeat``
times per implementation. Both implementations get identical inputs and
their outputs are compared before timing.
"""

import argparse
import time

import numpy as np

from birar import kernels
from birar.lm import train_ngram
from birar.policy import FEATURE_DIM
from birar.retrieval import build_index
from birar.synthenv import generate_world
from birar.text import tokenize


def _time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def ngram_case(world):
    model = train_ngram([tokenize(d.text) for d in world.corpus], 3, 0.1)
    text = " ".join(d.text for d in world.corpus[:40])
    seq = model.ids(tokenize(text))
    return (seq, len(seq) // 2, model.order, model.base, model.bos_id, model.hist_keys, model.hist_counts,
            model.full_keys, model.full_counts, model.k, model.vocab_size, 0.5, 1e-12)


def bm25_case(world):
    index = build_index(world.corpus)
    ids = np.array([index.term_id(t) for t in tokenize(world.questions[0].text) if index.term_id(t) >= 0],
                   dtype=np.int64)
    return (ids, index.term_ptr, index.post_docs, index.post_tf, index.idf, index.doc_len,
            index.avgdl, index.k1, index.b)


def grpo_case(n_actions=4000, n_cand=30, seed=0):
    rng = np.random.default_rng(seed)
    ptr = np.arange(0, (n_actions + 1) * n_cand, n_cand, dtype=np.int64)
    phi = rng.integers(0, 2, size=(n_actions * n_cand, FEATURE_DIM)).astype(np.float64)
    w = rng.normal(size=FEATURE_DIM)
    chosen = rng.integers(0, n_cand, size=n_actions)
    old = -rng.uniform(0.1, 3.0, size=n_actions)
    ref = -rng.uniform(0.1, 3.0, size=n_actions)
    adv = rng.normal(size=n_actions)
    weight = np.full(n_actions, 1.0 / n_actions)
    return (w, phi, ptr, chosen, old, ref, adv, weight, 0.2, 0.001)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    world = generate_world(7)
    cases = [
        ("ngram_bits", kernels.ngram_bits_jit, kernels.ngram_bits_numpy, ngram_case(world)),
        ("bm25_scores", kernels.bm25_scores_jit, kernels.bm25_scores_numpy, bm25_case(world)),
        ("grpo_objective", kernels.grpo_objective_jit, kernels.grpo_objective_numpy, grpo_case()),
    ]
    print(f"{'kernel':<16}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}  agree")
    for name, jit_fn, np_fn, case in cases:
        agree = _same(jit_fn(*case), np_fn(*case))
        tj = _time(jit_fn, case, args.repeat)
        tn = _time(np_fn, case, args.repeat)
        print(f"{name:<16}{tj * 1e3:>12.3f}{tn * 1e3:>12.3f}{tn / tj:>9.1f}x  {agree}")


if __name__ == "__main__":
    main()
