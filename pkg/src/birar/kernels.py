"""Hot numeric kernels, each with a numba and a numpy implementation.

The public names (``ngram_bits``, ``bm25_scores``, ``grpo_objective``)
dispatch on ``BIRAR_DISABLE_NUMBA`` at call time. The ``*_jit`` and
``*_numpy`` variants are exported so tests and the benchmark can compare
them directly.
"""

import math

import numpy as np

from ._accel import njit, select

LOG2 = math.log(2.0)


# --------------------------------------------------------------------------
# n-gram conditional bits
# --------------------------------------------------------------------------


@njit
def _lookup(keys, counts, key):
    idx = np.searchsorted(keys, key)
    if idx < keys.shape[0] and keys[idx] == key:
        return counts[idx]
    return 0.0


@njit
def ngram_bits_jit(seq, n_ctx, order, base, bos, hist_keys, hist_counts,
                   full_keys, full_counts, k, vocab_size, cache_weight, floor):
    n = seq.shape[0]
    cache = np.zeros(vocab_size, dtype=np.float64)
    total = 0.0
    kv = k * vocab_size
    for j in range(n):
        if j >= n_ctx:
            hkey = 0
            for m in range(order - 1):
                pos = j - (order - 1) + m
                tok = seq[pos] if pos >= 0 else bos
                hkey = hkey * base + tok
            v = seq[j]
            c_hist = _lookup(hist_keys, hist_counts, hkey)
            c_full = _lookup(full_keys, full_counts, hkey * base + v)
            p = (c_full + k) / (c_hist + kv)
            if j > 0 and cache_weight > 0.0:
                p = (1.0 - cache_weight) * p + cache_weight * cache[v] / j
            if p < floor:
                p = floor
            total -= math.log(p)
        cache[seq[j]] += 1.0
    return total / LOG2


def ngram_bits_numpy(seq, n_ctx, order, base, bos, hist_keys, hist_counts,
                     full_keys, full_counts, k, vocab_size, cache_weight, floor):
    seq = np.asarray(seq, dtype=np.int64)
    n = seq.shape[0]
    if n_ctx >= n:
        return 0.0
    padded = np.concatenate([np.full(order - 1, bos, dtype=np.int64), seq])
    pos = np.arange(n_ctx, n)
    if order > 1:
        windows = np.lib.stride_tricks.sliding_window_view(padded, order - 1)[pos]
        powers = base ** np.arange(order - 2, -1, -1, dtype=np.int64)
        hkeys = windows @ powers
    else:
        hkeys = np.zeros(pos.shape[0], dtype=np.int64)
    tokens = seq[pos]
    fkeys = hkeys * base + tokens

    def lookup(keys, counts, query):
        idx = np.searchsorted(keys, query)
        safe = np.minimum(idx, max(keys.shape[0] - 1, 0))
        hit = (idx < keys.shape[0]) & (keys[safe] == query) if keys.shape[0] else np.zeros(query.shape, bool)
        out = np.zeros(query.shape[0], dtype=np.float64)
        if keys.shape[0]:
            out[hit] = counts[safe[hit]]
        return out

    c_hist = lookup(hist_keys, hist_counts, hkeys)
    c_full = lookup(full_keys, full_counts, fkeys)
    p = (c_full + k) / (c_hist + k * vocab_size)
    if cache_weight > 0.0:
        # earlier[i, j]: token j precedes target position i and equals its token
        earlier = (np.arange(n)[None, :] < pos[:, None]) & (seq[None, :] == tokens[:, None])
        mixed = (1.0 - cache_weight) * p + cache_weight * earlier.sum(axis=1) / np.maximum(pos, 1)
        p = np.where(pos > 0, mixed, p)
    p = np.maximum(p, floor)
    return float(-np.log(p).sum() / LOG2)


def ngram_bits(*args):
    return select(ngram_bits_jit, ngram_bits_numpy)(*args)


# --------------------------------------------------------------------------
# BM25 accumulation
# --------------------------------------------------------------------------


@njit
def bm25_scores_jit(term_ids, term_ptr, post_docs, post_tf, idf, doc_len, avgdl, k1, b):
    n_docs = doc_len.shape[0]
    scores = np.zeros(n_docs, dtype=np.float64)
    matched = np.zeros(n_docs, dtype=np.bool_)
    for q in range(term_ids.shape[0]):
        t = term_ids[q]
        w = idf[t]
        for p in range(term_ptr[t], term_ptr[t + 1]):
            d = post_docs[p]
            tf = post_tf[p]
            norm = k1 * (1.0 - b + b * doc_len[d] / avgdl)
            scores[d] += w * tf * (k1 + 1.0) / (tf + norm)
            matched[d] = True
    return scores, matched


def bm25_scores_numpy(term_ids, term_ptr, post_docs, post_tf, idf, doc_len, avgdl, k1, b):
    n_docs = doc_len.shape[0]
    scores = np.zeros(n_docs, dtype=np.float64)
    matched = np.zeros(n_docs, dtype=np.bool_)
    for t in term_ids:
        lo, hi = term_ptr[t], term_ptr[t + 1]
        docs = post_docs[lo:hi]
        tf = post_tf[lo:hi]
        norm = k1 * (1.0 - b + b * doc_len[docs] / avgdl)
        # docs within one posting list are unique, so fancy-index add is safe
        scores[docs] += idf[t] * tf * (k1 + 1.0) / (tf + norm)
        matched[docs] = True
    return scores, matched


def bm25_scores(*args):
    return select(bm25_scores_jit, bm25_scores_numpy)(*args)


# --------------------------------------------------------------------------
# GRPO clipped surrogate with KL penalty, analytic gradient
# --------------------------------------------------------------------------


@njit
def grpo_objective_jit(w, phi, cand_ptr, chosen, old_logp, ref_logp, adv, weight, eps, beta):
    n_actions = chosen.shape[0]
    dim = w.shape[0]
    grad = np.zeros(dim, dtype=np.float64)
    objective = 0.0
    kl_total = 0.0
    n_clipped = 0
    for a in range(n_actions):
        lo = cand_ptr[a]
        hi = cand_ptr[a + 1]
        m = hi - lo
        logits = np.empty(m, dtype=np.float64)
        top = -np.inf
        for i in range(m):
            s = 0.0
            for d in range(dim):
                s += phi[lo + i, d] * w[d]
            logits[i] = s
            if s > top:
                top = s
        z = 0.0
        for i in range(m):
            z += math.exp(logits[i] - top)
        lse = top + math.log(z)
        c = lo + chosen[a]
        logp = logits[chosen[a]] - lse
        ratio = math.exp(logp - old_logp[a])
        A = adv[a]
        unclipped = ratio * A
        clipped_ratio = min(max(ratio, 1.0 - eps), 1.0 + eps)
        clipped = clipped_ratio * A
        if unclipped <= clipped:
            surr = unclipped
            g_surr = ratio * A
        else:
            surr = clipped
            g_surr = 0.0
            n_clipped += 1
        x = ref_logp[a] - logp
        ex = math.exp(x)
        kl = math.expm1(x) - x  # exp(x) - x - 1 without cancellation near 0
        coef = weight[a] * (g_surr - beta * (1.0 - ex))
        objective += weight[a] * (surr - beta * kl)
        kl_total += weight[a] * kl
        # d logp / dw = phi[c] - sum_i p_i phi[i]
        for d in range(dim):
            grad[d] += coef * phi[c, d]
        for i in range(m):
            p = math.exp(logits[i] - lse)
            for d in range(dim):
                grad[d] -= coef * p * phi[lo + i, d]
    clip_frac = n_clipped / n_actions if n_actions > 0 else 0.0
    return objective, grad, kl_total, clip_frac


def grpo_objective_numpy(w, phi, cand_ptr, chosen, old_logp, ref_logp, adv, weight, eps, beta):
    n_actions = chosen.shape[0]
    if n_actions == 0:
        return 0.0, np.zeros_like(w), 0.0, 0.0
    logits = phi @ w
    starts = cand_ptr[:-1]
    seg = np.repeat(np.arange(n_actions), np.diff(cand_ptr))
    top = np.maximum.reduceat(logits, starts)
    z = np.add.reduceat(np.exp(logits - top[seg]), starts)
    lse = top + np.log(z)
    rows = starts + chosen
    logp = logits[rows] - lse
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    active = unclipped <= clipped
    surr = np.where(active, unclipped, clipped)
    g_surr = np.where(active, ratio * adv, 0.0)
    x = ref_logp - logp
    ex = np.exp(x)
    kl = np.expm1(x) - x
    coef = weight * (g_surr - beta * (1.0 - ex))
    row_coef = -coef[seg] * np.exp(logits - lse[seg])
    np.add.at(row_coef, rows, coef)
    grad = phi.T @ row_coef
    objective = float(np.sum(weight * (surr - beta * kl)))
    return objective, grad, float(np.sum(weight * kl)), float(np.mean(~active))


def grpo_objective(*args):
    return select(grpo_objective_jit, grpo_objective_numpy)(*args)
