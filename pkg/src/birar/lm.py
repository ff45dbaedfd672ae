"""Conditional bit-costs from language-model probabilities.

Two providers share one contract, ``provider.bits(target, contexts)``:

* :class:`NGramProvider` wraps an add-k smoothed n-gram model trained in
  process, optionally mixed with a unigram cache over everything already
  seen (context plus target prefix) so that conditioning text actually
  changes the cost of the target.
* :class:`RemoteProvider` asks a completions-style HTTP endpoint for echoed
  per-token logprobs of ``prompt + target``.

:func:`cond_bits` and :func:`cond_bits_joint` are the public entry points.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import LMError, MalformedResponseError, ProviderTransportError
from .text import TokenSeq, render, tokenize

UNK = "<unk>"
BOS = "<s>"
PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class NGramModel:
    """Immutable add-k n-gram model.

    Counts are stored as sorted integer keys so lookups vectorise. A history
    of length ``order - 1`` (BOS padded) with token ids ``h`` maps to the key
    ``sum(h[i] * base**(order-2-i))``; the n-gram key is ``hist * base + v``.
    ``BOS`` takes id ``vocab_size`` and never appears as a prediction.
    """

    order: int
    vocab: tuple  # sorted corpus tokens plus UNK
    k: float
    hist_keys: np.ndarray
    hist_counts: np.ndarray
    full_keys: np.ndarray
    full_counts: np.ndarray
    index: dict = field(repr=False)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def base(self) -> int:
        return len(self.vocab) + 1

    @property
    def bos_id(self) -> int:
        return len(self.vocab)

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def ids(self, tokens: Iterable[str]) -> np.ndarray:
        unk = self.index[UNK]
        return np.fromiter((self.index.get(t, unk) for t in tokens), dtype=np.int64)

    def _hist_key(self, history: Sequence[str]) -> int:
        width = self.order - 1
        hist = [BOS] * max(0, width - len(history)) + list(history)[-width:] if width else []
        key = 0
        for tok in hist:
            key = key * self.base + (self.bos_id if tok == BOS else self.index.get(tok, self.unk_id))
        return key

    def _count(self, keys: np.ndarray, counts: np.ndarray, key: int) -> float:
        i = int(np.searchsorted(keys, key))
        return float(counts[i]) if i < len(keys) and keys[i] == key else 0.0

    def prob(self, token: str, history: Sequence[str] = ()) -> float:
        """P(token | last order-1 tokens of history); unseen tokens score as UNK."""
        h = self._hist_key(history)
        v = self.index.get(token, self.unk_id)
        c_full = self._count(self.full_keys, self.full_counts, h * self.base + v)
        c_hist = self._count(self.hist_keys, self.hist_counts, h)
        return (c_full + self.k) / (c_hist + self.k * self.vocab_size)

    def distribution(self, history: Sequence[str] = ()) -> np.ndarray:
        """Probabilities over ``vocab`` (in order) for one history."""
        return np.array([self.prob(t, history) for t in self.vocab])

    def histories(self) -> list:
        """Decoded training histories, BOS included, as token tuples."""
        out = []
        width = self.order - 1
        for key in self.hist_keys.tolist():
            toks = []
            for _ in range(width):
                key, r = divmod(key, self.base)
                toks.append(BOS if r == self.bos_id else self.vocab[r])
            out.append(tuple(reversed(toks)))
        return out


def train_ngram(corpus: Sequence[TokenSeq], order: int, k: float) -> NGramModel:
    """Count BOS-padded n-grams over ``corpus``.

    Vocabulary is the set of corpus tokens plus UNK; BOS is a history marker
    only and there is no end-of-sequence token.
    """
    if order < 1:
        raise LMError(f"order must be >= 1, got {order}")
    if not (k > 0):
        raise LMError(f"add-k constant must be positive, got {k}")
    corpus = [tuple(seq) for seq in corpus]
    if not corpus or not any(corpus):
        raise LMError("cannot train an n-gram model on an empty corpus")

    vocab = tuple(sorted({t for seq in corpus for t in seq} | {UNK}))
    index = {t: i for i, t in enumerate(vocab)}
    base = len(vocab) + 1
    if base ** order >= 2**62:
        raise LMError(f"vocabulary of {len(vocab)} too large for order {order} keys")
    bos = len(vocab)

    hist: Counter = Counter()
    full: Counter = Counter()
    for seq in corpus:
        ids = [bos] * (order - 1) + [index[t] for t in seq]
        for j in range(len(seq)):
            h = 0
            for tok in ids[j : j + order - 1]:
                h = h * base + tok
            hist[h] += 1
            full[h * base + ids[j + order - 1]] += 1

    def arrays(counter):
        keys = np.array(sorted(counter), dtype=np.int64)
        return keys, np.array([counter[x] for x in keys.tolist()], dtype=np.float64)

    hk, hc = arrays(hist)
    fk, fc = arrays(full)
    return NGramModel(order, vocab, float(k), hk, hc, fk, fc, index)


class NGramProvider:
    """Bit-cost provider over an :class:`NGramModel`.

    ``cache_weight`` mixes in a unigram cache over all preceding tokens, which
    keeps the model a proper sequential distribution (chain rule holds) while
    letting tokens present in the conditioning context become cheap.
    """

    def __init__(self, model: NGramModel, cache_weight: float = 0.0, cache_size: int = 1 << 18):
        if not 0.0 <= cache_weight < 1.0:
            raise LMError(f"cache_weight must lie in [0, 1), got {cache_weight}")
        self.model = model
        self.cache_weight = float(cache_weight)
        self._bits = lru_cache(maxsize=cache_size)(self._bits_uncached)

    def bits(self, target: TokenSeq, contexts: Sequence[TokenSeq] = ()) -> float:
        if not target:
            return 0.0
        context = tuple(t for c in contexts for t in c)
        return self._bits(tuple(target), context)

    def _bits_uncached(self, target: TokenSeq, context: TokenSeq) -> float:
        m = self.model
        seq = m.ids(context + target)
        return float(kernels.ngram_bits(
            seq, len(context), m.order, m.base, m.bos_id, m.hist_keys, m.hist_counts,
            m.full_keys, m.full_counts, m.k, m.vocab_size, self.cache_weight, PROB_FLOOR,
        ))


class TableProvider:
    """Fixed bit-cost table keyed by ``(target text, context texts)``.

    Texts are token sequences joined by single spaces; empty context segments
    are dropped from the key, so a one-context and a two-context lookup with
    an empty second segment hit the same entry. Missing keys raise.
    """

    def __init__(self, table: dict):
        self._table = {}
        for (target, contexts), value in table.items():
            if isinstance(contexts, str):
                contexts = (contexts,)
            if value < 0:
                raise LMError(f"bit cost must be non-negative, got {value}")
            self._table[(render(tokenize(target)), tuple(render(tokenize(c)) for c in contexts if tokenize(c)))] = float(value)

    def bits(self, target: TokenSeq, contexts: Sequence[TokenSeq] = ()) -> float:
        if not target:
            return 0.0
        key = (render(target), tuple(render(c) for c in contexts if c))
        try:
            return self._table[key]
        except KeyError:
            raise LMError(f"no table entry for target {key[0]!r} given {list(key[1])!r}") from None


def render_prompt(contexts: Sequence[TokenSeq]) -> str:
    """The fixed conditioning template; empty context segments are omitted."""
    body = "".join(render(c) + "\n" for c in contexts if c)
    return "CONTEXT:\n" + body + "TARGET:\n"


@dataclass(frozen=True)
class RemoteProviderConfig:
    endpoint: str
    model: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    max_in_flight: int = 4
    api_key: str | None = None

    def __post_init__(self):
        if not self.endpoint:
            raise LMError("remote provider needs an endpoint URL")
        if not self.timeout > 0:
            raise LMError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise LMError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise LMError(f"max_in_flight must be >= 1, got {self.max_in_flight}")

    @classmethod
    def from_env(cls, **overrides) -> "RemoteProviderConfig":
        env = os.environ
        kwargs = {
            "endpoint": env.get("BIRAR_LM_ENDPOINT", ""),
            "model": env.get("BIRAR_LM_MODEL", ""),
            "api_key": env.get("BIRAR_LM_API_KEY") or None,
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


class RemoteProvider:
    """Completions endpoint client; logprobs are read as natural logs.

    The request echoes ``prompt + target`` with ``max_tokens=0`` and sums the
    logprobs of the tokens whose text offset falls inside the target span.
    """

    def __init__(self, config: RemoteProviderConfig):
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def bits(self, target: TokenSeq, contexts: Sequence[TokenSeq] = ()) -> float:
        if not target:
            return 0.0
        prompt = render_prompt(contexts)
        payload = {
            "model": self.config.model,
            "prompt": prompt + render(target),
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0,
        }
        with self._slots:
            response = self._post(payload)
        return _target_bits(response, len(prompt))

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode()
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last = None
        for attempt in range(self.config.max_retries + 1):
            req = urllib.request.Request(self.config.endpoint, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                    raw = resp.read()
            except (urllib.error.URLError, OSError) as exc:
                last = exc
                if attempt < self.config.max_retries:
                    time.sleep(min(0.05 * 2**attempt, 1.0))
                continue
            try:
                return json.loads(raw)
            except ValueError as exc:
                raise MalformedResponseError(f"response is not JSON: {exc}") from exc
        raise ProviderTransportError(
            f"request to {self.config.endpoint} failed after {self.config.max_retries + 1} attempts: {last}"
        )


def _target_bits(response: dict, target_start: int) -> float:
    try:
        lp = response["choices"][0]["logprobs"]
        tokens = lp["tokens"]
        logprobs = lp["token_logprobs"]
        offsets = lp["text_offset"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"missing logprobs field: {exc!r}") from exc
    if not (len(tokens) == len(logprobs) == len(offsets)):
        raise MalformedResponseError("tokens, token_logprobs and text_offset differ in length")
    floor = math.log(PROB_FLOOR)
    total = 0.0
    seen = False
    for off, value in zip(offsets, logprobs):
        if off < target_start:
            continue
        seen = True
        if value is None:
            raise MalformedResponseError(f"null logprob inside target at offset {off}")
        total -= max(float(value), floor)
    if not seen:
        raise MalformedResponseError("no echoed tokens fall inside the target span")
    return total / math.log(2.0)


def cond_bits(provider, target: TokenSeq, context: TokenSeq = ()) -> float:
    """-log2 P(target | context), chained token by token."""
    return provider.bits(tuple(target), (tuple(context),))


def cond_bits_joint(provider, target: TokenSeq, context1: TokenSeq, context2: TokenSeq) -> float:
    """-log2 P(target | context1, context2) under the two-segment template."""
    return provider.bits(tuple(target), (tuple(context1), tuple(context2)))
