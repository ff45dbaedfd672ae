"""BM25 inverted index over a JSONL corpus.

Scoring uses the non-negative idf ``ln((N - df + 0.5) / (df + 0.5) + 1)``.
Repeated query terms count once. Documents are stored in ascending
``doc_id`` order, so posting lists are sorted by ``doc_id`` and ties in
score break towards the smaller id.

Index file layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"BIRARIDX"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H
    16      4     uint32 CRC32 of the array payload
    20      H     UTF-8 JSON header: k1, b, avgdl, doc_ids, terms, counts
    20+H    ...   int64   term_ptr[n_terms + 1]
                  int64   post_docs[n_postings]
                  float64 post_tf[n_postings]
                  float64 doc_len[n_docs]
                  float64 idf[n_terms]
"""

from __future__ import annotations

import json
import struct
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CorruptIndexError, IndexVersionError, RetrievalError
from .text import tokenize

MAGIC = b"BIRARIDX"
FORMAT_VERSION = 1
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
_PREFIX = struct.Struct("<8sIII")


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str


def validate_corpus(docs) -> list:
    docs = list(docs)
    if not docs:
        raise RetrievalError("corpus is empty")
    seen = set()
    for d in docs:
        if d.doc_id in seen:
            raise RetrievalError(f"duplicate doc_id {d.doc_id!r}")
        if not d.text:
            raise RetrievalError(f"document {d.doc_id!r} has empty text")
        seen.add(d.doc_id)
    return docs


def load_corpus(path) -> list:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append(Document(str(obj["id"]), str(obj.get("title", "")), str(obj["text"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise RetrievalError(f"{path}:{lineno}: bad corpus line: {exc!r}") from exc
    return validate_corpus(docs)


def write_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"id": d.doc_id, "title": d.title, "text": d.text}, sort_keys=True) + "\n")


@dataclass(frozen=True, eq=False)
class Index:
    k1: float
    b: float
    doc_ids: tuple
    terms: tuple
    term_ptr: np.ndarray
    post_docs: np.ndarray
    post_tf: np.ndarray
    doc_len: np.ndarray
    idf: np.ndarray
    avgdl: float

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def __post_init__(self):
        object.__setattr__(self, "_tid", {t: i for i, t in enumerate(self.terms)})

    def term_id(self, term: str) -> int:
        return self._tid.get(term, -1)

    def postings(self, term: str) -> list:
        """``[(doc_id, tf), ...]`` for one term, sorted by doc_id."""
        t = self.term_id(term)
        if t < 0:
            return []
        lo, hi = self.term_ptr[t], self.term_ptr[t + 1]
        return [(self.doc_ids[d], int(tf)) for d, tf in zip(self.post_docs[lo:hi], self.post_tf[lo:hi])]


def build_index(docs, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Index:
    if not k1 > 0:
        raise RetrievalError(f"k1 must be > 0, got {k1}")
    if not 0.0 <= b <= 1.0:
        raise RetrievalError(f"b must lie in [0, 1], got {b}")
    docs = sorted(validate_corpus(docs), key=lambda d: d.doc_id)
    bags = [Counter(tokenize(d.title + " " + d.text)) for d in docs]
    terms = tuple(sorted({t for bag in bags for t in bag}))
    tid = {t: i for i, t in enumerate(terms)}

    lists: list[list] = [[] for _ in terms]
    for d, bag in enumerate(bags):
        for t, tf in bag.items():
            lists[tid[t]].append((d, tf))
    term_ptr = np.zeros(len(terms) + 1, dtype=np.int64)
    term_ptr[1:] = np.cumsum([len(x) for x in lists])
    post_docs = np.array([d for x in lists for d, _ in x], dtype=np.int64)
    post_tf = np.array([tf for x in lists for _, tf in x], dtype=np.float64)
    doc_len = np.array([sum(bag.values()) for bag in bags], dtype=np.float64)
    n = len(docs)
    df = np.diff(term_ptr).astype(np.float64)
    idf = np.log((n - df + 0.5) / (df + 0.5) + 1.0)
    return Index(float(k1), float(b), tuple(d.doc_id for d in docs), terms, term_ptr,
                 post_docs, post_tf, doc_len, idf, float(doc_len.mean()))


def search(index: Index, query: str, k: int = 10) -> list:
    """Top-``k`` ``(doc_id, score)`` by descending BM25 score."""
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    ids = []
    for t in dict.fromkeys(tokenize(query)):
        i = index.term_id(t)
        if i >= 0:
            ids.append(i)
    if not ids:
        return []
    scores, matched = kernels.bm25_scores(
        np.array(ids, dtype=np.int64), index.term_ptr, index.post_docs, index.post_tf,
        index.idf, index.doc_len, index.avgdl, index.k1, index.b,
    )
    cand = np.flatnonzero(matched)
    order = cand[np.lexsort((cand, -scores[cand]))][:k]
    return [(index.doc_ids[d], float(scores[d])) for d in order]


def save_index(index: Index, path) -> None:
    header = json.dumps({
        "k1": index.k1,
        "b": index.b,
        "avgdl": index.avgdl,
        "doc_ids": list(index.doc_ids),
        "terms": list(index.terms),
        "n_postings": int(index.post_docs.shape[0]),
    }, sort_keys=True).encode()
    payload = b"".join([
        index.term_ptr.astype("<i8").tobytes(),
        index.post_docs.astype("<i8").tobytes(),
        index.post_tf.astype("<f8").tobytes(),
        index.doc_len.astype("<f8").tobytes(),
        index.idf.astype("<f8").tobytes(),
    ])
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header), zlib.crc32(payload)))
        fh.write(header)
        fh.write(payload)


def load_index(path) -> Index:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CorruptIndexError(f"{path}: file too short for an index header")
    magic, version, hlen, crc = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptIndexError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"{path}: index format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size:start].decode())
        n_docs, n_terms, n_post = len(header["doc_ids"]), len(header["terms"]), header["n_postings"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptIndexError(f"{path}: unreadable header: {exc!r}") from exc
    payload = raw[start:]
    expected = 8 * ((n_terms + 1) + n_post + n_post + n_docs + n_terms)
    if len(payload) != expected or zlib.crc32(payload) != crc:
        raise CorruptIndexError(f"{path}: payload truncated or checksum mismatch")
    sizes = [("<i8", n_terms + 1), ("<i8", n_post), ("<f8", n_post), ("<f8", n_docs), ("<f8", n_terms)]
    arrays, off = [], 0
    for dtype, count in sizes:
        arrays.append(np.frombuffer(payload, dtype=dtype, count=count, offset=off).astype(dtype[1:]))
        off += 8 * count
    term_ptr, post_docs, post_tf, doc_len, idf = arrays
    return Index(float(header["k1"]), float(header["b"]), tuple(header["doc_ids"]), tuple(header["terms"]),
                 term_ptr.astype(np.int64), post_docs.astype(np.int64), post_tf.astype(np.float64),
                 doc_len.astype(np.float64), idf.astype(np.float64), float(header["avgdl"]))

