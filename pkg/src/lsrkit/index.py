"""Impact-ordered inverted index, exact top-k dot-product search, BM25 and FLOPS."""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Run, SparseVector

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


class InvertedIndex:
    """Posting lists of ``(doc ordinal, weight)`` sorted by descending weight.

    Postings are stored CSR style: ``terms[i]`` owns the slice
    ``offsets[i]:offsets[i+1]`` of ``ordinals``/``weights``.
    """

    def __init__(self, doc_ids: Sequence[str], terms: np.ndarray, offsets: np.ndarray,
                 ordinals: np.ndarray, weights: np.ndarray):
        self.doc_ids = tuple(doc_ids)
        self.terms = np.asarray(terms, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.ordinals = np.asarray(ordinals, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=np.float64)
        for arr in (self.terms, self.offsets, self.ordinals, self.weights):
            arr.setflags(write=False)
        self._slot = {int(t): i for i, t in enumerate(self.terms.tolist())}
        # rank of each doc id under string ordering, for tie breaking
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self._id_rank = np.empty(len(self.doc_ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.doc_ids))

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def num_postings(self) -> int:
        return int(self.ordinals.size)

    def postings(self, term: int) -> list[tuple[str, float]]:
        slot = self._slot.get(int(term))
        if slot is None:
            return []
        lo, hi = self.offsets[slot], self.offsets[slot + 1]
        return [(self.doc_ids[o], float(w)) for o, w in zip(self.ordinals[lo:hi].tolist(), self.weights[lo:hi].tolist())]

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"version": SNAPSHOT_VERSION, "num_docs": self.num_docs, "num_postings": self.num_postings}
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
        (d / "doc_ids.json").write_text(json.dumps(list(self.doc_ids)) + "\n", encoding="utf-8")
        for name in ("terms", "offsets", "ordinals", "weights"):
            np.save(d / f"{name}.npy", getattr(self, name))

    @classmethod
    def load(cls, directory: str | Path) -> InvertedIndex:
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        if meta.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported index snapshot version {meta.get('version')}")
        doc_ids = json.loads((d / "doc_ids.json").read_text(encoding="utf-8"))
        arrays = {name: np.load(d / f"{name}.npy") for name in ("terms", "offsets", "ordinals", "weights")}
        return cls(doc_ids, **arrays)


def build_index(collection: Mapping[str, SparseVector] | Iterable[tuple[str, SparseVector]]) -> InvertedIndex:
    items = list(collection.items() if isinstance(collection, Mapping) else collection)
    doc_ids = [d for d, _ in items]
    if len(set(doc_ids)) != len(doc_ids):
        seen, dups = set(), []
        for d in doc_ids:
            if d in seen:
                dups.append(d)
            seen.add(d)
        raise ValueError(f"duplicate doc ids: {dups[:5]}")

    per_term: dict[int, list[tuple[int, float]]] = {}
    for ordinal, (_, vec) in enumerate(items):
        for term, weight in vec.items():
            per_term.setdefault(term, []).append((ordinal, weight))

    terms = sorted(per_term)
    offsets = [0]
    ordinals: list[int] = []
    weights: list[float] = []
    for term in terms:
        plist = sorted(per_term[term], key=lambda p: (-p[1], p[0]))
        ordinals.extend(o for o, _ in plist)
        weights.extend(w for _, w in plist)
        offsets.append(len(ordinals))
    return InvertedIndex(doc_ids, np.array(terms, dtype=np.int64), np.array(offsets, dtype=np.int64),
                         np.array(ordinals, dtype=np.int64), np.array(weights, dtype=np.float64))


def search(index: InvertedIndex, query: Mapping[int, float], k: int) -> list[tuple[str, float]]:
    """Exact top-k by dot product; ties broken by ascending doc id.

    Only documents with a strictly positive score are returned.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if index.num_docs == 0 or not query:
        return []
    acc = np.zeros(index.num_docs, dtype=np.float64)
    touched = np.zeros(index.num_docs, dtype=bool)
    # ascending term order, one add per (term, doc): same float ops as SparseVector.dot
    for term in sorted(query):
        slot = index._slot.get(int(term))
        if slot is None:
            continue
        lo, hi = index.offsets[slot], index.offsets[slot + 1]
        ords = index.ordinals[lo:hi]
        acc[ords] += query[term] * index.weights[lo:hi]
        touched[ords] = True
    (cand,) = np.nonzero(touched & (acc > 0))
    if cand.size == 0:
        return []
    if cand.size > k:
        kth = np.partition(-acc[cand], k - 1)[k - 1]
        cand = cand[-acc[cand] <= kth]
    order = np.lexsort((index._id_rank[cand], -acc[cand]))[:k]
    top = cand[order]
    return [(index.doc_ids[o], float(acc[o])) for o in top.tolist()]


def search_run(index: InvertedIndex, queries: Mapping[str, Mapping[int, float]], k: int,
               tag: str = "run", threads: int = 1) -> Run:
    """Search every query; output is identical for any thread count."""
    qids = list(queries)

    def one(qid):
        return search(index, queries[qid], k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, qids))
    else:
        results = [one(q) for q in qids]
    return Run(dict(zip(qids, results)), tag)


# ---------------------------------------------------------------------------
# BM25
# ---------------------------------------------------------------------------


def bm25_idf(num_docs: int, df: int) -> float:
    return math.log(1.0 + (num_docs - df + 0.5) / (df + 0.5))


def bm25_weights(corpus: Mapping[str, Mapping[int, float]], params: Bm25Params = Bm25Params()) -> dict[str, SparseVector]:
    """Per-document BM25 term impacts ``idf * tf*(k1+1) / (tf + k1*(1-b+b*dl/avgdl))``.

    Scoring a query against these impacts with the query term counts as
    weights gives the Okapi BM25 score (repeated query terms count repeatedly).
    """
    if not corpus:
        raise ValueError("empty corpus")
    n = len(corpus)
    lengths = {d: sum(v.values()) for d, v in corpus.items()}
    avgdl = sum(lengths.values()) / n
    df: dict[int, int] = {}
    for vec in corpus.values():
        for term, tf in vec.items():
            if tf > 0:
                df[term] = df.get(term, 0) + 1
    out = {}
    for doc, vec in corpus.items():
        norm = params.k1 * (1.0 - params.b + params.b * lengths[doc] / avgdl) if avgdl > 0 else params.k1
        out[doc] = SparseVector({
            t: bm25_idf(n, df[t]) * tf * (params.k1 + 1.0) / (tf + norm)
            for t, tf in vec.items() if tf > 0
        })
    return out


def build_bm25_index(corpus: Mapping[str, Mapping[int, float]], params: Bm25Params = Bm25Params()) -> InvertedIndex:
    return build_index(bm25_weights(corpus, params))


def bm25_search(corpus: Mapping[str, Mapping[int, float]], query: Mapping[int, float],
                params: Bm25Params = Bm25Params(), k: int = 1000) -> list[tuple[str, float]]:
    return search(build_bm25_index(corpus, params), query, k)


# ---------------------------------------------------------------------------
# FLOPS
# ---------------------------------------------------------------------------


def activation_probabilities(vectors: Iterable[Mapping[int, float]]) -> tuple[dict[int, float], int]:
    counts: dict[int, int] = {}
    n = 0
    for vec in vectors:
        n += 1
        for term, w in vec.items():
            if w != 0:
                counts[term] = counts.get(term, 0) + 1
    return {t: c / n for t, c in counts.items()} if n else {}, n


def flops_metric(queries: Iterable[Mapping[int, float]], docs: Iterable[Mapping[int, float]]) -> float:
    """Expected number of term multiplications per query-document pair.

    ``sum_j p_j(queries) * p_j(docs)`` with ``p_j`` the fraction of vectors
    active on term ``j``.
    """
    pq, nq = activation_probabilities(queries)
    pd, nd = activation_probabilities(docs)
    if nq == 0 or nd == 0:
        raise ValueError("flops_metric needs non-empty query and document collections")
    return float(sum(p * pd[t] for t, p in sorted(pq.items()) if t in pd))
