"""Re-rank the head of a first-stage run with externally supplied scores."""

from __future__ import annotations

import math
from collections.abc import Mapping

from .core import Run

TAIL_EPSILON = 1e-6


class MissingScoresError(KeyError):
    def __init__(self, pairs: list[tuple[str, str]]):
        super().__init__(f"{len(pairs)} (query, doc) pairs in the re-ranked head have no score, e.g. {pairs[:5]}")
        self.pairs = pairs


def rerank_topk(run: Run, scores: Mapping[str, Mapping[str, float]], k: int = 50, tag: str | None = None) -> Run:
    """Re-sort each query's top ``k`` by ``scores``; the tail keeps its order.

    Tail documents get ``min(head scores) - TAIL_EPSILON * position`` so the
    result stays monotone and every tail doc sits below every head doc. At
    magnitudes where that step is below float resolution, each tail score
    drops by one ulp instead.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    missing = [(q, d) for q, ranking in run.results.items() for d, _ in ranking[:k]
               if d not in scores.get(q, {})]
    if missing:
        raise MissingScoresError(missing)
    out = {}
    for qid, ranking in run.results.items():
        head = sorted(((d, float(scores[qid][d])) for d, _ in ranking[:k]), key=lambda e: (-e[1], e[0]))
        tail = []
        if len(ranking) > k:
            floor = prev = head[-1][1]
            for i, (d, _) in enumerate(ranking[k:], start=1):
                s = floor - TAIL_EPSILON * i
                if s >= prev:
                    s = math.nextafter(prev, -math.inf)
                tail.append((d, s))
                prev = s
        out[qid] = head + tail
    return Run(out, run.tag if tag is None else tag)
