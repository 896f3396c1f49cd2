"""Per-query effectiveness metrics: nDCG, judged-only nDCG*, MRR and Success."""

from __future__ import annotations

import math
import re
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .core import FormatError, Qrels, Run

KINDS = ("ndcg", "ndcg_star", "mrr", "success")


@dataclass(frozen=True)
class MetricSpec:
    kind: str
    cutoff: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric {self.kind!r}, expected one of {KINDS}")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")

    @classmethod
    def parse(cls, text: str) -> MetricSpec:
        """``"ndcg_star@10"`` -> MetricSpec("ndcg_star", 10)."""
        m = re.fullmatch(r"([a-z_]+)@(\d+)", text.strip())
        if not m:
            raise ValueError(f"bad metric {text!r}, expected name@cutoff")
        return cls(m.group(1), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.kind}@{self.cutoff}"


@dataclass(frozen=True)
class PerQueryScores:
    scores: Mapping[str, float]
    metric: MetricSpec
    tag: str = "run"

    def __post_init__(self):
        for qid, v in self.scores.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"query {qid}: score {v} outside [0, 1]")


def dcg(gains: Sequence[float]) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(gains))


def _ndcg_one(ranking: Sequence[str], judged: Mapping[str, int], k: int) -> float:
    ideal = sorted((2.0 ** g - 1.0 for g in judged.values()), reverse=True)[:k]
    idcg = dcg(ideal)
    if idcg == 0.0:
        return 0.0
    gains = [2.0 ** judged.get(d, 0) - 1.0 for d in ranking[:k]]
    return dcg(gains) / idcg


def _query_universe(run: Run, qrels: Qrels) -> list[str]:
    qids = qrels.query_ids
    if not any(q in run for q in qids):
        raise ValueError("run and qrels share no query")
    return qids


def _evaluate(run: Run, qrels: Qrels, spec: MetricSpec, fn, threads: int = 1) -> PerQueryScores:
    qids = _query_universe(run, qrels)

    def one(q):
        return fn(run.doc_ids(q), qrels[q])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(one, qids))
    else:
        vals = [one(q) for q in qids]
    return PerQueryScores(dict(zip(qids, vals)), spec, run.tag)


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10, threads: int = 1) -> PerQueryScores:
    """Exponential gain ``2^grade - 1`` and ``1/log2(rank + 1)`` discount.

    Every judged query is scored; queries missing from the run, or without a
    positive judgment, score 0.
    """
    return _evaluate(run, qrels, MetricSpec("ndcg", k), lambda r, j: _ndcg_one(r, j, k), threads)


def condense(ranking: Sequence[str], judged: Mapping[str, int]) -> list[str]:
    """Drop unjudged documents, closing up the ranks."""
    return [d for d in ranking if d in judged]


def ndcg_star_at_k(run: Run, qrels: Qrels, k: int = 10, threads: int = 1) -> PerQueryScores:
    """nDCG on the condensed (judged-only) list when the qrels contain grade-0
    judgments; plain nDCG otherwise. The check is made on the whole qrels.
    """
    if not qrels.has_negative_judgments:
        return PerQueryScores(ndcg_at_k(run, qrels, k, threads).scores, MetricSpec("ndcg_star", k), run.tag)
    return _evaluate(run, qrels, MetricSpec("ndcg_star", k),
                     lambda r, j: _ndcg_one(condense(r, j), j, k), threads)


def mrr_at_k(run: Run, qrels: Qrels, k: int = 10, rel_threshold: int = 1, threads: int = 1) -> PerQueryScores:
    def rr(ranking, judged):
        for rank, d in enumerate(ranking[:k], start=1):
            if judged.get(d, 0) >= rel_threshold:
                return 1.0 / rank
        return 0.0

    return _evaluate(run, qrels, MetricSpec("mrr", k), rr, threads)


def success_at_k(run: Run, qrels: Qrels, k: int = 5, rel_threshold: int = 1, threads: int = 1) -> PerQueryScores:
    def hit(ranking, judged):
        return 1.0 if any(judged.get(d, 0) >= rel_threshold for d in ranking[:k]) else 0.0

    return _evaluate(run, qrels, MetricSpec("success", k), hit, threads)


def evaluate(run: Run, qrels: Qrels, spec: MetricSpec | str, rel_threshold: int = 1, threads: int = 1) -> PerQueryScores:
    spec = MetricSpec.parse(spec) if isinstance(spec, str) else spec
    if spec.kind == "ndcg":
        return ndcg_at_k(run, qrels, spec.cutoff, threads)
    if spec.kind == "ndcg_star":
        return ndcg_star_at_k(run, qrels, spec.cutoff, threads)
    if spec.kind == "mrr":
        return mrr_at_k(run, qrels, spec.cutoff, rel_threshold, threads)
    return success_at_k(run, qrels, spec.cutoff, rel_threshold, threads)


def aggregate(scores: PerQueryScores | Mapping[str, float]) -> float:
    vals = scores.scores if isinstance(scores, PerQueryScores) else scores
    if not vals:
        raise ValueError("no queries to aggregate")
    return math.fsum(vals.values()) / len(vals)


def write_per_query(scores: PerQueryScores | Mapping[str, float], path: str | Path) -> None:
    vals = scores.scores if isinstance(scores, PerQueryScores) else scores
    with open(path, "w", encoding="utf-8") as f:
        for qid, v in vals.items():
            f.write(f"{qid}\t{v!r}\n")


def read_per_query(path: str | Path) -> dict[str, float]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError(f"expected 2 columns, got {len(parts)}", path, lineno)
            try:
                out[parts[0]] = float(parts[1])
            except ValueError:
                raise FormatError(f"non-numeric score {parts[1]!r}", path, lineno) from None
    return out
