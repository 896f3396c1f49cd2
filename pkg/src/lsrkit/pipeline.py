"""Glue between stages: first-stage retrieval, training data, encoded runs."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

from .core import Qrels, Run, SparseVector, TeacherScoreTable
from .distill import NegativePolicy, RescoreTarget, attach_scores, ensemble, rescore, sample_negatives
from .index import Bm25Params, build_bm25_index, build_index, flops_metric, search_run
from .toytrain import EncoderParams, Side, TrainingData, encode_collection

# moments of the single-teacher scores the rescored ensemble is matched to
DEFAULT_RESCORE = RescoreTarget(target_mean=0.0, target_std=4.0)


def bm25_run(doc_counts: Mapping[str, SparseVector], query_counts: Mapping[str, SparseVector], k: int,
             params: Bm25Params = Bm25Params(), tag: str = "bm25", threads: int = 1) -> Run:
    return search_run(build_bm25_index(doc_counts, params), query_counts, k, tag, threads)


def teacher_scores(table: TeacherScoreTable, target: RescoreTarget | None = DEFAULT_RESCORE) -> dict[str, dict[str, float]]:
    scores = ensemble(table)
    return rescore(scores, target) if target is not None else scores


def training_data(run: Run, qrels: Qrels, scores: Mapping[str, Mapping[str, float]],
                  query_counts: Mapping[str, SparseVector], doc_counts: Mapping[str, SparseVector],
                  policy: NegativePolicy, rel_threshold: int = 1) -> TrainingData:
    positives = {q: qrels.positives(q, rel_threshold) for q in qrels.query_ids if q in query_counts}
    positives = {q: p for q, p in positives.items() if p}
    groups = attach_scores(sample_negatives(run, positives, policy), scores)
    return TrainingData(groups, query_counts, doc_counts)


@dataclass
class EncodedRun:
    run: Run
    query_reps: dict[str, SparseVector]
    doc_reps: dict[str, SparseVector]

    @property
    def flops(self) -> float:
        return flops_metric(self.query_reps.values(), self.doc_reps.values())


def encoder_run(params: EncoderParams, query_counts: Mapping[str, SparseVector], doc_counts: Mapping[str, SparseVector],
                k: int, tag: str, threads: int = 1) -> EncodedRun:
    q = encode_collection(params, query_counts, Side.QUERY)
    d = encode_collection(params, doc_counts, Side.DOC)
    return EncodedRun(search_run(build_index(d), q, k, tag, threads), q, d)
