"""Teacher-score preparation and negative pools for distillation training.

Raw cross-encoder scores are min-max normalised per query and teacher,
averaged across teachers ("ensemble" scores) and optionally mapped by one
global affine transform onto a reference mean/std ("rescored" scores).
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .core import Run, TeacherScoreTable, TrainingGroup

log = logging.getLogger(__name__)

ScoreMap = dict[str, dict[str, float]]


@dataclass(frozen=True)
class RescoreTarget:
    target_mean: float
    target_std: float

    def __post_init__(self):
        if not self.target_std >= 0:
            raise ValueError("target_std must be >= 0")


@dataclass(frozen=True)
class NegativePolicy:
    n_top: int = 50
    n_random: int = 50
    random_pool_depth: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_top < 0 or self.n_random < 0:
            raise ValueError("n_top and n_random must be >= 0")
        if self.random_pool_depth < self.n_top + self.n_random:
            raise ValueError("random_pool_depth must be >= n_top + n_random")


def query_rng(seed: int, qid: str, *extra: int) -> np.random.Generator:
    """Generator keyed on (seed, query id), independent of processing order."""
    digest = hashlib.sha256(qid.encode("utf-8")).digest()
    return np.random.default_rng([int(seed), int.from_bytes(digest[:8], "little"), *extra])


def minmax_normalize(scores: Mapping[str, float]) -> dict[str, float]:
    """``(s - min) / (max - min)``; a constant score set maps to 0.5."""
    if not scores:
        raise ValueError("minmax_normalize needs at least one candidate")
    vals = list(scores.values())
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite score")
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return {d: 0.5 for d in scores}
    span = hi - lo
    return {d: (s - lo) / span for d, s in scores.items()}


def ensemble(table: TeacherScoreTable) -> ScoreMap:
    """Equal-weight mean of per-query min-max normalised teacher columns."""
    k = table.num_teachers
    out: ScoreMap = {}
    for qid, docs in table.rows.items():
        if not docs:
            continue
        columns = [minmax_normalize({d: v[i] for d, v in docs.items()}) for i in range(k)]
        out[qid] = {d: math.fsum(col[d] for col in columns) / k for d in docs}
    return out


def score_moments(scores: Mapping[str, Mapping[str, float]]) -> tuple[float, float]:
    """Global mean and population std over every (query, doc) pair."""
    vals = np.array([s for docs in scores.values() for s in docs.values()], dtype=np.float64)
    if vals.size == 0:
        raise ValueError("no scores")
    mean = vals.mean()
    return float(mean), float(np.sqrt(np.mean((vals - mean) ** 2)))


def rescore(scores: Mapping[str, Mapping[str, float]], target: RescoreTarget) -> ScoreMap:
    """Affine map ``a*s + b`` giving the global moments of ``target``."""
    mean, std = score_moments(scores)
    if std == 0.0:
        if target.target_std > 0:
            raise ValueError("cannot rescale constant scores to a positive std")
        a = 0.0
    else:
        a = target.target_std / std
    return {q: {d: a * (s - mean) + target.target_mean for d, s in docs.items()} for q, docs in scores.items()}


@dataclass
class SamplingReport:
    skipped_queries: list[str] = field(default_factory=list)
    shortfall: dict[str, int] = field(default_factory=dict)


def sample_negatives(run: Run, positives: Mapping[str, Iterable[str]], policy: NegativePolicy = NegativePolicy(),
                     report: SamplingReport | None = None) -> list[TrainingGroup]:
    """Hard negatives: top ``n_top`` non-positives plus ``n_random`` drawn uniformly
    from the following non-positives up to ``random_pool_depth``.

    Positives are removed from the ranking before ranks are counted, so the
    two pools are disjoint. Queries missing from the run (or without
    positives) are skipped and listed in ``report``.
    """
    report = report if report is not None else SamplingReport()
    groups = []
    for qid, pos in positives.items():
        pos = tuple(dict.fromkeys(pos))
        if not pos:
            log.warning("query %s has no positives, skipped", qid)
            report.skipped_queries.append(qid)
            continue
        if qid not in run:
            log.warning("query %s absent from run, skipped", qid)
            report.skipped_queries.append(qid)
            continue
        pos_set = set(pos)
        ranked = [d for d in run.doc_ids(qid) if d not in pos_set][: policy.random_pool_depth]
        top = ranked[: policy.n_top]
        pool = ranked[policy.n_top:]
        n_rand = min(policy.n_random, len(pool))
        if n_rand:
            picks = query_rng(policy.seed, qid).choice(len(pool), size=n_rand, replace=False)
            rand = [pool[i] for i in picks.tolist()]
        else:
            rand = []
        missing = policy.n_top + policy.n_random - len(top) - len(rand)
        if missing:
            report.shortfall[qid] = missing
        groups.append(TrainingGroup(qid, pos, tuple(top + rand)))
    if report.shortfall:
        log.warning("%d queries had shallow runs (%d negatives short in total)",
                    len(report.shortfall), sum(report.shortfall.values()))
    return groups


def subsample_group(group: TrainingGroup, n: int, seed: int, *stream: int) -> TrainingGroup:
    """Keep ``n`` negatives chosen uniformly without replacement (pool order kept)."""
    pool = group.negative_ids
    if n < 0 or n > len(pool):
        raise ValueError(f"cannot draw {n} negatives from a pool of {len(pool)}")
    idx = np.sort(query_rng(seed, group.query_id, *stream).choice(len(pool), size=n, replace=False))
    negs = tuple(pool[i] for i in idx.tolist())
    scores = None
    if group.scores is not None:
        scores = {d: group.scores[d] for d in group.positive_ids + negs}
    return TrainingGroup(group.query_id, group.positive_ids, negs, scores)


def attach_scores(groups: Iterable[TrainingGroup], scores: Mapping[str, Mapping[str, float]]) -> list[TrainingGroup]:
    out = []
    for g in groups:
        if g.query_id not in scores:
            raise KeyError(f"no scores for query {g.query_id}")
        out.append(g.with_scores(scores[g.query_id]))
    return out
