"""Domain types and text formats shared by every stage of the toolkit.

Formats
-------
run      ``qid Q0 docid rank score tag`` (scores printed with 6 decimals)
qrels    ``qid 0 docid grade``
vectors  JSON lines ``{"id": "d1", "vector": {"3": 1.5, "9": 0.25}}``
scores   TSV ``qid<TAB>docid<TAB>s1 ... sK`` with a header row naming the
         K score columns
groups   JSON lines ``{"qid": ..., "pos": [...], "neg": [...], "scores": {...}}``
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

log = logging.getLogger(__name__)

SCORE_DECIMALS = 6


class FormatError(ValueError):
    """A data file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


# ---------------------------------------------------------------------------
# Sparse vectors
# ---------------------------------------------------------------------------


class SparseVector(Mapping[int, float]):
    """Immutable map from term id to a strictly positive, finite weight.

    Iteration is in ascending term-id order, which fixes the summation order
    of every dot product computed in the package.
    """

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[int, float] | Iterable[tuple[int, float]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        clean: dict[int, float] = {}
        for term, weight in items:
            term = int(term)
            weight = float(weight)
            if term < 0:
                raise ValueError(f"negative term id {term}")
            if not math.isfinite(weight):
                raise ValueError(f"non-finite weight for term {term}")
            if term in clean:
                raise ValueError(f"duplicate term id {term}")
            if weight > 0.0:
                clean[term] = weight
        self._entries = MappingProxyType(dict(sorted(clean.items())))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> SparseVector:
        dense = np.asarray(dense, dtype=np.float64)
        (nz,) = np.nonzero(dense > 0)
        return cls(zip(nz.tolist(), dense[nz].tolist()))

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size, dtype=np.float64)
        for term, weight in self._entries.items():
            if term >= size:
                raise ValueError(f"term {term} outside vocabulary of size {size}")
            out[term] = weight
        return out

    def __getitem__(self, term: int) -> float:
        return self._entries[term]

    def __iter__(self) -> Iterator[int]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"SparseVector({dict(self._entries)!r})"

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Mapping):
            return dict(self._entries) == dict(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(self._entries.items()))

    @property
    def support(self) -> frozenset[int]:
        return frozenset(self._entries)

    def dot(self, other: Mapping[int, float]) -> float:
        # iterate over self in ascending term order; the index search does the same
        total = 0.0
        for term, weight in self._entries.items():
            total += weight * other.get(term, 0.0)
        return total


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def _rank_key(item: tuple[str, float]) -> tuple[float, str]:
    return (-item[1], item[0])


@dataclass(frozen=True)
class Run:
    """Ranked results per query, sorted by descending score then doc id."""

    results: Mapping[str, tuple[tuple[str, float], ...]]
    tag: str = "run"

    def __post_init__(self):
        frozen = {}
        for qid, ranking in self.results.items():
            ranking = tuple((str(d), float(s)) for d, s in ranking)
            seen = set()
            for pos, (doc, score) in enumerate(ranking):
                if doc in seen:
                    raise ValueError(f"query {qid}: duplicate doc {doc}")
                seen.add(doc)
                if not math.isfinite(score):
                    raise ValueError(f"query {qid}: non-finite score for {doc}")
                if pos and score > ranking[pos - 1][1]:
                    raise ValueError(f"query {qid}: ranking not sorted by score")
            frozen[str(qid)] = ranking
        object.__setattr__(self, "results", MappingProxyType(frozen))

    @classmethod
    def from_scores(cls, scores: Mapping[str, Mapping[str, float]], tag: str = "run") -> Run:
        """Build a run from unordered ``{qid: {docid: score}}``."""
        return cls({q: sorted(docs.items(), key=_rank_key) for q, docs in scores.items()}, tag)

    def __getitem__(self, qid: str) -> tuple[tuple[str, float], ...]:
        return self.results[qid]

    def __contains__(self, qid: object) -> bool:
        return qid in self.results

    def __len__(self) -> int:
        return len(self.results)

    @property
    def query_ids(self) -> list[str]:
        return list(self.results)

    def doc_ids(self, qid: str) -> list[str]:
        return [d for d, _ in self.results.get(qid, ())]

    def with_tag(self, tag: str) -> Run:
        return Run(self.results, tag)


def write_run(run: Run, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, ranking in run.results.items():
            for rank, (doc, score) in enumerate(ranking, start=1):
                f.write(f"{qid} Q0 {doc} {rank} {score:.{SCORE_DECIMALS}f} {run.tag}\n")


def read_run(path: str | Path) -> Run:
    """Parse a six-column run file.

    Entries are ordered by descending score; ties (including ties created by
    the 6-decimal rounding) keep the order of the file's rank column so that
    ``read_run(write_run(r))`` reproduces ``r``'s ranking exactly.
    """
    rows: dict[str, list[tuple[float, int, str]]] = {}
    tag = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(f"expected 6 columns, got {len(parts)}", path, lineno)
            qid, _, doc, rank, score, line_tag = parts
            try:
                rank_i = int(rank)
                score_f = float(score)
            except ValueError:
                raise FormatError(f"non-numeric rank or score {rank!r} {score!r}", path, lineno) from None
            if not math.isfinite(score_f):
                raise FormatError("non-finite score", path, lineno)
            tag = line_tag if tag is None else tag
            rows.setdefault(qid, []).append((score_f, rank_i, doc))
    results = {}
    for qid, entries in rows.items():
        entries.sort(key=lambda e: (-e[0], e[1], e[2]))
        seen = set()
        for _, _, doc in entries:
            if doc in seen:
                raise FormatError(f"query {qid}: duplicate doc {doc}", path)
            seen.add(doc)
        results[qid] = [(doc, score) for score, _, doc in entries]
    return Run(results, tag or "run")


# ---------------------------------------------------------------------------
# Qrels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Qrels:
    judgments: Mapping[str, Mapping[str, int]]

    def __post_init__(self):
        frozen = {}
        for qid, docs in self.judgments.items():
            inner = {}
            for doc, grade in docs.items():
                grade = int(grade)
                if grade < 0:
                    raise ValueError(f"negative grade for ({qid}, {doc})")
                inner[str(doc)] = grade
            frozen[str(qid)] = MappingProxyType(inner)
        object.__setattr__(self, "judgments", MappingProxyType(frozen))

    @property
    def has_negative_judgments(self) -> bool:
        return any(g == 0 for docs in self.judgments.values() for g in docs.values())

    @property
    def query_ids(self) -> list[str]:
        return list(self.judgments)

    def __getitem__(self, qid: str) -> Mapping[str, int]:
        return self.judgments.get(qid, MappingProxyType({}))

    def __contains__(self, qid: object) -> bool:
        return qid in self.judgments

    def positives(self, qid: str, threshold: int = 1) -> list[str]:
        return [d for d, g in self[qid].items() if g >= threshold]


def read_qrels(path: str | Path) -> Qrels:
    judgments: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"expected 4 columns, got {len(parts)}", path, lineno)
            qid, _, doc, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise FormatError(f"non-integer grade {grade!r}", path, lineno) from None
            if g < 0:
                raise FormatError(f"negative grade {g}", path, lineno)
            docs = judgments.setdefault(qid, {})
            if doc in docs:
                raise FormatError(f"duplicate judgment for ({qid}, {doc})", path, lineno)
            docs[doc] = g
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, docs in qrels.judgments.items():
            for doc, grade in docs.items():
                f.write(f"{qid} 0 {doc} {grade}\n")


# ---------------------------------------------------------------------------
# Sparse vector files
# ---------------------------------------------------------------------------


def read_vectors(path: str | Path) -> dict[str, SparseVector]:
    """Read JSON-lines sparse vectors; zero/negative weights are dropped."""
    return read_vectors_counted(path)[0]


def read_vectors_counted(path: str | Path) -> tuple[dict[str, SparseVector], int]:
    """Like :func:`read_vectors`, also returning the number of dropped weights."""
    out: dict[str, SparseVector] = {}
    dropped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                vid = str(rec["id"])
                raw = rec["vector"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"bad record: {exc}", path, lineno) from None
            if vid in out:
                raise FormatError(f"duplicate id {vid}", path, lineno)
            entries = {}
            for term, weight in raw.items():
                try:
                    w = float(weight)
                    t = int(term)
                except (TypeError, ValueError):
                    raise FormatError(f"bad entry {term!r}: {weight!r}", path, lineno) from None
                if not math.isfinite(w):
                    raise FormatError(f"non-finite weight for term {term}", path, lineno)
                if t < 0:
                    raise FormatError(f"negative term id {t}", path, lineno)
                if w <= 0.0:
                    dropped += 1
                    continue
                entries[t] = w
            out[vid] = SparseVector(entries)
    if dropped:
        log.warning("%s: dropped %d non-positive weights", path, dropped)
    return out, dropped


def write_vectors(vectors: Mapping[str, SparseVector] | Iterable[tuple[str, SparseVector]], path: str | Path) -> None:
    items = vectors.items() if isinstance(vectors, Mapping) else vectors
    with open(path, "w", encoding="utf-8") as f:
        for vid, vec in items:
            rec = {"id": vid, "vector": {str(t): w for t, w in vec.items()}}
            f.write(json.dumps(rec) + "\n")


def read_vocab(path: str | Path) -> dict[str, int]:
    """One token per line; the line index (0-based) is the term id."""
    vocab = {}
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f):
            tok = line.rstrip("\n")
            if tok in vocab:
                raise FormatError(f"duplicate token {tok!r}", path, i + 1)
            vocab[tok] = i
    return vocab


# ---------------------------------------------------------------------------
# Teacher scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TeacherScoreTable:
    """K raw scores per (query, doc) pair."""

    teacher_names: tuple[str, ...]
    rows: Mapping[str, Mapping[str, tuple[float, ...]]]

    def __post_init__(self):
        names = tuple(self.teacher_names)
        if not names:
            raise ValueError("need at least one teacher")
        k = len(names)
        frozen = {}
        for qid, docs in self.rows.items():
            inner = {}
            for doc, vals in docs.items():
                vals = tuple(float(v) for v in vals)
                if len(vals) != k:
                    raise ValueError(f"({qid}, {doc}): expected {k} scores, got {len(vals)}")
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError(f"({qid}, {doc}): non-finite score")
                inner[str(doc)] = vals
            frozen[str(qid)] = MappingProxyType(inner)
        object.__setattr__(self, "teacher_names", names)
        object.__setattr__(self, "rows", MappingProxyType(frozen))

    @property
    def num_teachers(self) -> int:
        return len(self.teacher_names)

    @classmethod
    def from_scores(cls, scores: Mapping[str, Mapping[str, float]], name: str = "score") -> TeacherScoreTable:
        return cls((name,), {q: {d: (s,) for d, s in docs.items()} for q, docs in scores.items()})

    def column(self, i: int = 0) -> dict[str, dict[str, float]]:
        return {q: {d: v[i] for d, v in docs.items()} for q, docs in self.rows.items()}


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_scores(path: str | Path) -> TeacherScoreTable:
    """Read a score TSV. The header row is optional when every column is numeric."""
    names = None
    rows: dict[str, dict[str, tuple[float, ...]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if names is None and lineno == 1 and not all(_is_float(p) for p in parts[2:]):
                names = tuple(parts[2:])
                continue
            if len(parts) < 3:
                raise FormatError(f"expected at least 3 columns, got {len(parts)}", path, lineno)
            if names is None:
                names = tuple(f"s{i + 1}" for i in range(len(parts) - 2))
            if len(parts) - 2 != len(names):
                raise FormatError(f"expected {len(names)} scores, got {len(parts) - 2}", path, lineno)
            qid, doc = parts[0], parts[1]
            try:
                vals = tuple(float(p) for p in parts[2:])
            except ValueError:
                raise FormatError("non-numeric score", path, lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise FormatError("non-finite score", path, lineno)
            docs = rows.setdefault(qid, {})
            if doc in docs:
                raise FormatError(f"duplicate pair ({qid}, {doc})", path, lineno)
            docs[doc] = vals
    if names is None:
        raise FormatError("empty score file", path)
    return TeacherScoreTable(names, rows)


def write_scores(table: TeacherScoreTable | Mapping[str, Mapping[str, float]], path: str | Path, name: str = "score") -> None:
    if not isinstance(table, TeacherScoreTable):
        table = TeacherScoreTable.from_scores(table, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(("qid", "docid", *table.teacher_names)) + "\n")
        for qid, docs in table.rows.items():
            for doc, vals in docs.items():
                f.write("\t".join((qid, doc, *(repr(v) for v in vals))) + "\n")


# ---------------------------------------------------------------------------
# Training groups
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingGroup:
    """One query, its positive(s), a negative pool and processed teacher scores.

    ``scores`` is None for skeletons produced by negative sampling; once set it
    must cover every positive and negative.
    """

    query_id: str
    positive_ids: tuple[str, ...]
    negative_ids: tuple[str, ...] = ()
    scores: Mapping[str, float] | None = field(default=None)

    def __post_init__(self):
        pos = tuple(self.positive_ids)
        neg = tuple(self.negative_ids)
        if not pos:
            raise ValueError(f"query {self.query_id}: no positives")
        if set(pos) & set(neg):
            raise ValueError(f"query {self.query_id}: positives and negatives overlap")
        if len(set(neg)) != len(neg) or len(set(pos)) != len(pos):
            raise ValueError(f"query {self.query_id}: duplicate doc ids")
        object.__setattr__(self, "positive_ids", pos)
        object.__setattr__(self, "negative_ids", neg)
        if self.scores is not None:
            scores = {d: float(s) for d, s in self.scores.items()}
            missing = [d for d in pos + neg if d not in scores]
            if missing:
                raise ValueError(f"query {self.query_id}: no score for {missing[:5]}")
            if not all(math.isfinite(s) for s in scores.values()):
                raise ValueError(f"query {self.query_id}: non-finite score")
            object.__setattr__(self, "scores", MappingProxyType(scores))

    @property
    def candidates(self) -> tuple[str, ...]:
        return self.positive_ids + self.negative_ids

    def with_scores(self, per_query: Mapping[str, float]) -> TrainingGroup:
        return TrainingGroup(
            self.query_id,
            self.positive_ids,
            self.negative_ids,
            {d: per_query[d] for d in self.candidates if d in per_query},
        )


def write_groups(groups: Iterable[TrainingGroup], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in groups:
            rec = {"qid": g.query_id, "pos": list(g.positive_ids), "neg": list(g.negative_ids)}
            if g.scores is not None:
                rec["scores"] = dict(g.scores)
            f.write(json.dumps(rec) + "\n")


def read_groups(path: str | Path) -> list[TrainingGroup]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(TrainingGroup(str(rec["qid"]), tuple(rec["pos"]), tuple(rec.get("neg", ())), rec.get("scores")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"bad group: {exc}", path, lineno) from None
    return out
