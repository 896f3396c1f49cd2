"""Desk-scale sparse encoder trained with a KL-Div + MarginMSE + FLOPS objective.

The encoder is a single ``V x V`` expansion matrix ``M``. A bag of token
counts ``x`` is mapped to ``log(1 + relu(x @ M))``. Three modes differ only on
the query side:

* ``full``     query and documents use the full matrix;
* ``lexical``  queries use ``diag(M)`` only, so no query expansion;
* ``doc``      queries are the binary indicator of their tokens.

Gradients are computed by hand; ``relu'(0)`` is taken as 0.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SparseVector, TrainingGroup
from .distill import subsample_group

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"LSRKIT-ENCODER\n"
CHECKPOINT_VERSION = 1


class Mode(str, enum.Enum):
    FULL = "full"
    LEXICAL = "lexical"
    DOC = "doc"


class Side(str, enum.Enum):
    QUERY = "query"
    DOC = "doc"


@dataclass
class EncoderParams:
    matrix: np.ndarray
    mode: Mode = Mode.FULL

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.mode = Mode(self.mode)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"expansion matrix must be square, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("expansion matrix has non-finite entries")

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def initial(cls, vocab_size: int, mode: Mode | str = Mode.FULL, seed: int = 0, noise: float = 0.01) -> EncoderParams:
        """Identity plus small Gaussian noise."""
        rng = np.random.default_rng(seed)
        m = np.eye(vocab_size) + noise * rng.standard_normal((vocab_size, vocab_size))
        return cls(m, Mode(mode))

    def copy(self) -> EncoderParams:
        return EncoderParams(self.matrix.copy(), self.mode)


@dataclass(frozen=True)
class LossWeights:
    lambda_kl: float = 1.0
    lambda_mse: float = 0.05
    lambda_flops_q: float = 1e-3
    lambda_flops_d: float = 1e-3

    def __post_init__(self):
        for name in ("lambda_kl", "lambda_mse", "lambda_flops_q", "lambda_flops_d"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _pre_activation(params: EncoderParams, x: np.ndarray, side: Side) -> np.ndarray:
    if side is Side.QUERY and params.mode is Mode.LEXICAL:
        return x * np.diag(params.matrix)
    return x @ params.matrix


def encode_dense(params: EncoderParams, x: np.ndarray, side: Side | str = Side.DOC) -> np.ndarray:
    """Representations for the rows of a dense count matrix ``x``."""
    side = Side(side)
    x = np.asarray(x, dtype=np.float64)
    if side is Side.QUERY and params.mode is Mode.DOC:
        return (x > 0).astype(np.float64)
    return np.log1p(np.maximum(_pre_activation(params, x, side), 0.0))


def encode(params: EncoderParams, counts: Mapping[int, float], side: Side | str = Side.DOC) -> SparseVector:
    x = np.zeros(params.vocab_size)
    for term, c in counts.items():
        if c < 0:
            raise ValueError("token counts must be non-negative")
        x[term] = c
    return SparseVector.from_dense(encode_dense(params, x, side))


def score(params: EncoderParams, q_counts: Mapping[int, float], d_counts: Mapping[int, float]) -> float:
    return encode(params, q_counts, Side.QUERY).dot(encode(params, d_counts, Side.DOC))


# ---------------------------------------------------------------------------
# Losses on one group's scores
# ---------------------------------------------------------------------------


def _as_arrays(student, teacher, group: TrainingGroup) -> tuple[np.ndarray, np.ndarray]:
    cands = group.candidates
    if isinstance(student, Mapping):
        student = [student[d] for d in cands]
    if isinstance(teacher, Mapping):
        teacher = [teacher[d] for d in cands]
    return np.asarray(student, dtype=np.float64), np.asarray(teacher, dtype=np.float64)


def _log_softmax(v: np.ndarray) -> np.ndarray:
    v = v - v.max()
    return v - np.log(np.exp(v).sum())


def kl_terms(s: np.ndarray, t: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(softmax(t) || softmax(s)) and its gradient with respect to ``s``."""
    log_pt = _log_softmax(t)
    log_ps = _log_softmax(s)
    pt = np.exp(log_pt)
    value = float(np.sum(pt * (log_pt - log_ps)))
    return max(value, 0.0), np.exp(log_ps) - pt


def margin_terms(s: np.ndarray, t: np.ndarray, n_pos: int = 1) -> tuple[float, np.ndarray]:
    """MarginMSE anchored on candidate 0 against candidates ``n_pos:``."""
    if len(s) <= n_pos:
        raise ValueError("MarginMSE needs at least one negative")
    err = (s[0] - s[n_pos:]) - (t[0] - t[n_pos:])
    n = err.size
    grad = np.zeros_like(s)
    grad[0] = 2.0 * err.sum() / n
    grad[n_pos:] = -2.0 * err / n
    return float(np.mean(err * err)), grad


def kl_div_loss(student, teacher, group: TrainingGroup) -> float:
    """Listwise KL(teacher || student) over positives + negatives, temperature 1."""
    s, t = _as_arrays(student, teacher, group)
    if s.size < 2:
        raise ValueError("KL loss needs at least two candidates")
    return kl_terms(s, t)[0]


def margin_mse_loss(student, teacher, group: TrainingGroup) -> float:
    """Mean squared margin error of the first positive against each negative."""
    if not group.negative_ids:
        raise ValueError("MarginMSE needs at least one negative")
    s, t = _as_arrays(student, teacher, group)
    return margin_terms(s, t, len(group.positive_ids))[0]


def flops_reg(reps: np.ndarray | Sequence[Mapping[int, float]]) -> float:
    """Sum over terms of the squared mean activation across the batch."""
    if not isinstance(reps, np.ndarray):
        reps = list(reps)
        if not reps:
            raise ValueError("empty batch")
        size = 1 + max((max(r) for r in reps if r), default=-1)
        dense = np.zeros((len(reps), size))
        for i, r in enumerate(reps):
            for t, w in r.items():
                dense[i, t] = w
        reps = dense
    if reps.shape[0] == 0:
        raise ValueError("empty batch")
    mean = reps.mean(axis=0)
    return float(np.dot(mean, mean))


# ---------------------------------------------------------------------------
# Batches and the combined objective
# ---------------------------------------------------------------------------


def _dense_rows(vectors: Sequence[Mapping[int, float]], size: int) -> np.ndarray:
    out = np.zeros((len(vectors), size))
    for i, v in enumerate(vectors):
        for t, c in v.items():
            out[i, t] = c
    return out


@dataclass
class Batch:
    """Groups with scores plus token counts for every query and candidate."""

    groups: list[TrainingGroup]
    query_counts: Mapping[str, Mapping[int, float]]
    doc_counts: Mapping[str, Mapping[int, float]]
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for g in self.groups:
            if g.scores is None:
                raise ValueError(f"group {g.query_id} has no teacher scores")
            if g.query_id not in self.query_counts:
                raise KeyError(f"no token counts for query {g.query_id}")
            for d in g.candidates:
                if d not in self.doc_counts:
                    raise KeyError(f"no token counts for doc {d}")

    def arrays(self, vocab_size: int) -> dict:
        if vocab_size not in self._arrays:
            xq = _dense_rows([self.query_counts[g.query_id] for g in self.groups], vocab_size)
            docs = [d for g in self.groups for d in g.candidates]
            xd = _dense_rows([self.doc_counts[d] for d in docs], vocab_size)
            sizes = np.array([len(g.candidates) for g in self.groups])
            starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            teacher = np.array([g.scores[d] for g in self.groups for d in g.candidates])
            self._arrays[vocab_size] = {
                "xq": xq, "xd": xd, "starts": starts, "sizes": sizes,
                "owner": np.repeat(np.arange(len(self.groups)), sizes), "teacher": teacher,
            }
        return self._arrays[vocab_size]


@dataclass
class LossParts:
    kl: float
    margin_mse: float
    flops_q: float
    flops_d: float
    total: float


def combined_loss(params: EncoderParams, batch: Batch, weights: LossWeights = LossWeights(),
                  with_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Weighted objective and its exact gradient with respect to ``params.matrix``."""
    parts, grad = combined_loss_parts(params, batch, weights, with_grad)
    return parts.total, grad


def combined_loss_parts(params: EncoderParams, batch: Batch, weights: LossWeights = LossWeights(),
                        with_grad: bool = True) -> tuple[LossParts, np.ndarray | None]:
    a = batch.arrays(params.vocab_size)
    xq, xd, owner, teacher = a["xq"], a["xd"], a["owner"], a["teacher"]
    n_groups = len(batch.groups)

    doc_query = params.mode is Mode.DOC
    if doc_query:
        zq = None
        rq = (xq > 0).astype(np.float64)
    else:
        zq = _pre_activation(params, xq, Side.QUERY)
        rq = np.log1p(np.maximum(zq, 0.0))
    zd = xd @ params.matrix
    rd = np.log1p(np.maximum(zd, 0.0))

    student = np.einsum("ij,ij->i", rq[owner], rd)
    ds = np.zeros_like(student)
    kl_total = 0.0
    mse_total = 0.0
    for gi, g in enumerate(batch.groups):
        lo, n = a["starts"][gi], a["sizes"][gi]
        s, t = student[lo:lo + n], teacher[lo:lo + n]
        kl, g_kl = kl_terms(s, t)
        kl_total += kl
        ds[lo:lo + n] += weights.lambda_kl / n_groups * g_kl
        if g.negative_ids:
            mse, g_mse = margin_terms(s, t, len(g.positive_ids))
            mse_total += mse
            ds[lo:lo + n] += weights.lambda_mse / n_groups * g_mse
    kl_mean = kl_total / n_groups
    mse_mean = mse_total / n_groups

    mean_q = rq.mean(axis=0)
    mean_d = rd.mean(axis=0)
    fq = float(np.dot(mean_q, mean_q))
    fd = float(np.dot(mean_d, mean_d))
    total = (weights.lambda_kl * kl_mean + weights.lambda_mse * mse_mean
             + weights.lambda_flops_q * fq + weights.lambda_flops_d * fd)
    parts = LossParts(kl_mean, mse_mean, fq, fd, total)
    if not with_grad:
        return parts, None

    # d loss / d reps
    g_rd = ds[:, None] * rq[owner] + (2.0 * weights.lambda_flops_d / rd.shape[0]) * mean_d
    grad = xd.T @ (g_rd * (zd > 0) / (1.0 + np.maximum(zd, 0.0)))
    if not doc_query:
        g_rq = np.zeros_like(rq)
        np.add.at(g_rq, owner, ds[:, None] * rd)
        g_rq += (2.0 * weights.lambda_flops_q / n_groups) * mean_q
        g_zq = g_rq * (zq > 0) / (1.0 + np.maximum(zq, 0.0))
        if params.mode is Mode.LEXICAL:
            grad[np.diag_indices_from(grad)] += np.sum(xq * g_zq, axis=0)
        else:
            grad += xq.T @ g_zq
    return parts, grad


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainingData:
    groups: list[TrainingGroup]
    query_counts: Mapping[str, Mapping[int, float]]
    doc_counts: Mapping[str, Mapping[int, float]]

    def batches(self, batch_size: int, negatives_per_query: int | None, seed: int, epoch: int,
                shuffle: bool = True) -> list[Batch]:
        """Batches for one epoch; negatives are re-drawn per epoch from ``(seed, epoch)``."""
        if not self.groups:
            raise ValueError("empty training set")
        groups = self.groups
        if negatives_per_query is not None:
            groups = [subsample_group(g, min(negatives_per_query, len(g.negative_ids)), seed, epoch)
                      for g in groups]
        order = np.arange(len(groups))
        if shuffle:
            order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(groups))
        return [Batch([groups[i] for i in order[lo:lo + batch_size].tolist()], self.query_counts, self.doc_counts)
                for lo in range(0, len(groups), batch_size)]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 1
    batch_size: int = 8
    negatives_per_query: int | None = 8
    shuffle: bool = True
    seed: int = 0
    first_epoch: int = 0
    checkpoint_dir: str | None = None


@dataclass
class TrainResult:
    params: EncoderParams
    losses: list[float]
    checkpoints: list[str] = field(default_factory=list)


def train(params0: EncoderParams, data: TrainingData, weights: LossWeights = LossWeights(),
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Plain SGD. ``losses[i]`` is the loss of step ``i`` before its update.

    Epoch numbering starts at ``config.first_epoch``, so resuming from a
    checkpoint with the next epoch index replays exactly the batches an
    uninterrupted run would have seen.
    """
    params = params0.copy()
    losses: list[float] = []
    ckpts: list[str] = []
    step = 0
    for epoch in range(config.first_epoch, config.first_epoch + config.epochs):
        epoch_start = len(losses)
        for batch in data.batches(config.batch_size, config.negatives_per_query, config.seed, epoch, config.shuffle):
            loss, grad = combined_loss(params, batch, weights)
            if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged(step, loss)
            losses.append(loss)
            if config.lr:
                params.matrix -= config.lr * grad
                if not np.all(np.isfinite(params.matrix)):
                    raise TrainingDiverged(step, loss)
            step += 1
        log.info("epoch %d: mean loss %.6f", epoch, float(np.mean(losses[epoch_start:])))
        if config.checkpoint_dir:
            path = Path(config.checkpoint_dir) / f"epoch{epoch:03d}.ckpt"
            save_checkpoint(params, path, epoch=epoch)
            ckpts.append(str(path))
    return TrainResult(params, losses, ckpts)


def save_checkpoint(params: EncoderParams, path: str | Path, **extra) -> None:
    """Magic line, one JSON header line, then the matrix as little-endian float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"version": CHECKPOINT_VERSION, "mode": params.mode.value, "vocab_size": params.vocab_size, **extra}
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(params.matrix, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, dict]:
    with open(path, "rb") as f:
        if f.readline() != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an encoder checkpoint")
        header = json.loads(f.readline())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        v = int(header["vocab_size"])
        raw = f.read()
    if len(raw) != v * v * 8:
        raise ValueError(f"{path}: truncated matrix")
    matrix = np.frombuffer(raw, dtype="<f8").reshape(v, v).copy()
    return EncoderParams(matrix, Mode(header["mode"])), header


def encode_collection(params: EncoderParams, counts: Mapping[str, Mapping[int, float]], side: Side | str,
                      chunk: int = 256) -> dict[str, SparseVector]:
    """Encode many count vectors, in chunks of dense rows."""
    ids = list(counts)
    out = {}
    for lo in range(0, len(ids), chunk):
        part = ids[lo:lo + chunk]
        reps = encode_dense(params, _dense_rows([counts[i] for i in part], params.vocab_size), side)
        for i, row in zip(part, reps):
            out[i] = SparseVector.from_dense(row)
    return out
