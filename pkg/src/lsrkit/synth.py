"""Synthetic topical corpora with graded judgments and noisy teacher scores.

The vocabulary is split into equal topic blocks. A document mostly draws
tokens from one topic; a query is written about a target document, drawing
topic words that only partly overlap with the document, so matching it well
needs some expansion. Teachers see a noisy, per-teacher affinely distorted
view of the true relevance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Qrels, SparseVector, TeacherScoreTable


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 500
    num_topics: int = 25
    num_docs: int = 500
    num_queries: int = 50
    doc_length: int = 30
    query_length: int = 4
    topic_purity: float = 0.8
    num_teachers: int = 3
    teacher_noise: float = 0.3
    negatives_judged: int = 3
    seed: int = 0


@dataclass
class SynthCorpus:
    config: SynthConfig
    doc_counts: dict[str, SparseVector]
    query_counts: dict[str, SparseVector]
    qrels: Qrels
    teacher: TeacherScoreTable
    doc_topic: dict[str, int]
    query_topic: dict[str, int]


def _counts(tokens: np.ndarray) -> SparseVector:
    terms, counts = np.unique(tokens, return_counts=True)
    return SparseVector(zip(terms.tolist(), counts.astype(float).tolist()))


def make_corpus(cfg: SynthConfig = SynthConfig(), query_prefix: str = "q", doc_prefix: str = "d") -> SynthCorpus:
    rng = np.random.default_rng(cfg.seed)
    v, t = cfg.vocab_size, cfg.num_topics
    block = v // t
    if block < 2:
        raise ValueError("need at least two terms per topic")
    zipf = 1.0 / np.arange(1, block + 1)
    zipf /= zipf.sum()
    topic_terms = [np.arange(i * block, (i + 1) * block) for i in range(t)]

    doc_width = len(str(cfg.num_docs - 1))
    docs, doc_topic, doc_tokens = {}, {}, {}
    for i in range(cfg.num_docs):
        did = f"{doc_prefix}{i:0{doc_width}d}"
        topic = int(rng.integers(t))
        n_topic = rng.binomial(cfg.doc_length, cfg.topic_purity)
        toks = np.concatenate([rng.choice(topic_terms[topic], size=n_topic, p=zipf),
                               rng.integers(0, v, size=cfg.doc_length - n_topic)])
        docs[did] = _counts(toks)
        doc_topic[did] = topic
        doc_tokens[did] = toks
    doc_ids = list(docs)

    # topical affinity of every doc to every topic: fraction of tokens in the block
    affinity = np.zeros((cfg.num_docs, t))
    for j, did in enumerate(doc_ids):
        for term, c in docs[did].items():
            if term < block * t:
                affinity[j, term // block] += c
    affinity /= cfg.doc_length

    q_width = len(str(cfg.num_queries - 1))
    queries, query_topic, judgments = {}, {}, {}
    gains = rng.uniform(0.5, 2.0, size=cfg.num_teachers)
    offsets = rng.normal(0.0, 3.0, size=cfg.num_teachers)
    rows = {}
    for i in range(cfg.num_queries):
        qid = f"{query_prefix}{i:0{q_width}d}"
        target = int(rng.integers(cfg.num_docs))
        topic = doc_topic[doc_ids[target]]
        # half the query words come from the target doc, the rest from its topic
        own = [x for x in doc_tokens[doc_ids[target]].tolist() if x // block == topic] or topic_terms[topic].tolist()
        n_own = (cfg.query_length + 1) // 2
        toks = np.concatenate([rng.choice(own, size=n_own),
                               rng.choice(topic_terms[topic], size=cfg.query_length - n_own, p=zipf)])
        q = _counts(toks)
        queries[qid] = q
        query_topic[qid] = topic

        overlap = np.array([sum(min(c, docs[d].get(term, 0.0)) for term, c in q.items()) for d in doc_ids])
        truth = 2.0 * affinity[:, topic] + 0.5 * overlap / cfg.query_length
        truth[target] += 1.0

        judged = {doc_ids[target]: 2}
        same = [j for j in np.argsort(-affinity[:, topic], kind="stable")[:5].tolist() if j != target]
        for j in same:
            if affinity[j, topic] >= 0.6:
                judged.setdefault(doc_ids[j], 1)
        others = [j for j in rng.permutation(cfg.num_docs).tolist() if doc_topic[doc_ids[j]] != topic]
        for j in others[: cfg.negatives_judged]:
            judged.setdefault(doc_ids[j], 0)
        judgments[qid] = judged

        noise = rng.normal(0.0, cfg.teacher_noise, size=(cfg.num_teachers, cfg.num_docs))
        raw = gains[:, None] * (truth[None, :] + noise) + offsets[:, None]
        rows[qid] = {d: tuple(raw[:, j].tolist()) for j, d in enumerate(doc_ids)}

    names = tuple(f"teacher{k + 1}" for k in range(cfg.num_teachers))
    return SynthCorpus(cfg, docs, queries, Qrels(judgments), TeacherScoreTable(names, rows), doc_topic, query_topic)
