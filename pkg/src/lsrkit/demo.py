"""End-to-end synthetic experiment writing every intermediate artifact to disk.

corpus -> BM25 first stage -> negatives + ensembled/rescored teacher scores
-> Full / Lexical / Doc encoders -> sparse retrieval -> nDCG*@10 -> top-50
re-ranking -> meta-analysis against BM25 over several query sets.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from . import core
from .distill import NegativePolicy, RescoreTarget, ensemble, rescore
from .index import flops_metric
from .meta import compare_sets, emit_forest, summarize
from .metrics import aggregate, ndcg_at_k, ndcg_star_at_k, write_per_query
from .pipeline import bm25_run, encoder_run, training_data
from .rerank import rerank_topk
from .synth import SynthConfig, make_corpus
from .toytrain import EncoderParams, LossWeights, Mode, TrainConfig, save_checkpoint, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 7
    vocab_size: int = 300
    num_topics: int = 15
    num_docs: int = 400
    num_train_queries: int = 80
    num_test_queries: int = 120
    num_query_sets: int = 6
    depth: int = 100
    n_top: int = 20
    n_random: int = 20
    rescore_mean: float = 0.0
    rescore_std: float = 4.0
    lr: float = 0.1
    epochs: int = 25
    batch_size: int = 10
    negatives_per_query: int = 8
    lambda_flops_q: float = 1e-3
    lambda_flops_d: float = 1e-3
    rerank_k: int = 50
    alpha: float = 0.05


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def run_demo(out: str | Path, cfg: DemoConfig = DemoConfig(), threads: int = 1) -> dict:
    """Run the whole pipeline; returns the summary also written to ``summary.json``."""
    out = Path(out)
    for sub in ("corpus", "distill", "models", "runs", "eval", "meta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", asdict(cfg))

    corpus = make_corpus(SynthConfig(
        vocab_size=cfg.vocab_size, num_topics=cfg.num_topics, num_docs=cfg.num_docs,
        num_queries=cfg.num_train_queries + cfg.num_test_queries, seed=cfg.seed))
    qids = list(corpus.query_counts)
    train_q = {q: corpus.query_counts[q] for q in qids[: cfg.num_train_queries]}
    test_q = {q: corpus.query_counts[q] for q in qids[cfg.num_train_queries:]}
    test_qrels = core.Qrels({q: corpus.qrels[q] for q in test_q})
    core.write_vectors(corpus.doc_counts, out / "corpus" / "docs.jsonl")
    core.write_vectors(train_q, out / "corpus" / "queries_train.jsonl")
    core.write_vectors(test_q, out / "corpus" / "queries_test.jsonl")
    core.write_qrels(corpus.qrels, out / "corpus" / "qrels.txt")
    core.write_scores(corpus.teacher, out / "corpus" / "teacher_scores.tsv")

    # training signal
    ens = ensemble(corpus.teacher)
    rescored = rescore(ens, RescoreTarget(cfg.rescore_mean, cfg.rescore_std))
    core.write_scores(ens, out / "distill" / "ensemble.tsv", "ensemble")
    core.write_scores(rescored, out / "distill" / "rescored.tsv", "rescored")
    first_stage_train = bm25_run(corpus.doc_counts, train_q, cfg.depth, threads=threads)
    data = training_data(first_stage_train, corpus.qrels, rescored, train_q, corpus.doc_counts,
                         NegativePolicy(cfg.n_top, cfg.n_random, cfg.depth, cfg.seed))
    core.write_groups(data.groups, out / "distill" / "groups.jsonl")

    # first stage on the test queries
    runs = {"bm25": bm25_run(corpus.doc_counts, test_q, cfg.depth, threads=threads)}
    flops = {}
    weights = LossWeights(1.0, 0.05, cfg.lambda_flops_q, cfg.lambda_flops_d)
    tcfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                       negatives_per_query=cfg.negatives_per_query, seed=cfg.seed)
    final_loss = {}
    for mode in Mode:
        p0 = EncoderParams.initial(cfg.vocab_size, mode, seed=cfg.seed)
        result = train(p0, data, weights, tcfg)
        save_checkpoint(result.params, out / "models" / f"{mode.value}.ckpt")
        with open(out / "models" / f"{mode.value}_loss.tsv", "w", encoding="utf-8") as f:
            for step, loss in enumerate(result.losses):
                f.write(f"{step}\t{loss!r}\n")
        final_loss[mode.value] = result.losses[-1]
        enc = encoder_run(result.params, test_q, corpus.doc_counts, cfg.depth, f"toy-{mode.value}", threads)
        runs[mode.value] = enc.run
        flops[mode.value] = enc.flops
    flops["bm25"] = flops_metric(test_q.values(), corpus.doc_counts.values())

    runs["full_rerank"] = rerank_topk(runs["full"], ens, cfg.rerank_k, tag=f"toy-full-rerank{cfg.rerank_k}")

    per_query = {}
    plain_ndcg = {}
    for name, run in runs.items():
        core.write_run(run, out / "runs" / f"{name}.run")
        scores = ndcg_star_at_k(run, test_qrels, 10, threads)
        write_per_query(scores, out / "eval" / f"{name}.ndcg_star@10.tsv")
        per_query[name] = scores.scores
        plain_ndcg[name] = aggregate(ndcg_at_k(run, test_qrels, 10, threads))

    # query sets: test queries grouped by topic
    set_of = {q: f"set{corpus.query_topic[q] % cfg.num_query_sets}" for q in test_q}

    def split(scores):
        sets: dict[str, dict[str, float]] = {}
        for q, v in scores.items():
            sets.setdefault(set_of[q], {})[q] = v
        return sets

    meta = {}
    for a, b in (("full", "bm25"), ("lexical", "bm25"), ("doc", "bm25"), ("full_rerank", "full")):
        comps = compare_sets(split(per_query[a]), split(per_query[b]), cfg.alpha)
        summ = summarize(comps, cfg.alpha)
        emit_forest(summ, out / "meta" / f"{a}_vs_{b}.json", out / "meta" / f"{a}_vs_{b}.svg", f"{a} - {b} (nDCG*@10)")
        meta[f"{a}_vs_{b}"] = {
            "summary_effect": summ.summary_effect, "summary_ci": list(summ.summary_ci),
            "tau_squared": summ.tau_squared, "significant_sets": sum(c.significant for c in comps),
        }

    summary = {
        "ndcg_star@10": {name: aggregate(s) for name, s in per_query.items()},
        "ndcg@10": plain_ndcg,
        "flops": flops,
        "final_train_loss": final_loss,
        "meta": meta,
        "negative_groups": len(data.groups),
    }
    _write_json(out / "summary.json", summary)
    return summary
