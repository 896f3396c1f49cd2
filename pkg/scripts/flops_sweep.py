"""Train the toy encoder over a grid of modes and query-side FLOPS weights.

Prints, per setting, the loss before and after training on the training
groups and the FLOPS metric of held-out query representations.

    python3 scripts/flops_sweep.py [--lambdas 0 0.01 0.1] [--modes full lexical doc] [--out sweep.tsv]
"""

import argparse
import csv
import sys
from dataclasses import dataclass, field

from lsrkit.distill import NegativePolicy
from lsrkit.index import flops_metric
from lsrkit.pipeline import bm25_run, teacher_scores, training_data
from lsrkit.synth import SynthConfig, make_corpus
from lsrkit.toytrain import Batch, EncoderParams, LossWeights, TrainConfig, combined_loss, encode_collection, train


@dataclass
class SweepConfig:
    corpus: SynthConfig = field(default_factory=lambda: SynthConfig(num_queries=100))
    num_train_queries: int = 50
    depth: int = 100
    policy: NegativePolicy = field(default_factory=lambda: NegativePolicy(20, 20, 100, seed=0))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.1, epochs=40, batch_size=10))
    lambda_flops_d: float = 1e-3
    modes: tuple[str, ...] = ("full", "lexical")
    lambdas_q: tuple[float, ...] = (0.0, 0.01, 0.1)


def sweep(cfg: SweepConfig):
    corpus = make_corpus(cfg.corpus)
    qids = list(corpus.query_counts)
    train_q = {q: corpus.query_counts[q] for q in qids[: cfg.num_train_queries]}
    held_out = {q: corpus.query_counts[q] for q in qids[cfg.num_train_queries:]}
    data = training_data(bm25_run(corpus.doc_counts, train_q, cfg.depth), corpus.qrels,
                         teacher_scores(corpus.teacher), train_q, corpus.doc_counts, cfg.policy)
    everything = Batch(data.groups, data.query_counts, data.doc_counts)
    for mode in cfg.modes:
        for lq in cfg.lambdas_q:
            weights = LossWeights(1.0, 0.05, lq, cfg.lambda_flops_d)
            p0 = EncoderParams.initial(cfg.corpus.vocab_size, mode, seed=cfg.train.seed)
            res = train(p0, data, weights, cfg.train)
            q = encode_collection(res.params, held_out, "query")
            d = encode_collection(res.params, corpus.doc_counts, "doc")
            yield {
                "mode": mode, "lambda_flops_q": lq, "steps": len(res.losses),
                "loss_before": combined_loss(p0, everything, weights, with_grad=False)[0],
                "loss_after": combined_loss(res.params, everything, weights, with_grad=False)[0],
                "heldout_flops": flops_metric(q.values(), d.values()),
            }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--lambdas", type=float, nargs="+", default=list(SweepConfig.lambdas_q))
    ap.add_argument("--modes", nargs="+", default=list(SweepConfig.modes), choices=["full", "lexical", "doc"])
    ap.add_argument("--seed", type=int, default=0, help="corpus seed")
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--out", help="TSV output (default: stdout)")
    a = ap.parse_args()
    cfg = SweepConfig(corpus=SynthConfig(num_queries=100, seed=a.seed),
                      train=TrainConfig(lr=0.1, epochs=a.epochs, batch_size=10),
                      modes=tuple(a.modes), lambdas_q=tuple(a.lambdas))
    f = open(a.out, "w", newline="") if a.out else sys.stdout
    writer = None
    for row in sweep(cfg):
        if writer is None:
            writer = csv.DictWriter(f, fieldnames=list(row), delimiter="\t")
            writer.writeheader()
        writer.writerow(row)
        f.flush()
    if a.out:
        f.close()


if __name__ == "__main__":
    main()
