"""Command line entry point: one subcommand per pipeline stage plus ``demo``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import core, distill, index, meta, metrics, rerank, toytrain
from .demo import DemoConfig, run_demo

log = logging.getLogger("lsrkit")

FORMATS = """\
file formats (one example line each):
  run           q1 Q0 d7 1 13.250000 my-encoder
  qrels         q1 0 d1 2
  vectors       {"id": "d1", "vector": {"3": 1.5, "9": 0.25}}
  scores TSV    q1<TAB>d1<TAB>7.31<TAB>0.82      (header: qid docid name1 name2)
  groups        {"qid": "q1", "pos": ["d1"], "neg": ["d4", "d9"], "scores": {"d1": 3.2, "d4": 0.1, "d9": -1.0}}
  per-query TSV q1<TAB>0.630930
  checkpoint    binary: magic line, JSON header {"mode", "vocab_size", "version"}, V*V little-endian float64

exit codes: 0 ok, 1 usage error, 2 data or validation error.
Any subcommand accepts --config <json>; keys are option names, flags given
on the command line win.
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _build_parser() -> tuple[_Parser, list[_Parser]]:
    leaves: list[_Parser] = []
    p = _Parser(prog="lsrkit", description="Learned sparse retrieval toolkit.", epilog=FORMATS,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def leaf(parent, name, help_):
        sp = parent.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON file of option defaults")
        leaves.append(sp)
        return sp

    # index
    idx = sub.add_parser("index", help="inverted index over sparse vectors").add_subparsers(dest="action", parser_class=_Parser)
    sp = leaf(idx, "build", "build an index snapshot from a vectors file")
    sp.add_argument("--vectors", required=True)
    sp.add_argument("--out", required=True)
    sp = leaf(idx, "search", "exact top-k dot-product search")
    sp.add_argument("--index", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--tag", default="run")
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int, default=1)
    sp = leaf(idx, "flops", "FLOPS metric of query and document vectors")
    sp.add_argument("--queries", required=True)
    sp.add_argument("--docs", required=True)

    # bm25
    bm = sub.add_parser("bm25", help="BM25 baseline").add_subparsers(dest="action", parser_class=_Parser)
    sp = leaf(bm, "search", "BM25 retrieval over term-count vectors")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--k1", type=float, default=0.9)
    sp.add_argument("--b", type=float, default=0.4)
    sp.add_argument("--k", type=int, default=1000)
    sp.add_argument("--tag", default="bm25")
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int, default=1)

    # distill
    ds = sub.add_parser("distill", help="teacher scores and negatives").add_subparsers(dest="action", parser_class=_Parser)
    sp = leaf(ds, "ensemble", "per-query min-max normalise each teacher, then average")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--out", required=True)
    sp = leaf(ds, "rescore", "affine map onto a target mean/std (first score column)")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--target-mean", type=float, required=True)
    sp.add_argument("--target-std", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp = leaf(ds, "negatives", "sample top-ranked and random negatives from a run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--n-top", type=int, default=50)
    sp.add_argument("--n-random", type=int, default=50)
    sp.add_argument("--depth", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--rel-threshold", type=int, default=1)
    sp.add_argument("--scores", help="optional score TSV to attach (first column)")
    sp.add_argument("--out", required=True)

    # train
    sp = leaf(sub, "train", "train the toy sparse encoder")
    sp.add_argument("--groups", required=True)
    sp.add_argument("--vectors", required=True, help="token counts for docs (and queries unless --query-vectors)")
    sp.add_argument("--query-vectors")
    sp.add_argument("--vocab-size", type=int, help="default: 1 + largest term id seen")
    sp.add_argument("--mode", choices=[m.value for m in toytrain.Mode], default="full")
    sp.add_argument("--lambda-kl", type=float, default=1.0)
    sp.add_argument("--lambda-mse", type=float, default=0.05)
    sp.add_argument("--lambda-flops-q", type=float, default=1e-3)
    sp.add_argument("--lambda-flops-d", type=float, default=1e-3)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--epochs", type=int, default=1)
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--negatives-per-query", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--init", default="none", help="checkpoint to warm-start from, or 'none'")
    sp.add_argument("--first-epoch", type=int, default=0)
    sp.add_argument("--loss-trace", help="write per-step losses as TSV")
    sp.add_argument("--out", required=True)

    # eval
    sp = leaf(sub, "eval", "evaluate a run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--qrels", required=True)
    sp.add_argument("--metric", default="ndcg_star@10", help="ndcg@10 | ndcg_star@10 | mrr@10 | success@5")
    sp.add_argument("--rel-threshold", type=int, default=1)
    sp.add_argument("--per-query")
    sp.add_argument("--threads", type=int, default=1)

    # rerank
    sp = leaf(sub, "rerank", "re-rank the top-k of a run with external scores")
    sp.add_argument("--run", required=True)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--k", type=int, default=50)
    sp.add_argument("--tag", default="rerank")
    sp.add_argument("--out", required=True)

    # meta
    mt = sub.add_parser("meta", help="meta-analysis of two systems").add_subparsers(dest="action", parser_class=_Parser)
    sp = leaf(mt, "compare", "per-set paired t-intervals and random-effects summary")
    sp.add_argument("--a", nargs="+", required=True, help="per-query TSVs of system A, one per query set")
    sp.add_argument("--b", nargs="+", required=True, help="per-query TSVs of system B, same order")
    sp.add_argument("--names", nargs="+", help="query set names (default: file stems of --a)")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--bonferroni", action="store_true")
    sp.add_argument("--effect", choices=["raw", "standardized"], default="raw")
    sp.add_argument("--out-json", required=True)
    sp.add_argument("--out-svg", required=True)

    # demo
    sp = leaf(sub, "demo", "synthetic end-to-end run")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int, default=1)
    return p, leaves


def _apply_config(leaves: list[_Parser], argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    for sp in leaves:
        for action in sp._actions:
            if action.dest in cfg:
                action.required = False
                action.default = cfg[action.dest]


# ---------------------------------------------------------------------------
# handlers; each is a thin wrapper over library calls
# ---------------------------------------------------------------------------


def _index_build(a):
    index.build_index(core.read_vectors(a.vectors)).save(a.out)


def _index_search(a):
    idx = index.InvertedIndex.load(a.index)
    core.write_run(index.search_run(idx, core.read_vectors(a.queries), a.k, a.tag, a.threads), a.out)


def _index_flops(a):
    print(f"{index.flops_metric(core.read_vectors(a.queries).values(), core.read_vectors(a.docs).values()):.6f}")


def _bm25_search(a):
    idx = index.build_bm25_index(core.read_vectors(a.corpus), index.Bm25Params(a.k1, a.b))
    core.write_run(index.search_run(idx, core.read_vectors(a.queries), a.k, a.tag, a.threads), a.out)


def _distill_ensemble(a):
    core.write_scores(distill.ensemble(core.read_scores(a.scores)), a.out, "ensemble")


def _distill_rescore(a):
    scores = core.read_scores(a.scores).column(0)
    core.write_scores(distill.rescore(scores, distill.RescoreTarget(a.target_mean, a.target_std)), a.out, "rescored")


def _distill_negatives(a):
    qrels = core.read_qrels(a.qrels)
    positives = {q: qrels.positives(q, a.rel_threshold) for q in qrels.query_ids}
    report = distill.SamplingReport()
    groups = distill.sample_negatives(core.read_run(a.run), positives,
                                      distill.NegativePolicy(a.n_top, a.n_random, a.depth, a.seed), report)
    if a.scores:
        groups = distill.attach_scores(groups, core.read_scores(a.scores).column(0))
    core.write_groups(groups, a.out)
    if report.skipped_queries or report.shortfall:
        print(f"skipped {len(report.skipped_queries)} queries; {len(report.shortfall)} queries short of negatives",
              file=sys.stderr)


def _train(a):
    docs = core.read_vectors(a.vectors)
    queries = core.read_vectors(a.query_vectors) if a.query_vectors else docs
    if a.init and a.init != "none":
        params, _ = toytrain.load_checkpoint(a.init)
        if params.mode.value != a.mode:
            raise ValueError(f"checkpoint mode {params.mode.value} differs from --mode {a.mode}")
    else:
        size = a.vocab_size or 1 + max((t for v in (*docs.values(), *queries.values()) for t in v), default=0)
        params = toytrain.EncoderParams.initial(size, a.mode, seed=a.seed)
    data = toytrain.TrainingData(core.read_groups(a.groups), queries, docs)
    result = toytrain.train(
        params, data,
        toytrain.LossWeights(a.lambda_kl, a.lambda_mse, a.lambda_flops_q, a.lambda_flops_d),
        toytrain.TrainConfig(lr=a.lr, epochs=a.epochs, batch_size=a.batch_size,
                             negatives_per_query=a.negatives_per_query, seed=a.seed, first_epoch=a.first_epoch),
    )
    toytrain.save_checkpoint(result.params, a.out, epoch=a.first_epoch + a.epochs - 1)
    if a.loss_trace:
        with open(a.loss_trace, "w", encoding="utf-8") as f:
            for step, loss in enumerate(result.losses):
                f.write(f"{step}\t{loss!r}\n")


def _eval(a):
    scores = metrics.evaluate(core.read_run(a.run), core.read_qrels(a.qrels), a.metric, a.rel_threshold, a.threads)
    if a.per_query:
        metrics.write_per_query(scores, a.per_query)
    print(f"{scores.metric}\t{metrics.aggregate(scores):.6f}")


def _rerank(a):
    scores = core.read_scores(a.scores).column(0)
    core.write_run(rerank.rerank_topk(core.read_run(a.run), scores, a.k, a.tag), a.out)


def _meta_compare(a):
    if len(a.a) != len(a.b):
        raise UsageError("--a and --b need the same number of files")
    names = a.names or [Path(p).stem for p in a.a]
    if len(names) != len(a.a):
        raise UsageError("--names must match the number of files")
    sets_a = {n: metrics.read_per_query(p) for n, p in zip(names, a.a)}
    sets_b = {n: metrics.read_per_query(p) for n, p in zip(names, a.b)}
    comps = meta.compare_sets(sets_a, sets_b, a.alpha, a.bonferroni, a.effect)
    summ = meta.summarize(comps, a.alpha)
    meta.emit_forest(summ, a.out_json, a.out_svg)
    lo, hi = summ.summary_ci
    print(f"summary effect {summ.summary_effect:.6f} [{lo:.6f}, {hi:.6f}] tau2={summ.tau_squared:.6g}")


def _demo(a):
    summary = run_demo(a.out, DemoConfig(seed=a.seed), a.threads)
    print(json.dumps(summary["ndcg_star@10"], indent=1, sort_keys=True))


HANDLERS = {
    ("index", "build"): _index_build,
    ("index", "search"): _index_search,
    ("index", "flops"): _index_flops,
    ("bm25", "search"): _bm25_search,
    ("distill", "ensemble"): _distill_ensemble,
    ("distill", "rescore"): _distill_rescore,
    ("distill", "negatives"): _distill_negatives,
    ("train", None): _train,
    ("eval", None): _eval,
    ("rerank", None): _rerank,
    ("meta", "compare"): _meta_compare,
    ("demo", None): _demo,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = _build_parser()
    try:
        _apply_config(leaves, argv)
        args = parser.parse_args(argv)
        key = (args.command, getattr(args, "action", None))
        if args.command is None or key not in HANDLERS:
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        HANDLERS[key](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, toytrain.TrainingDiverged, json.JSONDecodeError) as exc:
        print(f"lsrkit: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
