import json

import numpy as np
import pytest

from lsrkit import cli, core, distill, index, meta, metrics, rerank, toytrain
from lsrkit.synth import SynthConfig, make_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    c = make_corpus(SynthConfig(vocab_size=60, num_topics=6, num_docs=80, num_queries=12, seed=3))
    core.write_vectors(c.doc_counts, d / "docs.jsonl")
    core.write_vectors(c.query_counts, d / "queries.jsonl")
    core.write_qrels(c.qrels, d / "qrels.txt")
    core.write_scores(c.teacher, d / "teacher.tsv")
    return c, d


def run_cli(*args):
    return cli.main([str(a) for a in args])


def test_no_arguments_exits_1(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_exits_1(capsys):
    assert run_cli("eval", "--bogus") == 1
    assert "usage" in capsys.readouterr().err


def test_group_without_action_exits_1():
    assert run_cli("index") == 1


def test_help_documents_formats(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["--help"])
    assert err.value.code == 0
    out = capsys.readouterr().out
    for fmt in ["run", "qrels", "vectors", "scores TSV", "groups", "per-query TSV", "checkpoint"]:
        assert fmt in out


def test_data_error_exits_2(tmp_path, fixtures, capsys):
    bad = tmp_path / "bad.run"
    bad.write_text("q1 Q0 d1 1\n")
    assert run_cli("eval", "--run", bad, "--qrels", fixtures / "qrels.txt") == 2
    assert "bad.run:1:" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, fixtures):
    assert run_cli("eval", "--run", tmp_path / "nope", "--qrels", fixtures / "qrels.txt") == 2


@pytest.mark.parametrize("metric", ["ndcg@10", "ndcg_star@10", "mrr@10", "success@5"])
def test_eval_matches_golden(metric, fixtures, tmp_path, capsys):
    out = tmp_path / "pq.tsv"
    assert run_cli("eval", "--run", fixtures / "run.txt", "--qrels", fixtures / "qrels.txt",
                   "--metric", metric, "--per-query", out) == 0
    got = metrics.read_per_query(out)
    golden = metrics.read_per_query(fixtures / f"golden_{metric.replace('@', '_at_')}.tsv")
    assert got.keys() == golden.keys()
    for q in golden:
        assert got[q] == pytest.approx(golden[q], abs=1e-12)
    printed = capsys.readouterr().out.strip().split("\t")
    assert printed[0] == metric
    assert float(printed[1]) == pytest.approx(sum(golden.values()) / len(golden), abs=1e-6)


def test_config_file_supplies_defaults_and_flags_win(fixtures, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"run": str(fixtures / "run.txt"), "qrels": str(fixtures / "qrels.txt"),
                               "metric": "mrr@10", "per_query": str(tmp_path / "a.tsv")}))
    assert run_cli("eval", "--config", cfg) == 0
    assert metrics.read_per_query(tmp_path / "a.tsv") == pytest.approx(
        metrics.read_per_query(fixtures / "golden_mrr_at_10.tsv"))
    assert run_cli("eval", "--config", cfg, "--metric", "success@5", "--per-query", tmp_path / "b.tsv") == 0
    assert metrics.read_per_query(tmp_path / "b.tsv") == metrics.read_per_query(fixtures / "golden_success_at_5.tsv")


def test_index_build_search_flops(corpus, tmp_path, capsys):
    c, d = corpus
    assert run_cli("index", "build", "--vectors", d / "docs.jsonl", "--out", tmp_path / "idx") == 0
    assert run_cli("index", "search", "--index", tmp_path / "idx", "--queries", d / "queries.jsonl",
                   "--k", 15, "--tag", "x", "--out", tmp_path / "cli.run", "--threads", 2) == 0
    lib = index.search_run(index.build_index(c.doc_counts), c.query_counts, 15, "x")
    core.write_run(lib, tmp_path / "lib.run")
    assert (tmp_path / "cli.run").read_bytes() == (tmp_path / "lib.run").read_bytes()
    capsys.readouterr()
    assert run_cli("index", "flops", "--queries", d / "queries.jsonl", "--docs", d / "docs.jsonl") == 0
    expected = index.flops_metric(c.query_counts.values(), c.doc_counts.values())
    assert float(capsys.readouterr().out) == pytest.approx(expected, abs=1e-6)


def test_bm25_search(corpus, tmp_path):
    c, d = corpus
    assert run_cli("bm25", "search", "--corpus", d / "docs.jsonl", "--queries", d / "queries.jsonl",
                   "--k", 20, "--k1", 1.2, "--b", 0.75, "--out", tmp_path / "cli.run") == 0
    lib = index.search_run(index.build_bm25_index(c.doc_counts, index.Bm25Params(1.2, 0.75)), c.query_counts, 20, "bm25")
    core.write_run(lib, tmp_path / "lib.run")
    assert (tmp_path / "cli.run").read_bytes() == (tmp_path / "lib.run").read_bytes()


def test_distill_ensemble_and_rescore(corpus, tmp_path):
    c, d = corpus
    assert run_cli("distill", "ensemble", "--scores", d / "teacher.tsv", "--out", tmp_path / "ens.tsv") == 0
    ens = core.read_scores(tmp_path / "ens.tsv").column(0)
    assert ens == distill.ensemble(core.read_scores(d / "teacher.tsv"))
    assert run_cli("distill", "rescore", "--scores", tmp_path / "ens.tsv", "--target-mean", 1,
                   "--target-std", 2, "--out", tmp_path / "re.tsv") == 0
    assert core.read_scores(tmp_path / "re.tsv").column(0) == distill.rescore(ens, distill.RescoreTarget(1.0, 2.0))


def _groups_via_cli(c, d, tmp_path):
    run_cli("bm25", "search", "--corpus", d / "docs.jsonl", "--queries", d / "queries.jsonl", "--k", 40,
            "--out", tmp_path / "bm25.run")
    run_cli("distill", "rescore", "--scores", d / "teacher.tsv", "--target-mean", 0, "--target-std", 4,
            "--out", tmp_path / "re.tsv")
    # teacher scores only cover judged docs and the BM25 head; sample inside the scored pool
    scored = core.read_scores(tmp_path / "re.tsv").column(0)
    run = core.read_run(tmp_path / "bm25.run")
    pool = core.Run({q: [(doc, s) for doc, s in run[q] if doc in scored.get(q, {})] for q in run.query_ids})
    core.write_run(pool, tmp_path / "pool.run")
    return run_cli("distill", "negatives", "--run", tmp_path / "pool.run", "--qrels", d / "qrels.txt",
                   "--n-top", 3, "--n-random", 3, "--depth", 30, "--seed", 5,
                   "--scores", tmp_path / "re.tsv", "--out", tmp_path / "groups.jsonl")


def test_distill_negatives(corpus, tmp_path):
    c, d = corpus
    assert _groups_via_cli(c, d, tmp_path) == 0
    qrels = core.read_qrels(d / "qrels.txt")
    lib = distill.sample_negatives(core.read_run(tmp_path / "pool.run"),
                                   {q: qrels.positives(q) for q in qrels.query_ids},
                                   distill.NegativePolicy(3, 3, 30, 5))
    lib = distill.attach_scores(lib, core.read_scores(tmp_path / "re.tsv").column(0))
    assert core.read_groups(tmp_path / "groups.jsonl") == lib


def test_train_matches_library_and_resumes(corpus, tmp_path):
    c, d = corpus
    assert _groups_via_cli(c, d, tmp_path) == 0
    common = ["--groups", tmp_path / "groups.jsonl", "--vectors", d / "docs.jsonl",
              "--query-vectors", d / "queries.jsonl", "--vocab-size", 60, "--lr", 0.05,
              "--batch-size", 4, "--negatives-per-query", 4, "--seed", 1]
    assert run_cli("train", *common, "--epochs", 2, "--out", tmp_path / "m2.ckpt",
                   "--loss-trace", tmp_path / "trace2.tsv") == 0
    data = toytrain.TrainingData(core.read_groups(tmp_path / "groups.jsonl"), c.query_counts, c.doc_counts)
    lib = toytrain.train(toytrain.EncoderParams.initial(60, "full", seed=1), data, toytrain.LossWeights(),
                         toytrain.TrainConfig(lr=0.05, epochs=2, batch_size=4, negatives_per_query=4, seed=1))
    params, header = toytrain.load_checkpoint(tmp_path / "m2.ckpt")
    assert np.array_equal(params.matrix, lib.params.matrix) and header["epoch"] == 1
    # warm start: one epoch, then resume at epoch 1
    assert run_cli("train", *common, "--epochs", 1, "--out", tmp_path / "m1.ckpt",
                   "--loss-trace", tmp_path / "t1.tsv") == 0
    assert run_cli("train", *common, "--epochs", 1, "--first-epoch", 1, "--init", tmp_path / "m1.ckpt",
                   "--out", tmp_path / "m1b.ckpt", "--loss-trace", tmp_path / "t2.tsv") == 0
    assert (tmp_path / "m1b.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
    losses = [line.split("\t")[1] for line in ((tmp_path / "t1.tsv").read_text() + (tmp_path / "t2.tsv").read_text()).split("\n") if line]
    assert losses == [line.split("\t")[1] for line in (tmp_path / "trace2.tsv").read_text().split("\n") if line]


def test_train_mode_mismatch_is_data_error(corpus, tmp_path):
    c, d = corpus
    _groups_via_cli(c, d, tmp_path)
    toytrain.save_checkpoint(toytrain.EncoderParams.initial(60, "doc"), tmp_path / "doc.ckpt")
    assert run_cli("train", "--groups", tmp_path / "groups.jsonl", "--vectors", d / "docs.jsonl",
                   "--init", tmp_path / "doc.ckpt", "--mode", "full", "--out", tmp_path / "x.ckpt") == 2


def test_rerank(fixtures, tmp_path):
    run = core.read_run(fixtures / "run.txt")
    rng = np.random.default_rng(0)
    scores = {q: {doc: float(rng.normal()) for doc in run.doc_ids(q)} for q in run.query_ids}
    core.write_scores(scores, tmp_path / "ce.tsv")
    assert run_cli("rerank", "--run", fixtures / "run.txt", "--scores", tmp_path / "ce.tsv", "--k", 10,
                   "--tag", "ce", "--out", tmp_path / "cli.run") == 0
    core.write_run(rerank.rerank_topk(run, scores, 10, "ce"), tmp_path / "lib.run")
    assert (tmp_path / "cli.run").read_bytes() == (tmp_path / "lib.run").read_bytes()


def test_rerank_missing_scores_is_data_error(fixtures, tmp_path):
    core.write_scores({"Q0": {"D00": 1.0}}, tmp_path / "ce.tsv")
    assert run_cli("rerank", "--run", fixtures / "run.txt", "--scores", tmp_path / "ce.tsv",
                   "--out", tmp_path / "x.run") == 2


def test_meta_compare(tmp_path):
    rng = np.random.default_rng(1)
    a_files, b_files, sets_a, sets_b = [], [], {}, {}
    for i in range(3):
        a = {f"q{j}": float(v) for j, v in enumerate(rng.uniform(size=12))}
        b = {q: min(1.0, v * 0.8) for q, v in a.items()}
        metrics.write_per_query(a, tmp_path / f"a{i}.tsv")
        metrics.write_per_query(b, tmp_path / f"b{i}.tsv")
        a_files.append(tmp_path / f"a{i}.tsv")
        b_files.append(tmp_path / f"b{i}.tsv")
        sets_a[f"set{i}"], sets_b[f"set{i}"] = a, b
    assert run_cli("meta", "compare", "--a", *a_files, "--b", *b_files, "--names", "set0", "set1", "set2",
                   "--out-json", tmp_path / "f.json", "--out-svg", tmp_path / "f.svg") == 0
    lib = meta.summarize(meta.compare_sets(sets_a, sets_b))
    assert json.loads((tmp_path / "f.json").read_text()) == json.loads(json.dumps(meta.forest_records(lib)))
    assert run_cli("meta", "compare", "--a", *a_files, "--b", b_files[0], "--out-json", tmp_path / "g.json",
                   "--out-svg", tmp_path / "g.svg") == 1


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_demo_is_deterministic(tmp_path):
    assert run_cli("demo", "--seed", 7, "--out", tmp_path / "a") == 0
    assert run_cli("demo", "--seed", 7, "--out", tmp_path / "b", "--threads", 3) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b
    summary = json.loads(a["summary.json"])
    assert set(summary["ndcg_star@10"]) >= {"bm25", "full", "lexical", "doc"}
