import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from lsrkit.core import (
    FormatError,
    Qrels,
    Run,
    SparseVector,
    TeacherScoreTable,
    TrainingGroup,
    read_groups,
    read_qrels,
    read_run,
    read_scores,
    read_vectors,
    read_vectors_counted,
    read_vocab,
    write_groups,
    write_qrels,
    write_run,
    write_scores,
    write_vectors,
)


def test_sparse_vector_drops_zeros_and_sorts():
    v = SparseVector({9: 0.25, 3: 1.5, 4: 0.0})
    assert list(v.items()) == [(3, 1.5), (9, 0.25)]
    assert v.support == {3, 9}


@pytest.mark.parametrize("bad", [{1: math.inf}, {1: math.nan}, {-1: 1.0}])
def test_sparse_vector_rejects(bad):
    with pytest.raises(ValueError):
        SparseVector(bad)


def test_sparse_vector_duplicate_terms():
    with pytest.raises(ValueError):
        SparseVector([(1, 1.0), (1, 2.0)])


def test_run_line_format(tmp_path):
    p = tmp_path / "r.run"
    p.write_text("q1 Q0 d7 1 13.250000 my-encoder\n")
    run = read_run(p)
    assert run["q1"] == (("d7", 13.25),)
    assert run.tag == "my-encoder"


def test_run_empty_file(tmp_path):
    p = tmp_path / "r.run"
    p.write_text("")
    assert len(read_run(p)) == 0


def test_run_bad_column_count_names_line(tmp_path):
    p = tmp_path / "r.run"
    p.write_text("q1 Q0 d7 1 13.25 t\nq1 Q0 d8 2 12.0\n")
    with pytest.raises(FormatError) as err:
        read_run(p)
    assert err.value.line == 2


def test_run_non_numeric_score(tmp_path):
    p = tmp_path / "r.run"
    p.write_text("q1 Q0 d7 1 abc t\n")
    with pytest.raises(FormatError) as err:
        read_run(p)
    assert err.value.line == 1


def test_run_ties_by_doc_id():
    run = Run.from_scores({"q": {"b": 1.0, "a": 1.0, "c": 2.0}})
    assert run.doc_ids("q") == ["c", "a", "b"]


_doc = st.text("abcdefgh", min_size=1, max_size=3)


@st.composite
def runs(draw):
    n_q = draw(st.integers(1, 4))
    results = {}
    for qi in range(n_q):
        docs = draw(st.lists(_doc, unique=True, max_size=8))
        results[f"q{qi}"] = {d: draw(st.floats(-1e3, 1e3, allow_nan=False)) for d in docs}
    return Run.from_scores(results, tag="t")


@settings(max_examples=60, deadline=None)
@given(run=runs())
def test_run_round_trip(tmp_path_factory, run):
    p = tmp_path_factory.mktemp("rt") / "r.run"
    write_run(run, p)
    back = read_run(p)
    assert [q for q in back.query_ids if back[q]] == [q for q in run.query_ids if run[q]]
    for q in run.query_ids:
        assert back.doc_ids(q) == run.doc_ids(q)
        for (_, s1), (_, s2) in zip(back.results.get(q, ()), run[q]):
            assert abs(s1 - s2) <= 5e-7


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_run_serialization_ignores_input_permutation(tmp_path_factory, data):
    docs = data.draw(st.lists(_doc, unique=True, min_size=1, max_size=8))
    scores = {d: float(data.draw(st.integers(0, 2))) for d in docs}
    perm = data.draw(st.permutations(docs))
    d = tmp_path_factory.mktemp("perm")
    write_run(Run.from_scores({"q": scores}), d / "a")
    write_run(Run.from_scores({"q": {k: scores[k] for k in perm}}), d / "b")
    assert (d / "a").read_bytes() == (d / "b").read_bytes()


def test_qrels_negative_flag(tmp_path):
    p = tmp_path / "qrels"
    p.write_text("q1 0 d1 2\nq1 0 d2 0\n")
    assert read_qrels(p).has_negative_judgments
    p.write_text("q1 0 d1 1\n")
    assert not read_qrels(p).has_negative_judgments


@pytest.mark.parametrize("text", ["q1 0 d1 -1\n", "q1 0 d1 1\nq1 0 d1 2\n", "q1 0 d1\n"])
def test_qrels_errors(tmp_path, text):
    p = tmp_path / "qrels"
    p.write_text(text)
    with pytest.raises(FormatError):
        read_qrels(p)


def test_qrels_round_trip(tmp_path):
    q = Qrels({"q1": {"d1": 2, "d2": 0}, "q2": {"d3": 1}})
    write_qrels(q, tmp_path / "q")
    assert read_qrels(tmp_path / "q") == q


def test_vectors_format(tmp_path):
    p = tmp_path / "v.jsonl"
    p.write_text('{"id":"d1","vector":{"3":1.5,"9":0.25}}\n{"id":"d2","vector":{"3":0.0}}\n')
    vecs, dropped = read_vectors_counted(p)
    assert vecs["d1"] == {3: 1.5, 9: 0.25}
    assert len(vecs["d2"]) == 0
    assert dropped == 1


def test_vectors_duplicate_id(tmp_path):
    p = tmp_path / "v.jsonl"
    p.write_text('{"id":"d1","vector":{}}\n{"id":"d1","vector":{}}\n')
    with pytest.raises(FormatError):
        read_vectors(p)


def test_vectors_non_finite(tmp_path):
    p = tmp_path / "v.jsonl"
    p.write_text('{"id":"d1","vector":{"1": Infinity}}\n')
    with pytest.raises(FormatError):
        read_vectors(p)


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.integers(0, 10_000), st.floats(1e-300, 1e300), max_size=20))
def test_vectors_round_trip(tmp_path_factory, entries):
    p = tmp_path_factory.mktemp("v") / "v.jsonl"
    vec = SparseVector(entries)
    write_vectors({"x": vec}, p)
    assert read_vectors(p)["x"] == vec


def test_vocab(tmp_path):
    p = tmp_path / "vocab.txt"
    p.write_text("the\ncat\nsat\n")
    assert read_vocab(p) == {"the": 0, "cat": 1, "sat": 2}


def test_scores_round_trip_with_header(tmp_path):
    t = TeacherScoreTable(("a", "b"), {"q1": {"d1": (1.0, -2.5), "d2": (0.125, 3.0)}})
    write_scores(t, tmp_path / "s.tsv")
    back = read_scores(tmp_path / "s.tsv")
    assert back == t


def test_scores_without_header(tmp_path):
    p = tmp_path / "s.tsv"
    p.write_text("q1\td1\t0.5\nq1\td2\t1.5\n")
    t = read_scores(p)
    assert t.num_teachers == 1
    assert t.column(0) == {"q1": {"d1": 0.5, "d2": 1.5}}


def test_scores_ragged_row(tmp_path):
    p = tmp_path / "s.tsv"
    p.write_text("qid\tdocid\ta\tb\nq1\td1\t0.5\n")
    with pytest.raises(FormatError):
        read_scores(p)


def test_training_group_invariants():
    with pytest.raises(ValueError):
        TrainingGroup("q", ("d1",), ("d1",))
    with pytest.raises(ValueError):
        TrainingGroup("q", ("d1",), ("d2",), {"d1": 1.0})
    with pytest.raises(ValueError):
        TrainingGroup("q", ())


def test_groups_round_trip(tmp_path):
    gs = [TrainingGroup("q1", ("d1",), ("d2", "d3"), {"d1": 1.0, "d2": 0.5, "d3": -1.0}),
          TrainingGroup("q2", ("d4",), ("d5",))]
    write_groups(gs, tmp_path / "g.jsonl")
    assert read_groups(tmp_path / "g.jsonl") == gs
    rec = json.loads((tmp_path / "g.jsonl").read_text().splitlines()[1])
    assert "scores" not in rec
