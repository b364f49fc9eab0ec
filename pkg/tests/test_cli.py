import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernelstab import ParseError
from kernelstab.cli import main
from kernelstab.io import TraceEvent, gen_trace, read_ids, read_points, read_trace, write_ids, write_points, write_trace
from kernelstab.runner import RunReport, run_trace


def test_generate_uniform_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["generate", "uniform-box", "-n", "100", "--dim", "2", "--seed", "7", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert read_points(a).shape == (100, 2)


def test_generate_trace_validity(tmp_path):
    p = tmp_path / "t.jsonl"
    main(["generate", "insert-delete-mix", "-n", "1000", "--dim", "2", "--seed", "1", "--out", str(p)])
    events = read_trace(p)
    dels = sum(e.op == "-" for e in events)
    assert len(events) == 1000 and 220 <= dels <= 380


def test_generate_sphere_axis(tmp_path):
    p = tmp_path / "s.csv"
    main(["generate", "sphere", "-n", "4", "--dim", "2", "--out", str(p)])
    assert np.array_equal(read_points(p), [[1, 0], [0, 1], [-1, 0], [0, -1]])


def test_run_pipeline_report(tmp_path, capsys):
    tr, out, svg = tmp_path / "t.jsonl", tmp_path / "r.json", tmp_path / "k.svg"
    main(["generate", "insert-delete-mix", "-n", "1000", "--dim", "2", "--seed", "2", "--out", str(tr)])
    code = main(["run", str(tr), "--eps", "0.2", "--engine", "pipeline", "--out", str(out), "--svg", str(svg)])
    assert code == 0
    rep = RunReport.from_json(out.read_text())
    assert rep.verification["failures"] == 0 and rep.verification["checks"] > 900
    assert rep.stats["updates"] == 1000 and rep.stats["max_changes_per_update"] <= 32
    assert svg.read_text().startswith("<svg")


def test_run_reports_identical_without_timings(tmp_path):
    tr = tmp_path / "t.jsonl"
    write_trace(tr, gen_trace("insert-delete-mix", 300, 2, seed=5))
    events = read_trace(tr)
    a = run_trace(events, "layered", 2, 0.2).to_json(timings=False)
    b = run_trace(events, "layered", 2, 0.2).to_json(timings=False)
    assert a == b and "timing" not in json.loads(a)


def test_run_grid_out_of_box(tmp_path, capsys):
    p = tmp_path / "p.csv"
    write_points(p, np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert main(["run", str(p), "--eps", "0.2", "--engine", "grid"]) == 3
    assert "row 3" in capsys.readouterr().err


def test_run_empty_trace(tmp_path, capsys):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert main(["run", str(p), "--eps", "0.2", "--dim", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["stats"]["updates"] == 0


@pytest.mark.parametrize("engine", ["grid", "phi", "layered", "epoch-weak", "epoch-strong"])
def test_run_engines(engine):
    events = gen_trace("insert-delete-mix", 300, 2, seed=3)
    rep = run_trace(events, engine, 2, 0.25)
    assert rep.verification["failures"] == 0


def test_run_net_mode_d3():
    events = gen_trace("insert-only", 150, 3, seed=1)
    rep = run_trace(events, "phi", 3, 0.3, verify_every=10)
    assert rep.params["mode"] == "net" and rep.params["certified_eps"] > 0.3
    assert rep.verification["checks"] == 15 and rep.verification["failures"] == 0


def test_verify_full_and_missing_vertex(tmp_path, capsys):
    p, k = tmp_path / "sq.csv", tmp_path / "k.txt"
    write_points(p, np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    assert main(["verify", str(p), "--eps", "0.1", "--exact"]) == 0
    write_ids(k, [0, 1, 2])
    capsys.readouterr()
    assert main(["verify", str(p), "--kernel", str(k), "--eps", "0.1", "--exact"]) == 2
    assert "witness direction" in capsys.readouterr().err


def test_verify_parse_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("d=2,n=2\n0,0\n1\n")
    assert main(["verify", str(p), "--eps", "0.1"]) == 3
    assert main(["verify", str(tmp_path / "missing.csv"), "--eps", "0.1"]) == 3
    q = tmp_path / "ok.csv"
    write_points(q, np.zeros((3, 2)))
    assert main(["verify", str(q), "--eps", "2"]) == 4


def test_experiment_sphere(tmp_path):
    spec, out = tmp_path / "e.json", tmp_path / "o.json"
    spec.write_text(json.dumps({"generator": "sphere", "n": 100, "d": 2, "eps": 0.05, "seeds": list(range(10))}))
    assert main(["experiment", str(spec), "--out", str(out)]) == 0
    reps = json.loads(out.read_text())
    assert len(reps) == 10 and all(r["ratio"] <= 8 for r in reps)


def test_experiment_bad_spec(tmp_path):
    spec = tmp_path / "e.json"
    spec.write_text("{not json")
    assert main(["experiment", str(spec)]) == 3
    spec.write_text(json.dumps({"generator": "torus", "n": 5, "d": 2}))
    assert main(["experiment", str(spec)]) == 4


def test_trace_parse_errors(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"op": "+", "x": [0, 0]}\n{"op": "-", "id": 4}\n')
    with pytest.raises(ParseError, match="line 2"):
        read_trace(p)
    p.write_text('{"op": "+", "x": [0, 0]}\n{"op": "+", "x": [0]}\n')
    with pytest.raises(ParseError, match="line 2"):
        read_trace(p)
    p.write_text('{"op": "*"}\n')
    with pytest.raises(ParseError):
        read_trace(p)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.integers(1, 4), st.lists(st.lists(finite, min_size=4, max_size=4), min_size=1, max_size=20))
def test_points_round_trip(tmp_path_factory, d, rows):
    p = tmp_path_factory.mktemp("pts") / "p.csv"
    X = np.array([r[:d] for r in rows])
    write_points(p, X)
    assert np.array_equal(read_points(p), X)


@given(st.lists(st.integers(0, 10**6), max_size=30))
def test_ids_round_trip(tmp_path_factory, ids):
    p = tmp_path_factory.mktemp("ids") / "k.txt"
    write_ids(p, ids)
    assert read_ids(p) == sorted(ids)


@given(st.integers(0, 200), st.integers(2, 4), st.integers(0, 1000))
def test_trace_round_trip(tmp_path_factory, n, d, seed):
    p = tmp_path_factory.mktemp("tr") / "t.jsonl"
    events = gen_trace("insert-delete-mix", n, d, seed=seed)
    write_trace(p, events)
    assert read_trace(p) == events


def test_report_round_trip():
    rep = run_trace([TraceEvent("+", x=(0.1, 0.2)), TraceEvent("+", x=(0.3, -0.2)), TraceEvent("-", id=0)], "grid", 2, 0.3)
    again = RunReport.from_json(rep.to_json())
    assert again == rep
    with pytest.raises(ParseError):
        RunReport.from_json(json.dumps({"schema": 99}))
