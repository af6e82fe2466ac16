import csv
import json
import math

import numpy as np
import pytest

from smoothmix import __version__
from smoothmix import bench as bench_mod
from smoothmix import cli
from smoothmix.cli import main
from smoothmix.solver import ComponentCollapseError, result_from_dict


@pytest.fixture
def sim_csv(tmp_path):
    path = tmp_path / "sim.csv"
    assert main(["simulate", "--n", "400", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_version(capsys):
    assert main(["--version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "numpy" in out


def test_unknown_flag_rejected(capsys):
    assert main(["fit", "x.csv", "--bogus"]) == 2
    assert main(["simulate", "--family", "cauchy"]) == 2
    assert main(["bench", "--sizes", "a,b"]) == 2
    assert main([]) == 2


def test_simulate_defaults_and_seed_echo(tmp_path, capsys):
    path = tmp_path / "s.csv"
    assert main(["simulate", "--n", "50", "--out", str(path)]) == 0
    assert "seed=0" in capsys.readouterr().out
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "x3", "label"]
    assert len(rows) == 51
    assert {r[3] for r in rows[1:]} <= {"1", "2"}


def test_simulate_to_stdout_is_byte_identical(capsys):
    main(["simulate", "--n", "30", "--seed", "9", "--family", "t3"])
    first = capsys.readouterr()
    main(["simulate", "--n", "30", "--seed", "9", "--family", "t3"])
    second = capsys.readouterr()
    assert first.out == second.out and "seed=9" in first.err
    assert first.out.startswith("x1,x2,x3,label\n")


def test_simulate_pooled_column_sd(tmp_path):
    path = tmp_path / "big.csv"
    assert main(["simulate", "--n", "100000", "--seed", "5", "--out", str(path)]) == 0
    x = np.loadtxt(path, delimiter=",", skiprows=1)[:, :3]
    # unit variance plus the between-component variance w1 w2 (2/sqrt 3)^2
    expected = math.sqrt(1 + (1 / 3) * (2 / 3) * (2 / math.sqrt(3)) ** 2)
    assert np.allclose(x.std(axis=0, ddof=1), expected, atol=0.01)


def test_simulate_bad_values():
    assert main(["simulate", "--n", "0"]) == 2
    assert main(["simulate", "--d", "0"]) == 2


def test_fit_writes_valid_json(sim_csv, tmp_path, capsys):
    out = tmp_path / "fit.json"
    code = main(["fit", str(sim_csv), "--drop-column", "label", "--grid", "128", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    first, last = text.strip().splitlines()
    assert first.startswith("fit: n=400 J=3 K=2 bandwidth=") and "seed=0" in first
    assert last.startswith("loss=") and "pi=[" in last
    doc = json.loads(out.read_text())
    res = result_from_dict(doc)
    assert res.model.J == 3 and res.model.is_ordered()
    assert doc["config"]["seed"] == 0


def test_fit_single_component(sim_csv, tmp_path, capsys):
    out = tmp_path / "k1.json"
    assert main(["fit", str(sim_csv), "--drop-column", "3", "--k", "1", "--grid", "64",
                 "--out", str(out)]) == 0
    assert "pi=[1]" in capsys.readouterr().out
    assert json.loads(out.read_text())["model"]["weights"] == [1.0]


def test_fit_gaussian_1600_end_to_end(tmp_path):
    data, out = tmp_path / "g.csv", tmp_path / "g.json"
    assert main(["simulate", "--n", "1600", "--seed", "17", "--out", str(data)]) == 0
    assert main(["fit", str(data), "--drop-column", "label", "--restarts", "2", "--out", str(out)]) == 0
    pi1 = json.loads(out.read_text())["model"]["weights"][0]
    assert 0.23 < pi1 < 0.43


def test_fit_headerless_and_explicit_bandwidth(tmp_path, capsys):
    path = tmp_path / "plain.csv"
    rng = np.random.default_rng(0)
    np.savetxt(path, np.r_[rng.normal(-2, 1, (60, 2)), rng.normal(2, 1, (90, 2))], delimiter=",")
    assert main(["fit", str(path), "--bandwidth", "0.5", "--grid", "64"]) == 0
    assert "n=150 J=2" in capsys.readouterr().out
    assert main(["fit", str(path), "--bandwidth", "0"]) == 2


@pytest.mark.parametrize("content", ["a,b\n1,2\n3\n", "1,2\n3,x\n", "a,b\n", "", "1,nan\n2,3\n"])
def test_fit_malformed_input(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    assert main(["fit", str(path)]) == 2


def test_fit_bad_drop_and_missing_file(sim_csv, tmp_path):
    assert main(["fit", str(sim_csv), "--drop-column", "nope"]) == 2
    assert main(["fit", str(tmp_path / "missing.csv")]) == 2
    assert main(["fit", str(sim_csv), "--k", "0"]) == 2


def test_fit_all_restarts_collapse(sim_csv, monkeypatch):
    def collapse(*args, **kwargs):
        raise ComponentCollapseError(1, 0.0, 4)

    monkeypatch.setattr(cli, "fit", collapse)
    assert main(["fit", str(sim_csv), "--drop-column", "label", "--restarts", "2", "--grid", "64"]) == 3


def test_fit_is_deterministic(sim_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["fit", str(sim_csv), "--drop-column", "label", "--grid", "128", "--seed", "4"]
    assert main(args + ["--out", str(a)]) == 0 and main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_bench_smoke(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    code = main(["bench", "--families", "gaussian", "--sizes", "200", "--reps", "2", "--restarts", "1",
                 "--grid", "128", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert text.startswith("bench: families=gaussian sizes=200 reps=2")
    lines = text.splitlines()
    i = lines.index("Scaled errors on mixing proportions, n^(2/5-eps) E|pi_1 - 1/3|")
    assert lines[i + 1].split() == ["200"] and lines[i + 2].split()[0] == "gaussian"
    with open(out) as fh:
        assert len(list(csv.DictReader(fh))) == 1
    assert (tmp_path / "bench_components.csv").exists()


def test_bench_flags_failures(tmp_path, monkeypatch, capsys):
    def collapse(*args, **kwargs):
        raise ComponentCollapseError(0, 0.0, 1)

    monkeypatch.setattr(bench_mod, "fit", collapse)
    code = main(["bench", "--sizes", "100", "--reps", "2", "--restarts", "1", "--grid", "64",
                 "--out", str(tmp_path / "f.csv")])
    assert code == 3
    assert "FLAG: gaussian n=100" in capsys.readouterr().out


def test_bench_bad_values():
    assert main(["bench", "--reps", "0"]) == 2
    assert main(["bench", "--epsilon", "0.5"]) == 2
