import csv
import subprocess
import sys

import numpy as np
import pytest

from hhocond import experiments
from hhocond.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, _ints, main, read_config
from hhocond.experiments import COLUMNS, ExperimentConfig, fit_slope, relative_spread, run_experiment
from hhocond.local import ConfigurationError, NumericalError


def test_fit_slope_examples():
    assert fit_slope([1, 2, 4], [1, 4, 16]) == pytest.approx(2.0)
    assert fit_slope([1, 10, 100], [5, 5, 5]) == pytest.approx(0.0, abs=1e-12)
    assert fit_slope([2, 4, 8, 16], [8, 4, 2, 1]) == pytest.approx(-1.0)


@pytest.mark.parametrize("xs,ys", [([1, 2], [1, 2]), ([1, 2, 0], [1, 2, 3]), ([1, 2, 3], [1, -2, 3])])
def test_fit_slope_rejects(xs, ys):
    with pytest.raises(ValueError):
        fit_slope(xs, ys)


def test_relative_spread():
    assert relative_spread([2.0, 2.2, 2.1]) == pytest.approx(0.1)


def test_int_lists():
    assert _ints("1..4") == [1, 2, 3, 4]
    assert _ints("0, 2,5") == [0, 2, 5]
    assert _ints("1..2,7") == [1, 2, 7]


def test_read_config(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("# comment\nexperiment = cut_eps\nn = 8  # trailing\neps = 1e-2,1e-3\nl-mode = k+1\nstab=main,hdg\n")
    cfg = read_config(p)
    assert cfg == {"experiment": "cut_eps", "n": [8], "eps": [1e-2, 1e-3], "l_mode": "k+1", "stab": ["main", "hdg"]}


@pytest.mark.parametrize("text", ["nonsense\n", "colour = red\n", "n = a,b\n"])
def test_read_config_errors(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigurationError):
        read_config(p)


@pytest.mark.parametrize("changes", [
    {"experiment": "nope"},
    {"k": [10]},
    {"stab": ["kminus1"]},                 # needs l = k - 1
    {"stab": ["hdg"]},                     # needs l = k + 1
    {"experiment": "cut_eps", "eps": [0.5], "n": [4]},
    {"experiment": "cut_eps"},
    {"experiment": "penta", "n": [4]},
    {"basis": "monomial"},
    {"aggregate": "half"},
    {"l_mode": "k+2"},
])
def test_config_validation(changes):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**changes).validate()


def test_flags_override_config_file(tmp_path):
    cfg_path = tmp_path / "c.cfg"
    out = tmp_path / "res.csv"
    cfg_path.write_text(f"experiment = coarsened\nn = 2,3,4\nk = 0\nout = {tmp_path / 'ignored.csv'}\n")
    assert main([str(cfg_path), "--n", "2,3", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out)))
    assert [int(r["NbCells"]) for r in rows] == [4, 9]
    assert not (tmp_path / "ignored.csv").exists()


def test_exit_code_for_bad_config(tmp_path, capsys):
    assert main(["--experiment", "cut_eps", "--n", "4", "--eps", "0.5", "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert main([str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_exit_code_for_failed_row(tmp_path, monkeypatch, capsys):
    real = experiments.measure

    def flaky(mesh, k, *a, **kw):
        if mesh.n_elements == 9:
            raise NumericalError("factorisation failed")
        return real(mesh, k, *a, **kw)

    monkeypatch.setattr(experiments, "measure", flaky)
    out = tmp_path / "r.csv"
    assert main(["--experiment", "coarsened", "--n", "2,3,4", "--out", str(out)]) == EXIT_NUMERICAL
    # the other rows are still written
    assert len(list(csv.DictReader(open(out)))) == 2
    assert "FAILED" in capsys.readouterr().out


def test_csv_layout(tmp_path):
    out = tmp_path / "cut.csv"
    res = run_experiment(ExperimentConfig(experiment="cut_eps", n=[4], eps=[1e-2, 1e-3, 1e-4], k=[0], out=str(out)))
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert len(lines) == 4
    rows = list(csv.DictReader(open(out)))
    for r, eps in zip(rows, [1e-2, 1e-3, 1e-4]):
        assert float(r["Epsilon"]) == eps
        assert float(r["Condition"]) == pytest.approx(float(r["MaxEig"]) / float(r["MinEig"]), rel=1e-14)
        assert r["EnergyError"] == ""
        assert int(r["NbCells"]) == 16
    assert res.files == [str(out)]
    assert set(res.slopes["k0_main"]) >= {"lambda_max_vs_1/eps", "kappa_vs_1/eps"}


def test_several_series_get_their_own_files(tmp_path):
    out = tmp_path / "sq.csv"
    res = run_experiment(ExperimentConfig(experiment="coarsened", n=[2, 3], k=[0, 1], out=str(out)))
    assert sorted(res.files) == sorted(str(tmp_path / f"sq_k{k}_main.csv") for k in (0, 1))


def test_ksweep_has_degree_column(tmp_path):
    out = tmp_path / "ks.csv"
    run_experiment(ExperimentConfig(experiment="ksweep", mesh="triangular", n=[2], levels=[1], k=[1, 2, 3],
                                    out=str(out)))
    rows = list(csv.DictReader(open(out)))
    assert [int(r["k"]) for r in rows] == [1, 2, 3]
    assert len({r["NbCells"] for r in rows}) == 1


def test_convergence_reports_errors(tmp_path):
    out = tmp_path / "conv.csv"
    res = run_experiment(ExperimentConfig(experiment="convergence", n=[2, 4, 8], k=[1], out=str(out)))
    errs = [float(r["EnergyError"]) for r in csv.DictReader(open(out))]
    assert errs[0] > errs[1] > errs[2] > 0
    assert res.slopes["k1_main"]["error_vs_h"] > 1.5


def test_reruns_are_byte_identical(tmp_path):
    texts = []
    for i in range(2):
        out = tmp_path / f"r{i}.csv"
        assert main(["--experiment", "cut_refine", "--n", "8,10", "--k", "1", "--aggregate", "full",
                     "--out", str(out)]) == EXIT_OK
        texts.append(out.read_bytes())
    assert texts[0] == texts[1]


def test_gnuplot_script(tmp_path):
    out = tmp_path / "p.csv"
    gp = tmp_path / "p.gp"
    main(["--experiment", "penta", "--n", "5,6", "--out", str(out), "--gnuplot", str(gp)])
    text = gp.read_text()
    assert "set logscale xy" in text
    assert f"'{out}' using 'hMin':'Condition'" in text


def test_console_entry_point(tmp_path):
    out = tmp_path / "e.csv"
    proc = subprocess.run([sys.executable, "-m", "hhocond.cli", "--experiment", "coarsened", "--n", "2,3,4",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "k0_main: 3 rows" in proc.stdout
    vals = np.loadtxt(out, delimiter=",", skiprows=1, usecols=7)
    assert (np.diff(vals) > 0).all()
