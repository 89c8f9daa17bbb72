import json

import numpy as np
import pytest

from lorenz_cusp.cli import EXIT_CONFIG, EXIT_DEPENDENCY, main
from lorenz_cusp.section import MaximaSeries


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_missing_upstream_is_a_dependency_error(tmp_path, capsys):
    for cmd in ("extract-maxima", "build-map", "density", "fit-density", "lattice",
                "check-lemma1", "return-times", "reconstruct", "fit-exponents"):
        assert run(tmp_path, cmd) == EXIT_DEPENDENCY, cmd
    err = capsys.readouterr().err
    assert "run 'integrate' first" in err and "run 'build-map' first" in err


def test_config_errors_exit_2(tmp_path):
    assert run(tmp_path, "integrate", "--set", "flow.t_end=5") == EXIT_CONFIG
    assert run(tmp_path, "integrate", "--set", "flow.bogus=1") == EXIT_CONFIG
    assert run(tmp_path, "integrate", "--config", str(tmp_path / "none.ini")) == EXIT_CONFIG


def test_help_shows_schema(capsys):
    with pytest.raises(SystemExit):
        main(["density", "--help"])
    out = capsys.readouterr().out
    assert "density.n_bins" in out and "--seed" in out


@pytest.fixture(scope="module")
def analytic_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("analytic")
    assert main(["build-map", "--out", str(d), "--set", "map.kind=analytic"]) == 0
    assert main(["density", "--out", str(d), "--set", "density.n_bins=1024"]) == 0
    return d


def test_analytic_chain(analytic_run):
    d = analytic_run
    for cmd in ("lattice", "check-lemma1", "fit-density"):
        assert main([cmd, "--out", str(d)]) == 0
    lemma = json.loads((d / "lemma1.json").read_text())
    assert lemma["passed"] and lemma["p_star"] == 8
    man = json.loads((d / "manifest-density.json").read_text())
    assert man["command"] == "density"
    assert set(man["inputs"]) == {"map.json"} and set(man["outputs"]) == {"density.csv"}


def test_manifest_replay_is_byte_identical(analytic_run, tmp_path):
    src = analytic_run
    (tmp_path / "map.json").write_bytes((src / "map.json").read_bytes())
    assert main(["density", "--config", str(src / "manifest-density.json"),
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "density.csv").read_bytes() == (src / "density.csv").read_bytes()


def test_integrate_then_extract_mean_gap(tmp_path):
    assert run(tmp_path, "integrate", "--set", "flow.t_end=1000", "--set", "flow.jitter=0") == 0
    assert run(tmp_path, "extract-maxima") == 0
    s = MaximaSeries.from_csv(tmp_path / "maxima.csv")
    print(f"CLI mean gap {s.mean_gap():.4f} over {len(s)} maxima")
    assert len(s) > 1000
    assert s.mean_gap() == pytest.approx(0.66, abs=0.05)


def test_seed_changes_the_orbit(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["integrate", "--out", str(a), "--seed", "1", "--set", "flow.t_end=120"]) == 0
    assert main(["integrate", "--out", str(b), "--seed", "2", "--set", "flow.t_end=120"]) == 0
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()
    c = tmp_path / "c"
    assert main(["integrate", "--out", str(c), "--seed", "1", "--set", "flow.t_end=120"]) == 0
    assert (a / "trajectory.csv").read_bytes() == (c / "trajectory.csv").read_bytes()

    def strip(path):
        m = json.loads((path / "manifest-integrate.json").read_text())
        m["config"]["run"].pop("out")
        m.pop("config_hash")
        return m

    assert strip(a) == strip(c)


def test_reproduce_paper_table(tmp_path, capsys):
    assert run(tmp_path, "reproduce-paper", "--set", "flow.n_events=100000") == 0
    out = capsys.readouterr().out
    head = out.splitlines()[0].split()
    assert head == ["quantity", "published", "measured", "tol", "pass"]
    for q in ("alpha_prime", "alpha", "B_prime", "B", "delta", "gamma"):
        assert any(line.startswith(q + " ") for line in out.splitlines()), q
    rows = (tmp_path / "published_comparison.csv").read_text().splitlines()
    assert rows[0] == "quantity,published,measured,tol,pass"
