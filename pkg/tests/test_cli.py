"""Tests for the experiment runner: config parsing, outputs, exit codes."""

import json
import math

import numpy as np
import pytest

from silt import cli
from silt.errors import ConfigError, IntegrabilityError
from silt.simplex import MCEstimate, dyson_closed_form


# ---------------------------------------------------------------------------
# config parsing and validation

def test_defaults():
    cfg = cli.validate_config("experiment=dyson")
    assert cfg.k == 2
    assert cfg.n == 256
    assert cfg.n_paths == 10 ** 4
    assert cfg.n_mc == 10 ** 6
    assert cfg.seed == 0
    assert cfg.eps == (0.1, 0.05, 0.02)
    assert cfg.out == "dyson"          # falls back to the experiment name


def test_flags_override_file():
    cfg = cli.validate_config("experiment=dyson\nk=3\nseed=5",
                              {"k": "4", "out": "custom"})
    assert cfg.k == 4
    assert cfg.seed == 5
    assert cfg.out == "custom"


def test_comments_and_blank_lines_ignored():
    raw = "# header\n\nexperiment=dyson  # trailing\n  \nk=3\n"
    assert cli.validate_config(raw).k == 3


def test_env_seed_applies_when_unset(monkeypatch):
    monkeypatch.setenv("SILT_SEED", "42")
    assert cli.validate_config("experiment=dyson").seed == 42
    # an explicit seed wins over the environment
    assert cli.validate_config("experiment=dyson\nseed=3").seed == 3


def test_env_seed_must_be_integer(monkeypatch):
    monkeypatch.setenv("SILT_SEED", "forty")
    with pytest.raises(ConfigError):
        cli.validate_config("experiment=dyson")


def test_unknown_key_reports_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        cli.validate_config("experiment=dyson\nwibble=2")


def test_bad_value_reports_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        cli.validate_config("experiment=dyson\nk=abc")


def test_missing_experiment_rejected():
    with pytest.raises(ConfigError, match="experiment name required"):
        cli.validate_config("k=3")


def test_unknown_experiment_rejected():
    with pytest.raises(ConfigError, match="unknown experiment"):
        cli.validate_config("experiment=wibble")


@pytest.mark.parametrize("raw", [
    "experiment=mean\nk=1",
    "experiment=dyson\nn_mc=0",
    "experiment=dyson\neps=0.1,0.2",
    "experiment=dyson\neps=-0.1",
    "experiment=clark-delta\ns=0.7\nt=0.2",
    "experiment=mean\nop=mult:const:0",
    "experiment=fw\nh=wibble:1",
])
def test_range_checks(raw):
    with pytest.raises(ConfigError):
        cli.validate_config(raw)


def test_dyson_allows_first_order():
    assert cli.validate_config("experiment=dyson\nk=1").k == 1


def test_config_hash_ignores_output_name():
    a = cli.validate_config("experiment=dyson", {"out": "first"})
    b = cli.validate_config("experiment=dyson", {"out": "second"})
    c = cli.validate_config("experiment=dyson\nseed=1", {"out": "first"})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_parse_test_function():
    f = cli.parse_test_function("const:2.5")
    assert f(np.array([0.3]))[0] == 2.5
    g = cli.parse_test_function("step:1,-1")
    assert g(np.array([0.2]))[0] == 1.0
    assert g(np.array([0.8]))[0] == -1.0
    with pytest.raises(ConfigError):
        cli.parse_test_function("const:abc")
    with pytest.raises(ConfigError):
        cli.parse_test_function("spline:1,2")


# ---------------------------------------------------------------------------
# full runs through main()

def run_main(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    summary = json.loads((tmp_path / f"{name}.summary.json").read_text()) \
        if code in (0, 1) else None
    return code, summary, out


def test_dyson_run_writes_summary_and_detail(tmp_path):
    code, summary, out = run_main(tmp_path, "dy", "dyson", "--k", "3",
                                  "--n-mc", "20000", "--seed", "1")
    assert code == 0
    assert summary["schema_version"] == 1
    assert summary["experiment"] == "dyson"
    assert summary["seed"] == 1
    assert summary["results"]["closed_form"] == dyson_closed_form(3)
    assert math.isclose(dyson_closed_form(3), math.pi / 2.0, rel_tol=1e-12)
    assert summary["config_hash"]
    lines = (tmp_path / "dy.detail.csv").read_text().strip().splitlines()
    assert lines[0] == "k,closed_form,estimate,stderr,rel_error"
    assert len(lines) == 2


def test_mean_run_reports_closed_form(tmp_path):
    code, summary, _ = run_main(tmp_path, "mn", "mean", "--k", "3",
                                "--n", "32", "--n-paths", "200",
                                "--eps", "0.1,0.05")
    assert code == 0
    assert summary["results"]["closed_form"] == 0.25
    assert len(summary["results"]["per_eps"]) == 2
    assert "extrapolated" in summary["results"]


def test_fw_at_zero_direction_matches_mean_rows(tmp_path):
    # with h = 0 the martingale weight is 1, so the per-eps path estimates
    # must agree exactly with the plain mean experiment on the same seed
    args = ["--k", "2", "--n", "32", "--n-paths", "200", "--eps", "0.1,0.05",
            "--seed", "3"]
    code_fw, _, _ = run_main(tmp_path, "fw", "fw", "--h", "const:0",
                             "--n-mc", "5000", *args)
    code_mn, _, _ = run_main(tmp_path, "mn", "mean", *args)
    assert code_fw == 0 and code_mn == 0
    rows_fw = (tmp_path / "fw.detail.csv").read_text().strip().splitlines()[1:]
    rows_mn = (tmp_path / "mn.detail.csv").read_text().strip().splitlines()[1:]
    for row_fw, row_mn in zip(rows_fw, rows_mn, strict=True):
        eps_fw, mean_fw, se_fw = (float(v) for v in row_fw.split(","))
        eps_mn, mean_mn, se_mn = (float(v) for v in row_mn.split(","))
        assert eps_fw == eps_mn
        assert mean_fw == mean_mn          # same paths, weight exactly 1
        # the two routes accumulate the square sums in different orders
        assert math.isclose(se_fw, se_mn, rel_tol=1e-12)


def test_repeat_runs_are_byte_identical(tmp_path):
    args = ("dyson", "--k", "2", "--n-mc", "10000", "--seed", "7")
    run_main(tmp_path, "rep", *args)
    first = ((tmp_path / "rep.summary.json").read_bytes(),
             (tmp_path / "rep.detail.csv").read_bytes())
    run_main(tmp_path, "rep", *args)
    second = ((tmp_path / "rep.summary.json").read_bytes(),
              (tmp_path / "rep.detail.csv").read_bytes())
    assert first == second


def test_config_file_supplies_experiment(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("experiment=dyson\nk=3\nn_mc=10000\nseed=2\n")
    code, summary, _ = run_main(tmp_path, "cf", "--config", str(cfgfile))
    assert code == 0
    assert summary["config"]["k"] == 3
    assert summary["seed"] == 2


def test_exit_code_two_for_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 2
    assert cli.main(["wibble"]) == 2
    assert cli.main(["dyson", "--eps", "0.1,0.2"]) == 2
    assert cli.main(["--config", str(tmp_path / "absent.cfg")]) == 2
    err = capsys.readouterr().err
    assert "experiment name required" in err
    assert "unknown experiment" in err
    assert "cannot read config" in err


def test_exit_code_one_on_escalation(tmp_path, monkeypatch):
    bad = MCEstimate(mean=1.0, stderr=0.1, n_samples=100, seed=0,
                     n_rejected=50)

    def stub(cfg):
        return {"stub": True}, ["a"], [(1,)], [bad]

    monkeypatch.setitem(cli._RUNNERS, "dyson", stub)
    code, summary, _ = run_main(tmp_path, "esc", "dyson")
    assert code == 1
    assert summary["rejection_escalated"] is True


def test_exit_code_one_on_math_error(tmp_path, monkeypatch, capsys):
    def stub(cfg):
        raise IntegrabilityError("all samples rejected")

    monkeypatch.setitem(cli._RUNNERS, "dyson", stub)
    assert cli.main(["dyson", "--out", str(tmp_path / "boom")]) == 1
    assert not (tmp_path / "boom.summary.json").exists()
    assert "all samples rejected" in capsys.readouterr().err
