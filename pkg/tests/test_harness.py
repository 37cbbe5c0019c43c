import csv
import json
import math

import numpy as np
import pytest

from crashgibo import harness
from crashgibo.cli import main as cli_main
from crashgibo.harness import ConfigError, ExperimentConfig, parse_config, run_campaign, write_outputs


def cfg(**kw):
    base = dict(case="pi_8l", optimizer="random", budget=6, repeats=2, base_seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- config parsing ---------------------------------------------------------------


def test_parse_config_happy_path():
    doc = {"case": "pi_8l", "optimizer": "gibo", "budget": 10, "repeats": 3, "gibo": {"beta": 2.0}}
    c = parse_config(doc)
    assert c.case == "pi_8l" and c.budget == 10 and c.gibo_overrides == {"beta": 2.0}


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        parse_config({"case": "pi_8l", "optimizer": "gibo", "budget": 10, "bogus": 1})
    with pytest.raises(ConfigError):
        parse_config({"case": "pi_8l", "optimizer": "gibo", "budget": 10, "gibo": {"nope": 1}})


def test_parse_config_missing_keys():
    with pytest.raises(ConfigError):
        parse_config({"optimizer": "gibo", "budget": 10})
    with pytest.raises(ConfigError):
        parse_config({"case": "pi_8l", "budget": 10})
    # compare mode does not need the optimizer
    c = parse_config({"case": "pi_8l", "budget": 10}, optimizer_required=False)
    assert c.optimizer == "gibo"


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(optimizer="sgd")
    with pytest.raises(ConfigError):
        cfg(repeats=0)


# --- campaigns -------------------------------------------------------------------


def test_random_campaign_row_count(tmp_path):
    summary = run_campaign(cfg(budget=10, repeats=1))
    paths = write_outputs(summary, tmp_path)
    rows = read_csv(paths[0])
    assert len(rows) == 10
    assert [r["eval_index"] for r in rows] == [str(i) for i in range(1, 11)]


def test_campaign_outputs_byte_identical(tmp_path):
    c = cfg(budget=8, repeats=2, base_seed=3)
    a = tmp_path / "a"
    b = tmp_path / "b"
    write_outputs(run_campaign(c), a)
    write_outputs(run_campaign(c), b)
    for name in ("evals.csv", "summary.csv", "trace.dat"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_crash_rows_have_empty_objective(tmp_path):
    # pi_7l random search over the full box crashes often
    summary = run_campaign(cfg(case="pi_7l", budget=12, repeats=1, base_seed=1))
    paths = write_outputs(summary, tmp_path)
    rows = read_csv(paths[0])
    crash_rows = [r for r in rows if r["outcome"] == "crash"]
    assert crash_rows, "expected at least one crash in pi_7l random search"
    for r in crash_rows:
        assert r["objective"] == ""


def test_best_so_far_recomputable(tmp_path):
    summary = run_campaign(cfg(case="pi_7l", budget=12, repeats=2, base_seed=1))
    paths = write_outputs(summary, tmp_path)
    rows = read_csv(paths[0])
    for repeat in ("0", "1"):
        best = math.inf
        for r in (row for row in rows if row["repeat"] == repeat):
            if r["outcome"] == "success":
                best = min(best, float(r["objective"]))
            expected = "" if math.isinf(best) else best
            got = "" if r["best_so_far"] == "" else float(r["best_so_far"])
            assert got == expected


def test_trace_round_trip(tmp_path):
    c = cfg(budget=9, repeats=3, base_seed=2)
    summary = run_campaign(c)
    paths = write_outputs(summary, tmp_path)
    data = np.loadtxt(paths[2].with_name("trace.dat"))
    assert data.shape == (9, 4)
    assert np.allclose(data[:, 1], summary.median_trace)
    med = data[:, 1]
    finite = np.isfinite(med)
    assert np.all(np.diff(med[finite]) <= 1e-12)


def test_summary_csv_sections(tmp_path):
    c = cfg(budget=6, repeats=2)
    paths = write_outputs(run_campaign(c), tmp_path)
    rows = read_csv(paths[1])
    finals = [r for r in rows if r["row_type"] == "final"]
    traces = [r for r in rows if r["row_type"] == "trace"]
    assert len(finals) == 2 and len(traces) == 6


def test_gibo_campaign_smoke(tmp_path):
    c = cfg(optimizer="gibo", budget=5, repeats=1, gibo_overrides={"n_starts": 2})
    summary = run_campaign(c)
    assert summary.finals.shape == (1,)
    assert np.isfinite(summary.finals[0])
    write_outputs(summary, tmp_path)


def test_unknown_case_fails_fast():
    with pytest.raises(Exception):
        run_campaign(cfg(case="mpc_ekf"))


# --- CLI --------------------------------------------------------------------------


def write_config(tmp_path, doc):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(doc))
    return p


def test_cli_run_and_determinism(tmp_path, capsys):
    doc = {
        "case": "pi_8l",
        "optimizer": "random",
        "budget": 6,
        "repeats": 1,
        "base_seed": 5,
        "out_dir": str(tmp_path / "out1"),
    }
    conf = write_config(tmp_path, doc)
    assert cli_main(["run", "--config", str(conf)]) == 0
    assert cli_main(["run", "--config", str(conf), "--out", str(tmp_path / "out2")]) == 0
    a = (tmp_path / "out1" / "evals.csv").read_bytes()
    b = (tmp_path / "out2" / "evals.csv").read_bytes()
    assert a == b


def test_cli_case_list(capsys):
    assert cli_main(["case", "--list"]) == 0
    out = capsys.readouterr().out
    for name in ("pi_8l", "pi_7l", "cascaded_pi", "lqi"):
        assert name in out


def test_cli_bad_config_exit_code(tmp_path):
    conf = write_config(tmp_path, {"case": "pi_8l", "budget": 5, "optimizer": "bogus"})
    assert cli_main(["run", "--config", str(conf)]) == 1
    missing = tmp_path / "does_not_exist.json"
    assert cli_main(["run", "--config", str(missing)]) == 1


def test_cli_unknown_case_exit_code(tmp_path):
    conf = write_config(tmp_path, {"case": "mpc_ekf", "optimizer": "random", "budget": 5})
    assert cli_main(["run", "--config", str(conf)]) == 1


def test_cli_budget_and_seed_overrides(tmp_path):
    doc = {
        "case": "pi_8l",
        "optimizer": "random",
        "budget": 4,
        "repeats": 1,
        "out_dir": str(tmp_path / "o"),
    }
    conf = write_config(tmp_path, doc)
    assert cli_main(["run", "--config", str(conf), "--budget", "7", "--seed", "9"]) == 0
    rows = read_csv(tmp_path / "o" / "evals.csv")
    assert len(rows) == 7
