import json

import numpy as np
import pytest

from twophase.cli import main
from twophase.io import format_sample, parse_draws, parse_sample
from twophase.exceptions import DataError
from twophase.harness import default_config, oracle_draws


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "sample.csv"
    assert main(["simulate-design", "--n", "600", "--seed", "3", "--output", str(path)]) == 0
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run(["simulate-design", "--n", "300", "--seed", "9", "--output", p],
                   capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_sample_csv_round_trip(sample_csv):
    text = sample_csv.read_text()
    s = parse_sample(text)
    assert format_sample(s) == text


@pytest.mark.parametrize("weights", ["plain", "c", "mc", "cc", "e"])
def test_fit_right_twice_is_byte_identical(sample_csv, tmp_path, capsys, weights):
    outs = []
    for k in range(2):
        out = tmp_path / f"fit{k}.json"
        code, _, err = run(["fit-right", "--weights", weights, "--input", sample_csv,
                            "--seed", 7, "--output", out], capsys)
        assert code == 0, err
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    res = json.loads(outs[0])
    assert res["weights"] == weights and len(res["theta_hat"]) == 1


def test_calibrate_writes_weights_and_diagnostics(sample_csv, tmp_path, capsys):
    out = tmp_path / "w.csv"
    code, _, _ = run(["calibrate", "--weights", "cc", "--within-stratum", "--input",
                      sample_csv, "--output", out], capsys)
    assert code == 0
    diag = json.loads((tmp_path / "w.csv.json").read_text())
    assert diag["residual"] <= 1e-8 and diag["within_stratum"]
    assert out.read_text().splitlines()[0].startswith("id,")


def test_fit_interval_runs(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "cox_interval",
                               "strata": {"on": "u", "cuts": [0.5], "p": [0.8, 0.4]}}))
    data = tmp_path / "d.csv"
    assert run(["simulate-design", "--config", cfg, "--n", "400", "--output", data],
               capsys)[0] == 0
    code, out, err = run(["fit-interval", "--input", data], capsys)
    assert code == 0, err
    assert json.loads(out)["identifiable"]


def test_missing_x_is_a_data_error_with_row(sample_csv, tmp_path, capsys):
    lines = sample_csv.read_text().splitlines()
    header = lines[0].split(",")
    xi, x1 = header.index("xi"), header.index("x_1")
    for i, line in enumerate(lines[1:], start=1):
        fields = line.split(",")
        if fields[xi] == "1":
            fields[x1] = ""
            lines[i] = ",".join(fields)
            break
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    code, _, err = run(["fit-right", "--input", bad], capsys)
    assert code == 3
    assert f"row {i}" in err


@pytest.mark.parametrize("argv", [
    [],
    ["fit-right"],
    ["fit-right", "--input", "x.csv", "--weights", "z"],
    ["mc"],
    ["fit-right", "--input", "x.csv", "--bogus"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert run(argv, capsys)[0] == 2


def test_unreadable_input_exit_3(tmp_path, capsys):
    assert run(["fit-right", "--input", tmp_path / "none.csv"], capsys)[0] == 3


def test_plain_within_is_rejected(sample_csv, capsys):
    assert run(["fit-right", "--input", sample_csv, "--within-stratum"], capsys)[0] == 3


def test_numerical_failure_exit_4(tmp_path, capsys):
    # every early failure has x = 1: the partial likelihood is monotone
    rows = ["id,y,delta,u_1,stratum,xi,x_1"]
    for i in range(10):
        rows.append(f"{i + 1},{i + 1},1,0.0,1,1,{1 if i < 5 else 0}")
    path = tmp_path / "mono.csv"
    path.write_text("\n".join(rows) + "\n")
    code, _, err = run(["fit-right", "--input", path], capsys)
    assert code == 4, err


def test_variance_subcommand(tmp_path, capsys):
    draws, _ = oracle_draws(default_config(), n=4000)
    lines = ["ltilde_1,Z_1,Z_2,stratum,pi0,gdot"]
    for l, z, s, p, g in zip(draws.ltilde[:, 0], draws.z, draws.stratum, draws.pi0,
                             draws.gdot):
        vals = [repr(float(v)) for v in (l, z[0], z[1])] + [str(s)]
        lines.append(",".join(vals + [repr(float(p)), repr(float(g))]))
    path = tmp_path / "draws.csv"
    path.write_text("\n".join(lines) + "\n")
    assert parse_draws(path.read_text()).n == 4000
    code, out, err = run(["variance", "--input", path, "--method", "plain", "cc", "e",
                          "--within-stratum"], capsys)
    assert code == 0, err
    rep = json.loads(out)
    assert max(rep["identity_residuals"].values()) <= 1e-8
    assert rep["requested"]["cc"][0][0] <= rep["requested"]["plain"][0][0] + 1e-12


def test_mc_run_and_check(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "mc.json"
    cfg.write_text(json.dumps({"n_grid": [400], "replications": 3, "oracle_draws": 20000,
                               "methods": ["plain"]}))
    rep, csv_path = tmp_path / "rep.json", tmp_path / "rep.csv"
    monkeypatch.setenv("TWOPHASE_THREADS", "1")
    assert run(["mc", "run", cfg, "--output", rep, "--csv", csv_path], capsys)[0] == 0
    code, out, _ = run(["mc", "check", rep], capsys)
    assert code in (0, 1)
    assert out.startswith(("PASS", "FAIL"))


def test_mc_check_exit_codes(tmp_path, capsys):
    def report(var_z):
        return {"schema_version": 1,
                "config": default_config(n_grid=[4000]).to_dict(),
                "summary": [{"N": 4000, "design": "wor", "method": "plain",
                             "replications": 1000, "successes": 1000, "failures": 0,
                             "failure_rate": 0.0, "within_budget": True,
                             "var_z": [var_z], "mean_sigma_hat": [46.0],
                             "coverage": [0.95]}],
                "paired": [], "oracle": {"plain|wor": [[46.2]]}, "rows": []}
    good, bad = tmp_path / "good.json", tmp_path / "bad.json"
    good.write_text(json.dumps(report(47.0)))
    bad.write_text(json.dumps(report(80.0)))
    assert run(["mc", "check", good], capsys)[0] == 0
    assert run(["mc", "check", bad], capsys)[0] == 1
    assert run(["mc", "check", tmp_path / "none.json"], capsys)[0] == 3


def test_parse_sample_rejects_unknown_columns():
    with pytest.raises(DataError, match="unknown columns"):
        parse_sample("id,y,delta,xi,x_1,colour\n1,1,1,1,0.5,red\n")


def test_threads_env_must_be_integer(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "mc.json"
    cfg.write_text(json.dumps({"n_grid": [300], "replications": 1}))
    monkeypatch.setenv("TWOPHASE_THREADS", "many")
    assert run(["mc", "run", cfg], capsys)[0] == 3


def test_pi0_column_round_trip(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(["simulate-design", "--n", "500", "--design", "bernoulli", "--include-pi0",
                "--output", out], capsys)[0] == 0
    s = parse_sample(out.read_text())
    np.testing.assert_array_equal(np.unique(s.pi0), [0.25, 0.8])
