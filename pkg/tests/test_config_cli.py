"""Config parsing, serialization round trips, and the command line surface."""

import csv
import hashlib
import json

import pytest

from marketclock import (
    ConfigError,
    build_setup,
    parse_config,
    path_rng,
    sample_time_change,
    serialize_config,
)
from marketclock.cli import main

MINIMAL = """\
[time_change]
kind = linear

[market]
p = 2
x = 1
"""

REFERENCE_PIECEWISE = """\
[time_change]
kind = piecewise
slopes = 1.0, 1.0
breakpoints = 1.0
jumps = 1.0:1.0

[market]
T = 2.0
p = 2
x = 1
"""

SUBORDINATOR = """\
[time_change]
kind = subordinator
drift = 1.0
jump_intensity = 2.0
jump_mean = 1.0

[market]
T = 1.0
T_bar = 60.0
p = 2
x = 1

[strategy]
kind = constant
value = 1.0

[simulation]
n_paths = 20
n_physical = 64
n_market = 64
seed = 17
"""


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.clock_kind == "linear"
    assert cfg.n_paths == 10_000
    assert cfg.n_physical == 4096
    assert cfg.T == 1.0 and cfg.T_bar == 1.0
    assert cfg.theta_kind == "constant" and cfg.theta_value == 0.0
    assert cfg.seed == 0 and cfg.workers == 1


def test_degenerate_aversion_is_rejected_with_line():
    bad = MINIMAL.replace("p = 2", "p = 1")
    with pytest.raises(ConfigError, match="p must not be 0 or 1") as err:
        parse_config(bad)
    assert "line" in str(err.value), "errors should point at the offending line"


def test_unknown_key_and_section_are_rejected():
    with pytest.raises(ConfigError, match="pathz"):
        parse_config(MINIMAL + "\n[simulation]\nn_pathz = 5\n")
    with pytest.raises(ConfigError, match="portfolioz"):
        parse_config(MINIMAL + "\n[portfolioz]\nfoo = 1\n")


def test_malformed_value_reports_line():
    bad = MINIMAL + "\n[simulation]\nn_paths = soon\n"
    with pytest.raises(ConfigError, match="malformed") as err:
        parse_config(bad)
    assert "n_paths" in str(err.value)


def test_keys_are_case_sensitive():
    cfg = parse_config(
        "[time_change]\nkind = linear\nrate = 1.0\n\n"
        "[market]\nT = 2.0\nt = 0.5\np = 2\nx = 1\nT_bar = 2.0\n"
    )
    assert cfg.T == 2.0, "upper-case T is the horizon"
    assert cfg.t == 0.5, "lower-case t is the start time"


def test_round_trip_is_identity():
    for text in (MINIMAL, REFERENCE_PIECEWISE, SUBORDINATOR):
        cfg = parse_config(text)
        again = parse_config(serialize_config(cfg))
        assert again == cfg, "serializing and reparsing must not change anything"


def test_stochastic_clock_requires_market_horizon():
    text = SUBORDINATOR.replace("T_bar = 60.0\n", "")
    with pytest.raises(ConfigError, match="T_bar"):
        parse_config(text)


def test_deterministic_clock_derives_market_horizon():
    cfg = parse_config(REFERENCE_PIECEWISE)
    assert cfg.T_bar == 3.0, "horizon follows from the clock's total increase"
    setup = build_setup(cfg)
    lam = sample_time_change(setup, path_rng(0, 0))
    assert lam.value(2.0) == 3.0


def test_jump_list_parsing():
    cfg = parse_config(REFERENCE_PIECEWISE)
    assert cfg.jumps == ((1.0, 1.0),)
    multi = REFERENCE_PIECEWISE.replace("jumps = 1.0:1.0", "jumps = 0.5:0.25, 1.5:2.0")
    cfg2 = parse_config(multi)
    assert cfg2.jumps == ((0.5, 0.25), (1.5, 2.0))


def test_infeasible_deterministic_clock_fails_at_parse():
    bad = REFERENCE_PIECEWISE + "T_bar = 2.5\n"
    with pytest.raises(ConfigError, match="beyond market horizon"):
        parse_config(bad)


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_summary(out_dir):
    with open(out_dir / "summary.json") as fh:
        return json.load(fh)


def test_cli_rejects_missing_and_invalid_config(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "nope.ini")]) == 2
    bad = write_config(tmp_path, MINIMAL.replace("p = 2", "p = 1"))
    assert main(["verify", "--config", bad]) == 2
    err = capsys.readouterr().err
    assert "p must not be 0 or 1" in err


def test_cli_verify_identity_clock_passes(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        "[time_change]\nkind = linear\n\n[market]\np = 2\nx = 1\n\n"
        "[strategy]\nkind = constant\nvalue = 1.0\n\n"
        "[simulation]\nn_paths = 10\nn_physical = 64\nn_market = 64\n",
    )
    out = tmp_path / "out"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "[PASS]" in stdout and "[FAIL]" not in stdout

    summary = read_summary(out)
    assert summary["command"] == "verify"
    assert summary["passed"] is True
    names = [v["name"] for v in summary["verdicts"]]
    assert "forward_identity" in names and "backward_identity" in names
    assert "transport_roundtrip" in names
    assert "workers" not in summary["config"], (
        "execution details must stay out of the reproducibility contract"
    )
    with open(out / "records.json") as fh:
        records = json.load(fh)["records"]
    assert records and all("identity" in r for r in records)
    with open(out / "run_meta.json") as fh:
        meta = json.load(fh)
    assert set(meta) == {"wall_seconds", "workers"}


def test_cli_verify_reports_expected_failure_demo(tmp_path):
    cfg = write_config(tmp_path, SUBORDINATOR + "\n[checks]\ndemonstrate_failure = true\n")
    out = tmp_path / "out"
    rc = main(["verify", "--config", cfg, "--out", str(out), "--paths", "150"])
    assert rc == 0
    summary = read_summary(out)
    demo = [v for v in summary["verdicts"] if v["name"] == "backward_failure_demo"]
    assert demo and demo[0]["passed"] is True
    assert "expected-fail" in demo[0]["detail"]


def test_cli_verify_convergence_honestly_fails_on_jumpy_clock(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        REFERENCE_PIECEWISE
        + "\n[simulation]\nn_paths = 20\nn_physical = 64\nn_market = 64\n"
        + "\n[checks]\nconvergence = true\nconvergence_integrand = smooth_time\n",
    )
    out = tmp_path / "out"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 1
    summary = read_summary(out)
    conv = [v for v in summary["verdicts"] if v["name"] == "convergence_order"]
    assert conv and conv[0]["passed"] is False
    assert summary["passed"] is False
    assert "[FAIL] convergence_order" in capsys.readouterr().out


def test_cli_optimize_zero_rate_is_exact(tmp_path):
    cfg = write_config(
        tmp_path,
        "[time_change]\nkind = linear\n\n[market]\np = 2\nx = 1\n\n"
        "[simulation]\nn_paths = 50\nn_physical = 64\nn_market = 64\n",
    )
    out = tmp_path / "out"
    assert main(["optimize", "--config", cfg, "--out", str(out)]) == 0
    summary = read_summary(out)
    check = summary["reports"]["value_check"]
    assert check["mc_mean"] == -1.0 and check["formula_mean"] == -1.0
    with open(out / "optimize_path.csv") as fh:
        header = fh.readline().strip()
    assert header == "t,nu_opt,V,U_of_V"


def test_cli_simulate_writes_bundles(tmp_path):
    cfg = write_config(tmp_path, SUBORDINATOR)
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out), "--paths", "3"]) == 0
    for i in range(3):
        assert (out / f"bundle_{i:05d}.csv").exists()
        assert (out / f"bundle_{i:05d}_market.csv").exists()
    summary = read_summary(out)
    assert summary["verdicts"] == []
    assert summary["passed"] is True


def test_cli_scan_table_contract(tmp_path):
    cfg = write_config(
        tmp_path,
        "[time_change]\nkind = linear\n\n[market]\np = 2\nx = 1\n\n"
        "[strategy]\nkind = constant\nvalue = 1.0\n\n"
        "[simulation]\nn_paths = 2000\nn_physical = 64\nn_market = 64\n\n"
        "[checks]\nepsilons = -0.25, 0.25\nfamilies = scale, zero\n",
    )
    out = tmp_path / "out"
    assert main(["scan", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "scan.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["family", "epsilon", "J_mean", "J_stderr", "pass"]
    assert rows[1][0] == "optimal" and rows[1][4] == "true"
    families = {r[0] for r in rows[1:]}
    assert families == {"optimal", "scale", "zero"}
    zero_row = next(r for r in rows[1:] if r[0] == "zero")
    assert float(zero_row[2]) == -1.0 and float(zero_row[3]) == 0.0


def test_cli_tower_runs(tmp_path):
    cfg = write_config(tmp_path, SUBORDINATOR)
    out = tmp_path / "out"
    assert main(["tower", "--config", cfg, "--out", str(out), "--paths", "2000"]) == 0
    summary = read_summary(out)
    assert summary["reports"]["tower"]["passed"] is True


def test_cli_seed_and_paths_overrides(tmp_path):
    cfg = write_config(tmp_path, SUBORDINATOR)
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out),
                 "--seed", "99", "--paths", "2"]) == 0
    summary = read_summary(out)
    assert summary["config"]["seed"] == 99
    assert summary["config"]["n_paths"] == 2
    assert main(["simulate", "--config", cfg, "--out", str(out),
                 "--seed", "-1"]) == 2, "negative seeds are rejected"


def test_cli_outputs_identical_across_worker_counts(tmp_path):
    base = SUBORDINATOR + "\n[checks]\nepsilons = -0.25, 0.25\nfamilies = scale, zero\n"
    digests = {}
    for workers in (1, 4):
        cfg = write_config(
            tmp_path, base.replace("seed = 17", f"seed = 17\nworkers = {workers}"),
            name=f"run{workers}.ini",
        )
        for command in ("verify", "scan"):
            out = tmp_path / f"{command}{workers}"
            assert main([command, "--config", cfg, "--out", str(out),
                         "--paths", "150"]) == 0
            for artifact in ("summary.json", "records.json", "scan.csv"):
                path = out / artifact
                if not path.exists():
                    continue
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                digests.setdefault((command, artifact), set()).add(digest)
    for key, values in digests.items():
        assert len(values) == 1, f"{key} differs across worker counts"
