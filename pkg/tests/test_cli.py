import json
import subprocess
import sys

import pytest

from ogsslb.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main

TINY = """
[simulation]
N = 30
G = 60
K = 2
seed = 5

[fit]
K_init = 4
omega0_ladder = 1, 10, 100
em_max_iters_per_rung = 15
mc_gamma_samples = 10
mc_logsumexp_samples = 5
mc_grad_samples = 3
agd_steps = 10

[soul]
n_iters = 20
burn_in = 10

[study]
n_replicates = 2
methods = SSLB, OG-SSLB
variants = BB
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


@pytest.fixture
def simulated(tmp_path, tiny_cfg):
    out = tmp_path / "data"
    assert main(["simulate", "--config", str(tiny_cfg), "--out", str(out)]) == EXIT_OK
    return out


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file() and p.name != "run_info.json"}


# --- simulate ------------------------------------------------------------------------


def test_simulate_writes_documented_files(simulated):
    names = {p.name for p in simulated.iterdir()}
    assert {"x.csv", "y.csv", "truth.json", "manifest.json"} <= names
    m = json.loads((simulated / "manifest.json").read_text())
    assert m["command"] == "simulate" and m["seed"] == 5


def test_simulate_rerun_byte_identical(tmp_path, tiny_cfg, simulated):
    again = tmp_path / "again"
    assert main(["simulate", "--config", str(tiny_cfg), "--out", str(again)]) == EXIT_OK
    assert _files(simulated) == _files(again)


def test_simulate_seed_override(tmp_path, tiny_cfg, simulated):
    other = tmp_path / "other"
    assert main(["simulate", "--config", str(tiny_cfg), "--out", str(other), "--seed", "6"]) == EXIT_OK
    assert (other / "x.csv").read_bytes() != (simulated / "x.csv").read_bytes()


def test_malformed_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[simulation]\nN = 30\nG = lots\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err


def test_unwritable_output_exit_3(tmp_path, tiny_cfg):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", str(tiny_cfg), "--out", str(blocker / "sub")]) == EXIT_IO


# --- fit -------------------------------------------------------------------------------


def test_fit_without_outcomes_is_sslb(tmp_path, tiny_cfg, simulated):
    out = tmp_path / "fit"
    code = main(["fit", "--x", str(simulated / "x.csv"), "--config", str(tiny_cfg), "--out", str(out), "--trace"])
    assert code == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["method"] == "SSLB" and m["lambda_w"] is None
    for name in ("biclusters.json", "Z.csv", "gamma_tilde.csv", "trace.tsv"):
        assert (out / name).exists()
    header = (out / "trace.tsv").read_text().splitlines()[0].split("\t")
    assert header == ["iteration", "rung", "q_value", "K_current", "max_abs_dZ", "lambda_w"]


def _guided_cfg(tmp_path):
    cfg = tmp_path / "guided.ini"
    cfg.write_text(TINY.replace("[fit]\n", "[fit]\noutcome_guided = true\n"))
    return cfg


def test_fit_with_outcomes_is_guided(tmp_path, simulated):
    out = tmp_path / "fit"
    code = main(["fit", "--x", str(simulated / "x.csv"), "--y", str(simulated / "y.csv"), "--config", str(_guided_cfg(tmp_path)), "--out", str(out)])
    assert code == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["method"] == "OG-SSLB" and m["lambda_w"] > 0


def test_fit_guided_flag_off_falls_back(tmp_path, tiny_cfg, simulated):
    cfg = tiny_cfg  # outcome_guided defaults to false
    out = tmp_path / "fit"
    assert main(["fit", "--x", str(simulated / "x.csv"), "--y", str(simulated / "y.csv"), "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["method"] == "SSLB"


def test_fit_row_mismatch_exit_4(tmp_path, tiny_cfg, simulated):
    lines = (simulated / "y.csv").read_text().splitlines()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(lines[:-3]) + "\n")
    code = main(["fit", "--x", str(simulated / "x.csv"), "--y", str(short), "--config", str(tiny_cfg), "--out", str(tmp_path / "f")])
    assert code == EXIT_VALIDATION


def test_fit_missing_input_exit_3(tmp_path, tiny_cfg):
    assert main(["fit", "--x", str(tmp_path / "none.csv"), "--config", str(tiny_cfg), "--out", str(tmp_path / "f")]) == EXIT_IO


def test_fit_replay_byte_identical(tmp_path, simulated):
    out = tmp_path / "fit"
    args = ["fit", "--x", str(simulated / "x.csv"), "--y", str(simulated / "y.csv"), "--config", str(_guided_cfg(tmp_path)), "--out", str(out), "--trace"]
    assert main(args) == EXIT_OK
    rerun = tmp_path / "rerun"
    assert main(["replay", str(out / "manifest.json"), "--out", str(rerun)]) == EXIT_OK
    assert _files(out) == _files(rerun)


def test_fit_replay_detects_changed_input(tmp_path, tiny_cfg, simulated):
    out = tmp_path / "fit"
    assert main(["fit", "--x", str(simulated / "x.csv"), "--config", str(tiny_cfg), "--out", str(out)]) == EXIT_OK
    with open(simulated / "x.csv", "a") as fh:
        fh.write("\n")
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r")]) == EXIT_VALIDATION


# --- evaluate --------------------------------------------------------------------------


def test_evaluate_identity_empty_and_symmetry(tmp_path, simulated, capsys):
    truth = simulated / "truth.json"
    assert main(["evaluate", str(truth), str(truth)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["consensus_score"] == 1.0
    empty = tmp_path / "empty.json"
    empty.write_text('{"biclusters": []}')
    assert main(["evaluate", str(empty), str(truth)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["consensus_score"] == 0.0
    part = tmp_path / "part.json"
    part.write_text(json.dumps({"biclusters": json.loads(truth.read_text())["biclusters"][:1]}))
    main(["evaluate", str(part), str(truth)])
    forward = json.loads(capsys.readouterr().out)["consensus_score"]
    main(["evaluate", str(truth), str(part)])
    assert json.loads(capsys.readouterr().out)["consensus_score"] == forward == 0.5


def test_evaluate_unreadable_exit_3(tmp_path, simulated):
    assert main(["evaluate", str(tmp_path / "nope.json"), str(simulated / "truth.json")]) == EXIT_IO


# --- replicate study -------------------------------------------------------------------


def test_replicate_study_rows_and_replay(tmp_path, tiny_cfg):
    out = tmp_path / "study"
    assert main(["replicate-study", "--config", str(tiny_cfg), "--out", str(out), "--workers", "2"]) == EXIT_OK
    rows = (out / "results.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["method", "variant", "seed", "score", "k_hat"]
    assert len(rows) == 1 + 4
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["k_hat_table"]["BB"]) == {"SSLB", "OG-SSLB"}
    assert not list(out.glob(".*.tmp"))
    rerun = tmp_path / "rerun"
    assert main(["replay", str(out / "manifest.json"), "--out", str(rerun)]) == EXIT_OK
    a, b = _files(out), _files(rerun)
    # wall-clock timings are the only run-dependent artifact
    a.pop("runtimes.tsv")
    b.pop("runtimes.tsv")
    assert a == b


def test_bad_worker_count_exit_2(tmp_path, tiny_cfg):
    assert main(["replicate-study", "--config", str(tiny_cfg), "--out", str(tmp_path / "s"), "--workers", "0"]) == EXIT_CONFIG


def test_console_entry_point_runs(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ogsslb.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "ogsslb" in r.stdout
