import json
import shutil
import subprocess
import sys

import pytest

from selfnorm_lab.cli import main

from conftest import FIXTURES


def run_cli(*args):
    return main([str(a) for a in args])


def test_tail_smoke(tmp_path):
    out = tmp_path / "out"
    assert run_cli("tail", "--config", FIXTURES / "rademacher_tail.json", "--out", out, "--seed", 1) == 0
    lines = (out / "rademacher.csv").read_text().splitlines()
    assert lines[0] == "x,count,phat,wilson_lo,wilson_hi,ratio,log_ratio,envelope"
    assert len(lines) == 1 + 4
    assert (out / "rademacher.svg").exists()
    entry = json.loads((out / "run.jsonl").read_text())
    assert entry["seed"] == 1 and entry["excluded"] == {"101": []}
    assert "c_fit" in entry and "wall_time_s" in entry


def test_same_seed_same_bytes_across_workers(tmp_path):
    cfg = FIXTURES / "rademacher_tail.json"
    assert run_cli("tail", "--config", cfg, "--out", tmp_path / "a", "--seed", 42, "--workers", 1) == 0
    assert run_cli("tail", "--config", cfg, "--out", tmp_path / "b", "--seed", 42, "--workers", 4) == 0
    for name in ("rademacher.csv", "rademacher.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_workers_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("SELFNORM_LAB_WORKERS", "nope")
    cfg = FIXTURES / "rademacher_tail.json"
    assert run_cli("tail", "--config", cfg, "--out", tmp_path, "--seed", 1) == 2
    monkeypatch.setenv("SELFNORM_LAB_WORKERS", "2")
    assert run_cli("tail", "--config", cfg, "--out", tmp_path, "--seed", 1) == 0


def test_doubling_ci_is_degenerate(tmp_path):
    assert run_cli("bpre-ci", "--config", FIXTURES / "doubling_ci.json", "--out", tmp_path) == 3


def test_bpre_ci_row(tmp_path):
    (tmp_path / "t.csv").write_text("generation,population\n10,3\n11,6\n12,18\n13,36\n14,144\n")
    cfg = tmp_path / "ci.json"
    cfg.write_text('{"name": "w", "trajectory": "t.csv", "n0": 11, "n": 3, "level": 0.95}')
    assert run_cli("bpre-ci", "--config", cfg, "--out", tmp_path / "o") == 0
    header, row = (tmp_path / "o" / "w.csv").read_text().splitlines()
    assert header == "n0,n,mhat,sigma_hat,level,lower,upper"
    assert row.startswith("11,3,3,")


def test_config_error_exit(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"name": "x", "model": {"kind": "iid", "law": "rademacher"}, "typo": 1}')
    assert run_cli("tail", "--config", cfg, "--out", tmp_path, "--seed", 1) == 2
    assert run_cli("tail", "--config", tmp_path / "missing.json", "--out", tmp_path, "--seed", 1) == 2
    assert run_cli("tail", "--config", FIXTURES / "rademacher_tail.json", "--out", tmp_path) == 2


def test_runtime_error_exit(tmp_path):
    cfg = tmp_path / "det.json"
    cfg.write_text(json.dumps({
        "name": "det", "model": {"kind": "bpre", "environments": [{"weight": 1, "pmf": "2:1"}]},
        "n": 50, "x_grid": [1.0],
    }))
    assert run_cli("lnz-tail", "--config", cfg, "--out", tmp_path, "--seed", 1) == 3


def test_assert_exit(tmp_path):
    src = json.loads((FIXTURES / "rademacher_tail.json").read_text())
    src["expect"] = [5.0, 6.0]
    cfg = tmp_path / "e.json"
    cfg.write_text(json.dumps(src))
    assert run_cli("tail", "--config", cfg, "--out", tmp_path / "o", "--seed", 1) == 0
    assert run_cli("tail", "--config", cfg, "--out", tmp_path / "o", "--seed", 1, "--assert") == 4


@pytest.mark.parametrize("sub,body,files", [
    ("logratio", {"n": 100, "x_grid": [1, 2]}, ["e.csv"]),
    ("mdp", {"n": [50, 100], "a_values": [1, 2], "b": 1}, ["e.csv"]),
    ("ks", {"n": [16, 64], "replications": 2000}, ["e.csv"]),
    ("probe-a1", {"model": {"kind": "mds", "beta": 0.5}, "n": 50, "x_grid": [0.1, 0.2]}, ["e.csv"]),
])
def test_subcommands_write_tables(tmp_path, sub, body, files):
    obj = {"name": "e", "model": {"kind": "iid", "law": "rademacher"}, "replications": 5000}
    obj.update(body)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(obj))
    assert run_cli(sub, "--config", cfg, "--out", tmp_path / "o", "--seed", 3) == 0
    for f in files:
        assert (tmp_path / "o" / f).stat().st_size > 0


def test_bpre_sim_and_coverage(tmp_path):
    env = {"kind": "bpre", "environments": [{"weight": 0.5, "pmf": "1:0.5,2:0.5"}, {"weight": 0.5, "pmf": "3:1"}]}
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"name": "s", "model": env, "horizon": 8, "replications": 2}))
    assert run_cli("bpre-sim", "--config", cfg, "--out", tmp_path / "o", "--seed", 1) == 0
    lines = (tmp_path / "o" / "s_traj1.csv").read_text().splitlines()
    assert lines[0] == "generation,population" and lines[1] == "0,1" and len(lines) == 10
    cfg.write_text(json.dumps({"name": "c", "model": env, "n": 50, "replications": 3000, "level": 0.9}))
    assert run_cli("coverage", "--config", cfg, "--out", tmp_path / "o", "--seed", 1) == 0
    assert (tmp_path / "o" / "c.csv").read_text().startswith("level,coverage,lo,hi,R")


@pytest.mark.skipif(shutil.which("selfnorm-lab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["selfnorm-lab", "bpre-ci", "--config", str(FIXTURES / "doubling_ci.json"), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 3
    assert "zero sample variance" in proc.stderr


def test_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "selfnorm_lab", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bpre-ci" in proc.stdout
