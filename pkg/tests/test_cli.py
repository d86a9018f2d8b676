import csv
import shutil
import subprocess
import sys

import pytest

from toda_bloom.cli import ConfigError, RunConfig, main, parse_config, read_config_file


def run_cli(tmp_path, *args, sub="out"):
    out = tmp_path / sub
    code = main([*args, "--out", str(out)])
    return code, out


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_ansatz_command_outputs(tmp_path, capsys):
    code, out = run_cli(tmp_path, "ansatz", "--k", "2", "--lambda", "1e-4", "--mesh-n", "401")
    assert code == 0
    first, rows = read_rows(out / "ansatz.csv")
    assert first.startswith("# config-hash: ")
    deltas = [float(r["value"]) for r in rows if r["quantity_name"] == "delta"]
    assert len(deltas) == 2 and deltas[0] < deltas[1]
    assert (out / "ansatz_summary.txt").read_text().startswith("config-hash: ")
    gp = (out / "ansatz.gp").read_text()
    assert "ansatz.csv" in gp
    assert "verdict: pass" in capsys.readouterr().out


def test_solve_command(tmp_path):
    code, out = run_cli(tmp_path, "solve", "--k", "1", "--lambda", "1e-3")
    assert code == 0
    _, rows = read_rows(out / "solve.csv")
    mass = [r for r in rows if r["quantity_name"] == "mass"][0]
    assert abs(float(mass["relative_gap"])) < 1e-3


def test_solve_on_polygon(tmp_path):
    code, out = run_cli(
        tmp_path, "solve", "--domain", "polygon", "--vertices", "1,1;-1,1;-1,-1;1,-1",
        "--symmetry-order", "2", "--k", "1", "--lambda", "1e-3",
    )
    assert code == 0


def test_failing_verdict_exit_code(tmp_path):
    code, out = run_cli(tmp_path, "residual-scaling", "--k", "1", "--lambda-range", "1e-2:1e-4", "--jobs", "1")
    assert code == 2
    assert "verdict: fail" in (out / "residual_scaling_summary.txt").read_text()


def test_repeated_runs_are_byte_identical(tmp_path):
    args = ("theta-study", "--k", "2", "--lambda-range", "1e-3:1e-5", "--points-per-decade", "1")
    code_a, a = run_cli(tmp_path, *args, sub="a")
    code_b, b = run_cli(tmp_path, *args, "--jobs", "3", sub="b")
    assert code_a == code_b == 0
    for name in ("theta_study.csv", "theta_study_summary.txt", "theta_study.gp"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_kernel_and_integral_commands(tmp_path):
    assert run_cli(tmp_path, "kernel-check", "--alpha", "4", "--k", "2")[0] == 0
    code, out = run_cli(tmp_path, "integrals", "--alpha", "8")
    assert code == 0
    _, rows = read_rows(out / "integrals.csv")
    assert len(rows) == 3


def test_config_file_and_conflicts(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("# demo\nk = 2\nlambda = 1e-3\nmesh.n = 801\n")
    cfg = parse_config(["solve", "--config", str(cfg_path)], environ={})
    assert (cfg.k, cfg.lam, cfg.mesh_n) == (2, 1e-3, 801)
    # agreeing flag is fine, disagreeing flag is an error
    assert parse_config(["solve", "--config", str(cfg_path), "--k", "2"], environ={}).k == 2
    with pytest.raises(ConfigError, match="conflicts"):
        parse_config(["solve", "--config", str(cfg_path), "--k", "3"], environ={})
    cfg_path.write_text("k = 2\nbogus = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        read_config_file(cfg_path)
    cfg_path.write_text("k = 2\nk = 3\n")
    with pytest.raises(ConfigError, match="duplicate"):
        read_config_file(cfg_path)


def test_environment_sets_output_directory(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("TODA_BLOOM_OUT", str(target))
    assert main(["integrals", "--alpha", "2", "--out", str(tmp_path / "flag")]) == 0
    assert (target / "integrals.csv").exists()
    assert not (tmp_path / "flag").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--k", "0"],
        ["solve", "--lambda", "-1"],
        ["solve", "--k", "two"],
        ["solve", "--domain", "polygon", "--vertices", "1,1;2,2"],
        ["solve", "--mesh-kind", "sector"],
        ["residual-scaling", "--p", "2"],
        ["residual-scaling", "--lambda-range", "1e-3"],
        ["nonsense"],
    ],
)
def test_invalid_configuration_exits_1(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "lam" not in err.replace("lambda", "")


def test_config_hash_ignores_output_and_jobs():
    a = RunConfig("solve", out="x", jobs=1)
    b = RunConfig("solve", out="y", jobs=8)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != RunConfig("solve", k=2).config_hash()


@pytest.mark.skipif(shutil.which("toda-bloom") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["toda-bloom", "integrals", "--alpha", "4", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "toda_bloom.cli", "solve", "--k", "99"], capture_output=True, text=True)
    assert proc.returncode == 1
