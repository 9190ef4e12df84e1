import json
import subprocess
import sys

import pytest

from ergodens.cli import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, load_config, main, parse_config
from ergodens.errors import ConfigError

BASE = """\
seed = 7
out = "unused"

[model]
family = "affine"
n = 1
mu0 = [2.0]
mu_diag = [1.0]
sigma_diag = [1.0]

[barrier]
family = "power_exp"
beta = [{beta}]
gamma = [0.5]

[cube]
lower = [0.1]
upper = [12.0]

[sde]
x0 = [1.0]
dt = 0.01
T = 2.0
paths = {paths}

[fpe]
nodes = 300
dt = 0.05
T = 8.0
trace_stride = 4
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, command, text, out="out", extra=()):
    cfg = write(tmp_path, text)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def test_certify_pass(tmp_path, capsys):
    assert run(tmp_path, "certify", BASE.format(beta=0.5, paths=10)) == EXIT_PASS
    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    assert cert["status"] == "pass" and cert["gronwall_C"] > 0
    assert "Gronwall constant" in capsys.readouterr().out


def test_certify_fail_reports_witness(tmp_path):
    assert run(tmp_path, "certify", BASE.format(beta=3.5, paths=10)) == EXIT_FAIL
    cert = json.loads((tmp_path / "out" / "certificate.json").read_text())
    c1 = cert["conditions"]["condition1"]
    assert not c1["satisfied"] and c1["witness"][0] < 1e-3


def test_missing_key_named(tmp_path, capsys):
    text = BASE.format(beta=0.5, paths=10).replace("sigma_diag = [1.0]\n", "")
    assert run(tmp_path, "certify", text) == EXIT_ERROR
    assert "sigma_diag" in capsys.readouterr().err


def test_unknown_key_is_line_anchored():
    text = BASE.format(beta=0.5, paths=10).replace("T = 2.0", "T = 2.0\nhorizon = 3")
    with pytest.raises(ConfigError) as info:
        parse_config(text, "x.toml")
    line = text.splitlines().index("horizon = 3") + 1
    assert "horizon" in str(info.value) and f"line {line}" in str(info.value)


@pytest.mark.parametrize("old,new,word", [
    ('family = "affine"', 'family = "heston"', "family"),
    ("paths = 10", "paths = -1", "paths"),
    ("lower = [0.1]", "lower = [0.1, 0.2]", "cube"),
    ('beta = [0.5]', 'beta = "half"', "beta"),
])
def test_bad_values_rejected(old, new, word):
    text = BASE.format(beta=0.5, paths=10).replace(old, new)
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert word in str(info.value)


def test_toml_syntax_error():
    with pytest.raises(ConfigError):
        parse_config("[model\nfamily = 1")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    assert main(["certify", "--config", str(tmp_path / "nope.toml")]) == EXIT_ERROR


def test_simulate_small_run_and_determinism(tmp_path):
    text = BASE.format(beta=0.5, paths=10)
    assert run(tmp_path, "simulate", text, "a") == EXIT_PASS
    assert run(tmp_path, "simulate", text, "b") == EXIT_PASS
    for name in ("F_trace.csv", "assumption3_trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(tmp_path, "simulate", text, "c", ["--seed", "8"]) == EXIT_PASS
    assert (tmp_path / "a" / "F_trace.csv").read_bytes() != (tmp_path / "c" / "F_trace.csv").read_bytes()
    rep = json.loads((tmp_path / "a" / "simulate_report.json").read_text())
    assert rep["envelope"]["passed"] and rep["assumption3"]["advisory"] is False


def test_threads_flag_does_not_change_output(tmp_path):
    text = BASE.format(beta=0.5, paths=40).replace("paths = 40", "paths = 40\nblock = 8")
    run(tmp_path, "simulate", text, "a")
    run(tmp_path, "simulate", text, "b", ["--threads", "3"])
    assert (tmp_path / "a" / "F_trace.csv").read_bytes() == (tmp_path / "b" / "F_trace.csv").read_bytes()


def test_simulate_without_certificate_fails(tmp_path):
    assert run(tmp_path, "simulate", BASE.format(beta=3.5, paths=10)) == EXIT_FAIL


def test_fpe_run_and_manifest(tmp_path):
    assert run(tmp_path, "fpe", BASE.format(beta=0.5, paths=10)) == EXIT_PASS
    out = tmp_path / "out"
    rep = json.loads((out / "fpe_report.json").read_text())
    assert rep["plateau"]["passed"] and rep["mass_deviation"] < 1e-6
    assert "stationary_sup_error" in rep
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "fpe" and man["seed"] == 7 and len(man["config_sha256"]) == 64
    assert man["outputs"] == ["final_field.csv", "fpe_report.json", "fpe_trace.csv"]
    assert {"ergodens", "numpy", "scipy", "python"} <= set(man["versions"])
    assert man["wall_time_s"] >= 0


def test_fpe_bump(tmp_path):
    text = BASE.format(beta=0.5, paths=10).replace(
        "T = 8.0", 'T = 1.0\ninitial = "bump"\nx0 = [1.0]\nwidth = 0.25').replace("dt = 0.05", "dt = 0.005")
    text = text.replace("nodes = 300", "nodes = 400")
    assert run(tmp_path, "fpe", text) == EXIT_PASS
    rep = json.loads((tmp_path / "out" / "fpe_report.json").read_text())
    assert rep["shorttime"]["passed"] and rep["transition_sup_error"] < 5e-2
    assert "stationary_sup_error" not in rep


def test_all_skips_missing_tables(tmp_path):
    text = BASE.format(beta=0.5, paths=10).split("[sde]")[0]
    assert run(tmp_path, "all", text) == EXIT_PASS
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["outputs"] == ["certificate.json"]


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, BASE.format(beta=0.5, paths=10))
    res = subprocess.run([sys.executable, "-m", "ergodens", "certify", "--config", str(cfg),
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0 and "certificate: pass" in res.stdout


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.toml"))
    assert len(files) >= 4
    for f in files:
        load_config(f)
