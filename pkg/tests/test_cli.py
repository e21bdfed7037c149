import json

import pytest

from membrane_lab.cli import main

BAD_GAMMA = """\
[coefficients]
sigma = [[1.0]]
beta = 1.0
gamma = -0.5

[membranes]
density = 1.0

[scaling]
epsilon = 0.1
"""


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(BAD_GAMMA)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "coefficients.gamma" in err and "line 4" in err


def test_unknown_scenario_is_config_error(tmp_path):
    assert main(["simulate", "--scenario", "nope", "--out", str(tmp_path)]) == 2


def test_ode_limit_writes_tables_and_figure(tmp_path, capsys):
    out = tmp_path / "ode"
    assert main(["ode-limit", "--scenario", "ode-degenerate", "--out", str(out)]) == 0
    assert "PASS" in capsys.readouterr().out
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["passed"] and verdict["kind"] == "degenerate"
    rows = [l for l in (out / "ode_path.csv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "t,x"
    assert float(rows[-1].split(",")[1]) == pytest.approx(1.0, abs=1e-12)
    assert (out / "ode_path.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_no_figures_flag(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", "exa1", "--paths", "50", "--eps", "0.4", "--no-figures",
                 "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"bundle.bin", "paths.csv", "summary.csv", "verdict.json", "run.log"} <= names
    assert not any(n.endswith(".png") for n in names)


def test_limit_sde_command(tmp_path):
    out = tmp_path / "lim"
    assert main(["sticky-sde", "--scenario", "exa2-sticky", "--paths", "200", "--out", str(out)]) == 0
    assert (out / "paths.png").exists()
    assert json.loads((out / "verdict.json").read_text())["passed"]


@pytest.mark.parametrize("threads", ["1", "4"])
def test_outputs_do_not_depend_on_threads(tmp_path, threads):
    ref = tmp_path / "ref"
    out = tmp_path / f"t{threads}"
    args = ["simulate", "--scenario", "exa2-sticky", "--paths", "64", "--eps", "0.2"]
    assert main(args + ["--threads", "3", "--out", str(ref)]) == 0
    assert main(args + ["--threads", threads, "--out", str(out)]) == 0
    for name in ("bundle.bin", "paths.csv", "summary.csv", "verdict.json", "paths.png"):
        assert (ref / name).read_bytes() == (out / name).read_bytes(), name
