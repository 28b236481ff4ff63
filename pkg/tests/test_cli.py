import json
import shutil
import subprocess

import pytest

from cavityeig import cli


def write_config(tmp_path, **overrides):
    cfg = {"grid": {"cells": 6}} | overrides
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def read_rows(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_solve_finds_cavity_values(tmp_path):
    cfg = write_config(tmp_path, grid={"cells": 10}, count=6)
    assert cli.run(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "spectrum.csv")
    maxwell = [float(r["sigma"]) for r in rows if r["type_tag"] == "Maxwell"]
    assert len(maxwell) == 6
    assert maxwell[0] == pytest.approx(2.0, rel=0.02)
    assert maxwell[3] == pytest.approx(3.0, rel=0.05)


def test_classify_writes_tags(tmp_path):
    cfg = write_config(tmp_path, tau=1.5, count=6)
    assert cli.run(["classify", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "tagged.csv")
    assert [r["tag"] for r in rows] == ["Maxwell"] * 5 + ["Gradient"]


def test_grad_check_passes_on_default(tmp_path):
    assert cli.run(["grad-check", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "grad_check.json").read_text())
    assert summary["best_rel_err"] <= 1e-4


def test_auchmuty_command(tmp_path):
    cfg = write_config(tmp_path, grid={"cells": 4}, auchmuty={"M": [0, 2], "restarts": 2})
    assert cli.run(["auchmuty", "--config", cfg, "--out", str(tmp_path)]) == 0
    reports = json.loads((tmp_path / "auchmuty.json").read_text())
    assert [r["M"] for r in reports] == [0, 2]


def test_auchmuty_property_violation(tmp_path):
    cfg = write_config(tmp_path, grid={"cells": 4}, auchmuty={"M": [0], "restarts": 1, "tol": 1e-300})
    assert cli.run(["auchmuty", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_optimize_command(tmp_path):
    cfg = write_config(
        tmp_path,
        grid={"cells": 4},
        eps={"kind": "random", "bounds": {"alpha": 0.5, "beta": 2.0, "gamma": 50.0}},
        spec={"F": [1], "s": 1},
        optimize={"mode": "minimize", "bounds": {"alpha": 0.5, "beta": 2.0, "gamma": 50.0}, "max_iters": 2},
    )
    code = cli.run(["optimize", "--config", cfg, "--out", str(tmp_path), "--seed", "3"])
    assert code in (0, 3)
    assert (tmp_path / "trajectory.csv").exists() and (tmp_path / "final_eps.json").exists()


def test_cluster_at_start_is_numerical_failure(tmp_path, capsys):
    cfg = write_config(tmp_path, grid={"cells": 4}, spec={"F": [1], "s": 1})
    assert cli.run(["grad-check", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "[spectral]" in capsys.readouterr().err
    assert cli.run(["optimize", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_experiment_commands(tmp_path):
    cfg = write_config(
        tmp_path,
        grid={"cells": 4},
        experiment={"continuity": {"k": [1, 2], "j_max": 3}, "bound": {"samples": 2, "j_max": 3},
                    "splitting": {"meshes": [4], "cutoff": 6.0}},
    )
    for name in ("continuity", "bound", "splitting"):
        assert cli.run(["experiment", name, "--config", cfg, "--out", str(tmp_path)]) == 0
        assert (tmp_path / f"{name}.csv").exists() and (tmp_path / f"{name}.json").exists()


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"grid": {"cells": 4},\n "count": }')
    assert cli.run(["solve", "--config", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    schema = write_config(tmp_path, count=0)
    assert cli.run(["solve", "--config", schema]) == 1
    assert cli.run(["solve", "--config", str(tmp_path / "missing.json")]) == 1
    assert cli.run(["experiment", "--out", str(tmp_path)]) == 1
    assert cli.run(["solve", "extra"]) == 1
    with pytest.raises(SystemExit):
        cli.run(["launch"])


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.run(["solve", "--dry-run", "--out", str(out)]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["command"] == "solve" and plan["config"]["grid"]["cells"] == 6
    assert not out.exists()


def test_outputs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, eps={"kind": "random", "bounds": {"alpha": 0.5, "beta": 2.0, "gamma": 50.0}})
    for d in ("a", "b"):
        assert cli.run(["solve", "--config", cfg, "--out", str(tmp_path / d), "--seed", "5", "--threads", "1"]) == 0
    assert (tmp_path / "a" / "spectrum.csv").read_bytes() == (tmp_path / "b" / "spectrum.csv").read_bytes()


@pytest.mark.skipif(shutil.which("cavityeig") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["cavityeig", "solve", "--dry-run"], capture_output=True, text=True)
    assert proc.returncode == 0 and '"command": "solve"' in proc.stdout
