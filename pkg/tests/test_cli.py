import json
import subprocess
import sys

import pytest

from marisac.cli import main
from marisac.config import ScenarioConfig, save_config


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.json"
    save_config(ScenarioConfig(M=2, N=4, K=1, max_outer=3, position_grid=16), path)
    return path


def test_check(small_cfg, capsys):
    assert main(["check", "--config", str(small_cfg), "--seed", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["feasible"] and all(v <= 1e-6 for v in out["margins"].values())


def test_check_infeasible(tmp_path, capsys):
    path = tmp_path / "weak.json"
    save_config(ScenarioConfig(p0_dbm=-60.0), path)
    assert main(["check", "--config", str(path)]) == 1
    assert "infeasible" in capsys.readouterr().out


def test_bad_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"M": 0}')
    with pytest.raises(SystemExit):
        main(["check", "--config", str(path)])


def test_run_writes_tables(small_cfg, tmp_path, capsys):
    out = tmp_path / "res"
    rc = main(["run", "--config", str(small_cfg), "--sweep", "p0", "--values", "35,40",
               "--realizations", "1", "--seed", "0", "--out", str(out)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("axis,value,scheme") and len(lines) == 5
    assert (out / "summary.csv").exists() and (out / "beampattern.csv").exists()


def test_run_requires_values(small_cfg):
    with pytest.raises(SystemExit):
        main(["run", "--config", str(small_cfg), "--sweep", "m"])


def test_sweep_and_landscape(small_cfg, tmp_path):
    assert main(["sweep-beampattern", "--config", str(small_cfg), "--out", str(tmp_path), "--points", "11",
                 "--schemes", "fpa"]) == 0
    rows = (tmp_path / "beampattern_fpa.csv").read_text().splitlines()
    assert rows[0] == "theta_deg,gain" and len(rows) == 12
    assert main(["landscape", "--config", str(small_cfg), "--out", str(tmp_path), "--points", "5"]) == 0
    rows = (tmp_path / "landscape.csv").read_text().splitlines()
    assert rows[0] == "x,y,channel_gain" and len(rows) == 26


def test_module_entry_point(small_cfg):
    proc = subprocess.run([sys.executable, "-m", "marisac", "check", "--config", str(small_cfg)],
                          capture_output=True, text=True)
    assert proc.returncode in (0, 1) and proc.stdout
