import json
from pathlib import Path

import numpy as np
import pytest

from chiralab.cli import main
from chiralab.geometry import loads_chain
from chiralab.profiles import load_profile, tanh_profile, dumps_profile

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_energy_command(capsys):
    assert main(["energy", "--config", str(CONFIGS / "energy_helix.toml")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_sites"] == 1001
    assert out["Hsl"] <= 1e-12
    assert out["penalty"] > 0


def test_emit_profile_round_trip(tmp_path):
    out = tmp_path / "tanh.txt"
    assert main(["emit", "--config", str(CONFIGS / "emit_tanh.toml"), "--out", str(out)]) == 0
    lines = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert all(len(ln.split()) == 7 for ln in lines)
    prof = load_profile(out)
    ref = tanh_profile(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), 12.0, 1e-3)
    assert np.array_equal(prof.t, ref.t) and np.array_equal(prof.u, ref.u) and np.array_equal(prof.w, ref.w)
    assert out.read_text() == dumps_profile(prof)


def test_emit_chain_then_energy_from_file(tmp_path, capsys):
    cfg = _write(tmp_path, "chain.toml", "[model]\nlambda = 0.01\ndelta = 0.05\n\n"
                 "[chain]\nkind = \"helix\"\n\n[emit]\nwhat = \"chain\"\n")
    chain_path = tmp_path / "helix.txt"
    assert main(["emit", "--config", cfg, "--out", str(chain_path)]) == 0
    chain = loads_chain(chain_path.read_text())
    assert chain.n_sites == 101
    ecfg = _write(tmp_path, "e.toml", "[model]\nlambda = 0.01\ndelta = 0.05\n\n[chain]\nfile = \"helix.txt\"\n")
    capsys.readouterr()
    assert main(["energy", "--config", ecfg]) == 0
    assert json.loads(capsys.readouterr().out)["Hsl"] <= 1e-12


def test_malformed_chain_file(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("1 0 0\n0 1 0\n0 0 x\n")
    cfg = _write(tmp_path, "e.toml", "[model]\nlambda = 0.01\ndelta = 0.05\n\n[chain]\nfile = \"bad.txt\"\n")
    assert main(["energy", "--config", cfg]) == 1
    assert ":3" in capsys.readouterr().err


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["energy", "--config", str(tmp_path / "missing.toml")]) == 1
    cfg = _write(tmp_path, "e.toml", "[model]\nlambda = 0.01\n")
    assert main(["energy", "--config", cfg]) == 1
    assert "delta" in capsys.readouterr().err
    cfg = _write(tmp_path, "x.toml", "[emit]\nwhat = \"movie\"\n")
    assert main(["emit", "--config", cfg]) == 1
    assert main(["accept", "--only", "a,b"]) == 1
    assert main(["accept", "--only", "42"]) == 1
    assert main(["sweep", "--config", str(CONFIGS / "hardk.toml"), "--threads", "0"]) == 1


def test_usage_error_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["energy"])
    assert exc.value.code == 2


def test_sweep_rejection_writes_nothing(tmp_path):
    cfg = _write(tmp_path, "s.toml", "regime = \"R_ii\"\nn_values = [0, 1]\noutput = \"out.csv\"\n\n"
                 "[rules]\nd0 = 0.01\nr = 0.5\nlambda_c = 1.0\nlambda_s = 1.0\nmu_m0 = 1.0\nmu_t = 1.0\n\n"
                 "[penalty]\naxes = [[0.0, 0.0, 1.0]]\n\n[pins]\nleft = [0.0, 0.0, 1.0]\nright = [0.0, 0.0, -1.0]\n")
    out = tmp_path / "out.csv"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 1
    assert list(tmp_path.iterdir()) == [Path(cfg)]
    assert main(["sweep", "--config", str(CONFIGS / "hardk.toml"), "--out", str(tmp_path / "no" / "x.csv")]) == 1


def test_sweep_writes_csv(tmp_path):
    cfg = _write(tmp_path, "s.toml", "regime = \"FreeS2\"\nn_values = [0]\n\n"
                 "[rules]\nd0 = 0.04\nr = 0.5\nlambda_c = 0.2\nlambda_s = 1.0\n\n"
                 "[pins]\nleft = [0.0, 0.0, 1.0]\nright = [0.0, 1.0, 0.0]\n\n"
                 "[init]\nkind = \"zero_cost\"\nrho = 4.0\n\n[minimize]\nmax_iters = 5\n")
    out = tmp_path / "out.csv"
    code = main(["sweep", "--config", cfg, "--out", str(out), "--seed", "3"])
    assert code == 2  # five iterations cannot converge
    lines = out.read_text().splitlines()
    assert lines[0].startswith("run_id,regime,n,lambda")
    assert lines[1].startswith("FreeS2-n0-s3,")


def test_accept_only_filter(capsys):
    assert main(["accept", "--only", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 1 and "1/1 criteria passed" in out


def test_tolerance_override_forces_failure(monkeypatch, capsys):
    monkeypatch.setenv("CHIRALAB_TOL_OVERRIDE", "7=1e-20")
    assert main(["accept", "--only", "1,7"]) == 1
    out = capsys.readouterr().out
    assert "[PASS] 1." in out and "[FAIL] 7." in out
