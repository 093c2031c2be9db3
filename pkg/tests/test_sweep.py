import copy
import csv
import io
import math

import pytest

from chiralab.sweep import (CSV_COLUMNS, ConfigError, format_csv, load_config, parse_config, run_sweep, sequence,
                            write_atomic)

BASE = {
    "regime": "FreeS2",
    "n_values": [0, 1],
    "rules": {"d0": 0.04, "r": 0.5, "lambda_c": 0.2, "lambda_s": 1.0},
    "pins": {"left": [0.0, 0.0, 1.0], "right": [0.0, 1.0, 0.0]},
    "init": {"kind": "zero_cost", "rho": 4.0},
    "minimize": {"max_iters": 200},
    "seeds": [0, 1],
}

R_IV = {
    "regime": "R_iv",
    "n_values": [0, 1, 2],
    "rules": {"d0": 0.01, "r": 1.0 / math.sqrt(10.0), "lambda_c": math.sqrt(2.5), "lambda_s": 1.0,
              "mu_m0": 1.0 / math.sqrt(5.0), "mu_t": 1.5},
    "penalty": {"axes": [[0.0, 0.0, 1.0]]},
    "pins": {"left": [0.0, 0.0, 1.0], "right": [0.0, 0.0, -1.0]},
}


def _with(base, **changes):
    out = copy.deepcopy(base)
    for key, value in changes.items():
        if value is None:
            out.pop(key)
        else:
            out[key] = value
    return out


def test_parse_base():
    cfg = parse_config(BASE)
    assert cfg.regime == "FreeS2" and cfg.rho == 4.0 and cfg.seeds == [0, 1]
    params = sequence(cfg)
    assert params[0].delta == 0.04 and params[1].delta == 0.02
    assert abs(params[1].lam - 0.2 * 0.02) < 1e-18


@pytest.mark.parametrize("bad, match", [
    ({"regime": "R_v"}, "unknown regime"),
    ({"rules": None}, "missing key"),
    ({"n_values": [1, 0]}, "increasing"),
    ({"n_values": []}, "empty"),
    ({"n_values": ["a"]}, "bad value"),
    ({"rules": {"d0": 0.04, "r": 1.5, "lambda_c": 0.2, "lambda_s": 1.0}}, "decrease"),
    ({"rules": {"d0": 2.0, "r": 0.5, "lambda_c": 0.2, "lambda_s": 1.0}}, "invalid parameters"),
    ({"pins": {"left": [0.0, 0.0, 1.0]}}, "pins"),
    ({"pins": {"left": [0.0, 0.0, 0.0], "right": [0.0, 1.0, 0.0]}}, "nonzero"),
    ({"init": {"rho": 0.5}}, "rho"),
    ({"anneal": {"bogus": 1}}, "anneal"),
    ({"penalty": {"axes": [[1.0, 0.0]]}}, "penalty"),
])
def test_config_errors(bad, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(_with(BASE, **bad))


def test_regime_consistency():
    parse_config(R_IV)
    # the same rules do not describe R_ii (p beta grows instead of shrinking)
    with pytest.raises(ConfigError, match="R_ii"):
        parse_config(_with(R_IV, regime="R_ii"))
    with pytest.raises(ConfigError, match="R_i "):
        parse_config(_with(R_IV, regime="R_i"))
    with pytest.raises(ConfigError, match="mu_n"):
        rules = dict(R_IV["rules"], mu_m0=0.0)
        parse_config(_with(R_IV, rules=rules))
    with pytest.raises(ConfigError, match="penalty"):
        parse_config(_with(R_IV, penalty=None))
    with pytest.raises(ConfigError, match="two n values"):
        parse_config(_with(R_IV, n_values=[0]))


def test_critical_rule():
    rules = {"d0": 0.01, "r": 0.5, "lambda_c": 1.0, "lambda_s": 1.0, "mu_m0": math.sqrt(2.0), "mu_t": 2.0}
    cfg = parse_config(_with(R_IV, regime="R_iii", rules=rules))
    for p in sequence(cfg):
        assert abs(p.p * p.beta - 1.0) < 1e-12
    with pytest.raises(ConfigError, match="R_iv"):
        parse_config(_with(R_IV, rules=rules))


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    for name in ("r_i", "r_ii", "r_iii", "r_iv", "hardk", "frees2", "twod"):
        cfg = load_config(root / f"{name}.toml")
        assert cfg.output_path == f"{name}.csv"


def test_toml_syntax_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("regime = \n")
    with pytest.raises(ConfigError, match="bad.toml"):
        load_config(p)


def test_sweep_is_reproducible():
    cfg = parse_config(BASE)
    rows_a, _ = run_sweep(cfg)
    rows_b, _ = run_sweep(cfg)
    assert len(rows_a) == 4
    assert [r["run_id"] for r in rows_a] == ["FreeS2-n0-s0", "FreeS2-n0-s1", "FreeS2-n1-s0", "FreeS2-n1-s1"]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]
    assert strip(rows_a) == strip(rows_b)


def test_csv_schema():
    rows, ok = run_sweep(parse_config(_with(BASE, seeds=[0], n_values=[0])))
    text = format_csv(rows)
    reader = csv.DictReader(io.StringIO(text))
    assert tuple(reader.fieldnames) == CSV_COLUMNS
    (row,) = list(reader)
    assert float(row["energy_scaled"]) > 0
    assert row["converged"] in ("0", "1") and (row["converged"] == "1") == ok
    assert float(row["energy"]) == pytest.approx(float(row["energy_scaled"]) * math.sqrt(2) * float(row["lambda"])
                                                 * float(row["delta"]) ** 1.5, rel=1e-12)


def test_helix_regime_rows():
    rules = {"d0": 0.01, "r": 0.5, "lambda_c": 1.0, "lambda_s": 1.0, "mu_m0": 2.0 * math.sqrt(2.0), "mu_t": 2.5}
    cfg = parse_config({"regime": "R_i", "n_values": [0, 1], "rules": rules,
                        "penalty": {"axes": [[0.0, 0.0, 1.0]]}, "init": {"axis": [0.0, 0.0, 1.0]}})
    rows, ok = run_sweep(cfg)
    assert ok
    # a helix whose axis lies in Q_k pays nothing
    assert all(r["energy_scaled"] <= 1e-12 for r in rows)


def test_write_atomic(tmp_path):
    target = tmp_path / "out.csv"
    write_atomic(target, "a,b\n")
    assert target.read_text() == "a,b\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]
