"""Config validation, check registry, battery runs, CLI exit codes."""
import copy
import json
import os

import pytest

from divlab import (REGISTRY, CompareError, ConfigError, ExperimentConfig,
                    compare_reports, run_config)
from divlab.cli import main as cli_main


def tiny_dict(**over):
    base = {
        "name": "tiny",
        "grid": {"box": [[-3.0, 3.0]], "nx": [41], "nt": 16, "horizon": 0.1},
        "ensemble": {"n_paths": 64, "seed": 5},
        "max_level": 3,
        "checks": ["ellipticity", "kernel-mass", "chapman",
                   "marginal-consistency", "pv-alpha", "star-identity"],
    }
    base.update(over)
    return base


# ---------------------------------------------------------------------------
# config validation


def test_config_parses_and_resolves():
    cfg = ExperimentConfig.from_dict(tiny_dict())
    assert cfg.d == 1
    assert cfg.resolve_checks() == ["ellipticity", "kernel-mass", "chapman",
                                    "marginal-consistency", "pv-alpha",
                                    "star-identity"]


def test_config_requires_explicit_seed():
    raw = tiny_dict()
    del raw["ensemble"]["seed"]
    with pytest.raises(ConfigError, match="seed-required"):
        ExperimentConfig.from_dict(raw)


def test_config_missing_section():
    raw = tiny_dict()
    del raw["grid"]
    with pytest.raises(ConfigError, match="missing-field"):
        ExperimentConfig.from_dict(raw)


def test_config_rejects_deep_partitions():
    raw = tiny_dict(max_level=7)
    raw["grid"]["nt"] = 50
    with pytest.raises(ConfigError, match="partition-depth"):
        ExperimentConfig.from_dict(raw)


def test_config_rejects_large_diffusion_step():
    raw = tiny_dict()
    raw["grid"]["nt"] = 8
    raw["grid"]["horizon"] = 8.0
    raw["max_level"] = 3
    with pytest.raises(ConfigError, match="step-diffusion-length"):
        ExperimentConfig.from_dict(raw)


def test_config_rejects_start_outside_box():
    raw = tiny_dict(start=[7.0])
    with pytest.raises(ConfigError, match="start-outside-box"):
        ExperimentConfig.from_dict(raw)


def test_config_rejects_nonintegrable_weight():
    raw = tiny_dict(weight_alpha=0.25)
    with pytest.raises(ConfigError, match="weight-integrability"):
        ExperimentConfig.from_dict(raw)


def test_config_rejects_unknown_check():
    raw = tiny_dict(checks=["no-such-check"])
    with pytest.raises(ConfigError, match="check-unknown"):
        ExperimentConfig.from_dict(raw)


def test_config_rejects_inapplicable_check():
    # the corner construction only exists on the line
    raw = tiny_dict(checks=["tanaka-revuz"])
    raw["grid"] = {"box": [[-3.0, 3.0], [-3.0, 3.0]], "nx": [21, 21],
                   "nt": 16, "horizon": 0.1}
    raw["start"] = [0.0, 0.0]
    with pytest.raises(ConfigError, match="check-applicability"):
        ExperimentConfig.from_dict(raw)


def test_default_battery_filters_by_dimension():
    raw = tiny_dict(checks=["default"])
    cfg = ExperimentConfig.from_dict(raw)
    names = cfg.resolve_checks()
    assert "tanaka-revuz" in names
    raw2 = tiny_dict(checks=["default"])
    raw2["grid"] = {"box": [[-3.0, 3.0], [-3.0, 3.0]], "nx": [21, 21],
                    "nt": 16, "horizon": 0.1}
    raw2["start"] = [0.0, 0.0]
    names2 = ExperimentConfig.from_dict(raw2).resolve_checks()
    assert "tanaka-revuz" not in names2
    assert set(names2) <= set(names) | set(REGISTRY)


def test_registry_order_is_stage_sorted():
    raw = tiny_dict(checks=["star-identity", "ellipticity"])
    cfg = ExperimentConfig.from_dict(raw)
    assert cfg.resolve_checks() == ["ellipticity", "star-identity"]


# ---------------------------------------------------------------------------
# battery execution


def test_run_reports_and_artifacts_are_reproducible(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_dict())
    d1, d2 = str(tmp_path / "r1"), str(tmp_path / "r2")
    rep1 = run_config(cfg, out_dir=d1)
    rep2 = run_config(cfg, out_dir=d2)
    assert rep1["passed"] and rep2["passed"]
    for fname in os.listdir(d1):
        if fname.endswith(".csv"):
            b1 = open(os.path.join(d1, fname), "rb").read()
            b2 = open(os.path.join(d2, fname), "rb").read()
            assert b1 == b2, f"{fname} differs between identical runs"
    digests1 = [c["digest"] for c in rep1["checks"]]
    digests2 = [c["digest"] for c in rep2["checks"]]
    assert digests1 == digests2


def test_empty_battery_is_a_passing_run():
    cfg = ExperimentConfig.from_dict(tiny_dict(checks=[]))
    rep = run_config(cfg)
    assert rep["checks"] == [] and rep["passed"]


def test_run_only_filter():
    cfg = ExperimentConfig.from_dict(tiny_dict())
    rep = run_config(cfg, only=["chapman"])
    assert [c["name"] for c in rep["checks"]] == ["chapman"]
    with pytest.raises(ConfigError, match="check-unknown"):
        run_config(cfg, only=["nonsense"])


def test_crashing_check_is_a_failed_check(monkeypatch):
    import dataclasses

    def boom(ctx):
        raise RuntimeError("synthetic fault")

    monkeypatch.setitem(REGISTRY, "chapman",
                        dataclasses.replace(REGISTRY["chapman"], fn=boom))
    cfg = ExperimentConfig.from_dict(tiny_dict(checks=["chapman"]))
    rep = run_config(cfg)
    assert not rep["passed"]
    assert "synthetic fault" in rep["checks"][0]["message"]


# ---------------------------------------------------------------------------
# CLI


def _write_config(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def test_cli_run_passing_battery(tmp_path, capsys):
    path = _write_config(tmp_path, tiny_dict())
    code = cli_main(["run", path, "--out", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert code == 0
    assert "[PASS] chapman" in out
    assert "0 failed" in out


def test_cli_run_failing_battery(tmp_path, capsys):
    raw = {
        "name": "coarse",
        "grid": {"box": [[-5.0, 5.0]], "nx": [17], "nt": 16, "horizon": 1.0},
        "ensemble": {"n_paths": 32, "seed": 5},
        "max_level": 3,
        "checks": ["kernel-oracle"],
    }
    code = cli_main(["run", _write_config(tmp_path, raw)])
    out = capsys.readouterr().out
    assert code == 1
    assert "[FAIL] kernel-oracle" in out


def test_cli_run_bad_config_exits_two(tmp_path, capsys):
    raw = tiny_dict()
    del raw["ensemble"]["seed"]
    code = cli_main(["run", _write_config(tmp_path, raw)])
    assert code == 2
    assert "config error" in capsys.readouterr().err
    code = cli_main(["run", str(tmp_path / "missing.json")])
    assert code == 2


def test_cli_compare_flow(tmp_path, capsys):
    path = _write_config(tmp_path, tiny_dict())
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli_main(["run", path, "--out", a]) == 0
    assert cli_main(["run", path, "--out", b]) == 0
    capsys.readouterr()
    assert cli_main(["compare", a, b]) == 0
    assert "0 regressions" in capsys.readouterr().out

    # doctor a pass into a failure: that is a regression, exit 1
    rb = json.load(open(os.path.join(b, "report.json")))
    rb["checks"][0]["passed"] = False
    json.dump(rb, open(os.path.join(b, "report.json"), "w"))
    assert cli_main(["compare", a, b]) == 1
    assert "REGRESSION" in capsys.readouterr().out


def test_cli_compare_battery_mismatch(tmp_path, capsys):
    path1 = _write_config(tmp_path, tiny_dict(), "c1.json")
    path2 = _write_config(tmp_path, tiny_dict(checks=["chapman"]), "c2.json")
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert cli_main(["run", path1, "--out", a]) == 0
    assert cli_main(["run", path2, "--out", b]) == 0
    capsys.readouterr()
    assert cli_main(["compare", a, b]) == 2
    assert "battery mismatch" in capsys.readouterr().err


def test_cli_list_checks(capsys):
    assert cli_main(["list-checks"]) == 0
    out = capsys.readouterr().out
    for name in REGISTRY:
        assert name in out
    assert "stage" in out


def test_compare_reports_identical_flag(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_dict(checks=["chapman"]))
    rep = run_config(cfg)
    again = copy.deepcopy(rep)
    out = compare_reports(rep, again)
    assert out["identical"] and out["regressions"] == 0
    with pytest.raises(CompareError):
        compare_reports(rep, {"checks": [{"name": "other"}]})
