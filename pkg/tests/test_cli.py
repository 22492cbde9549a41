import json

import pytest

from riccilab.cli import ScenarioConfig, compare_reports, main, run_scenario


def test_config_defaults_and_overrides():
    cfg = ScenarioConfig.for_scenario("sphere")
    assert cfg["scenario"] == "sphere"
    assert cfg["curve_nodes"] == 256
    cfg.set("seed", "17")
    assert cfg["seed"] == 17
    with pytest.raises(ValueError):
        cfg.set("nonsense", 1)
    with pytest.raises(ValueError):
        ScenarioConfig.for_scenario("torus")


def test_config_file_roundtrip(tmp_path):
    cfg = ScenarioConfig.for_scenario("gaussian")
    cfg.set("seed", 3)
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text(), encoding="utf-8")
    back = ScenarioConfig.from_file(path)
    assert back.values == cfg.values
    assert back.digest() == cfg.digest()


def test_config_env_override(monkeypatch):
    cfg = ScenarioConfig.for_scenario("gaussian")
    monkeypatch.setenv("RICCILAB_SEED", "42")
    cfg.apply_env()
    assert cfg["seed"] == 42


def test_config_parse_error(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("scenario gaussian\n", encoding="utf-8")
    with pytest.raises(ValueError):
        ScenarioConfig.from_file(bad)


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out.split()
    assert out == sorted(["sphere", "cylinder", "gaussian", "neckpinch"])


def test_unknown_check_rejected():
    cfg = ScenarioConfig.for_scenario("gaussian")
    cfg.values["checks"] = "no_such_check"
    with pytest.raises(ValueError):
        cfg.enabled_checks()


@pytest.fixture(scope="module")
def gaussian_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("gauss_a")
    cfg = ScenarioConfig.for_scenario("gaussian")
    report = run_scenario(cfg, out_dir=out)
    return report, out


def test_gaussian_scenario_passes(gaussian_report):
    report, out = gaussian_report
    assert report.all_passed
    assert (out / "report.json").exists()
    assert (out / "manifest.json").exists()
    assert (out / "reduced_volume.csv").exists()
    assert any(out.glob("snapshot_*.txt"))
    payload = json.loads((out / "report.json").read_text())
    assert payload["schema_version"] == 1
    for check in payload["checks"]:
        assert {"name", "status", "measured", "tolerance", "detail"} <= set(check)


def test_determinism_same_seed(gaussian_report, tmp_path):
    report_a, out_a = gaussian_report
    cfg = ScenarioConfig.for_scenario("gaussian")
    report_b = run_scenario(cfg, out_dir=tmp_path / "gauss_b")
    a = json.loads(report_a.to_json())
    b = json.loads(report_b.to_json())
    assert compare_reports(a, b) == {}
    assert report_a.to_json() == report_b.to_json()


def test_compare_flags_value_drift(gaussian_report):
    report, _ = gaussian_report
    a = json.loads(report.to_json())
    b = json.loads(report.to_json())
    b["values"]["theta"] = a["values"]["theta"] * 1.02
    diff = compare_reports(a, b)
    assert "theta" in diff


def test_compare_schema_mismatch(gaussian_report):
    report, _ = gaussian_report
    a = json.loads(report.to_json())
    b = json.loads(report.to_json())
    b["schema_version"] = 99
    with pytest.raises(ValueError):
        compare_reports(a, b)


def test_main_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 3\n", encoding="utf-8")
    code = main(["run", "gaussian", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2


def test_main_needs_scenario(capsys):
    assert main(["run"]) == 2


def test_main_compare_roundtrip(gaussian_report, tmp_path, capsys):
    _, out = gaussian_report
    code = main(["compare", str(out / "report.json"), str(out / "report.json")])
    assert code == 0
    assert json.loads(capsys.readouterr().out) == {}
