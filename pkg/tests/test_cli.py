import json

import pytest

from quditkit.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, SCHEMAS, main


def _run(tmp_path, command, cfg, *extra):
    cfg_path = tmp_path / f"{command}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    return main([command, "--config", str(cfg_path), "--out", str(out), *extra]), out


def _stderr_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_every_schema_rejects_unknown_keys():
    for name, schema in SCHEMAS.items():
        assert schema["additionalProperties"] is False, name
        assert {"seed", "output_path", "device_spec_path"} <= set(schema["properties"])


def test_unknown_key_exits_2_without_outputs(tmp_path, capsys):
    code, out = _run(tmp_path, "displace-scan", {"d": 3, "extra": 1})
    assert code == EXIT_CONFIG
    assert not out.exists()
    err = _stderr_json(capsys)
    assert err["error"] == "config" and err["exit_code"] == 2


def test_type_errors_exit_2(tmp_path):
    assert _run(tmp_path, "rb", {"d": 3, "q": 2.0})[0] == EXIT_CONFIG
    assert _run(tmp_path, "decompose", {"d": "three"})[0] == EXIT_CONFIG


def test_missing_and_malformed_config(tmp_path, capsys):
    assert main(["budget", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["budget", "--config", str(bad)]) == EXIT_CONFIG
    assert _stderr_json(capsys)["error"] == "config"


def test_semantic_config_error(tmp_path):
    code, out = _run(tmp_path, "wigner-scan", {"d": 3, "state": "fock", "level": 7})
    assert code == EXIT_CONFIG and not out.exists()


def test_numerical_failure_exits_3(tmp_path, capsys):
    code, out = _run(tmp_path, "wigner-scan", {"d": 4, "n_theta": 2, "n_phi": 2})
    assert code == EXIT_NUMERIC
    assert not out.exists()
    assert _stderr_json(capsys)["error"] == "numerical"


def test_bad_device_spec_path(tmp_path):
    code, _ = _run(tmp_path, "pulse-optimize", {"d": 3, "T_ns": 40, "device_spec_path": str(tmp_path / "x.json")})
    assert code == EXIT_CONFIG


def test_threads_flag_and_env(tmp_path, monkeypatch):
    assert _run(tmp_path, "displace-scan", {"d": 3}, "--threads", "0")[0] == EXIT_CONFIG
    monkeypatch.setenv("QUDITKIT_THREADS", "1")
    assert _run(tmp_path, "displace-scan", {"d": 3})[0] == EXIT_OK


def test_displace_scan_outputs(tmp_path):
    code, out = _run(tmp_path, "displace-scan", {"d": 4, "points": 5})
    assert code == EXIT_OK
    rows = (out / "displace_scan.csv").read_text().splitlines()
    assert rows[0] == "theta,p0,p1,p2,p3,jz"
    assert len(rows) == 6
    manifest = json.loads((out / "plot_manifest.json").read_text())
    assert manifest["plots"][0]["data"] == "displace_scan.csv"


def test_seed_flag_overrides_config(tmp_path):
    base = {"d": 3, "state": "random_mixed", "seed": 1}
    _, out = _run(tmp_path, "wigner-scan", base)
    a = (out / "wigner.csv").read_text()
    _run(tmp_path, "wigner-scan", base, "--seed", "2")
    b = (out / "wigner.csv").read_text()
    _run(tmp_path, "wigner-scan", {**base, "seed": 2})
    c = (out / "wigner.csv").read_text()
    assert a != b and b == c


def test_budget_prediction_file(tmp_path):
    code, out = _run(tmp_path, "budget", {"q_values": [1e6]})
    assert code == EXIT_OK
    pred = json.loads((out / "prediction.json").read_text())
    assert set(pred["by_d"]) == {"3", "5", "8"}
    assert pred["Q"] == pytest.approx(4.896 * 460e3)


def test_output_path_from_config(tmp_path):
    cfg = tmp_path / "c.json"
    target = tmp_path / "from_config"
    cfg.write_text(json.dumps({"d": 2, "output_path": str(target)}))
    assert main(["displace-scan", "--config", str(cfg)]) == EXIT_OK
    assert (target / "displace_scan.csv").exists()
