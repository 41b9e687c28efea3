import json

import pytest
import yaml

from zaremba_pl.cli import main, resolve_config, shipped_configs
from zaremba_pl.config import ConfigError, ExperimentConfig
from zaremba_pl.harness import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_STAGE, clean, csv_text, dumps, execute

from conftest import load_shipped


def _raw(name="cylinder_decay"):
    return yaml.safe_load(resolve_config(name).read_text())


def _write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


@pytest.mark.parametrize("name", shipped_configs())
def test_effective_config_round_trip(tmp_path, name):
    cfg = load_shipped(name)
    p = tmp_path / "eff.yaml"
    p.write_text(cfg.dump())
    again = ExperimentConfig.load(p)
    assert again == cfg and again.digest() == cfg.digest()


def test_rejects_q_at_quarter_a():
    raw = _raw()
    raw["layers"]["q"] = 0.375
    with pytest.raises(ConfigError, match="a/4"):
        ExperimentConfig(raw)


def test_rejects_unknown_key():
    raw = _raw()
    raw["solver"]["stepsize"] = 0.1
    with pytest.raises(ConfigError, match="stepsize"):
        ExperimentConfig(raw)


def test_rejects_window_outside_span():
    raw = _raw()
    raw["window"] = [3, 14]
    with pytest.raises(ConfigError):
        ExperimentConfig(raw)


def test_flags_large_radius_factor():
    raw = _raw()
    raw["domain"]["obstacles"]["periodic"]["radius_factor"] = 0.6
    with pytest.warns(UserWarning, match="2c > 1"):
        cfg = ExperimentConfig(raw)
    assert cfg.flags


def test_serialization_is_canonical():
    assert clean({"b": float("inf"), "a": (1, 2)}) == {"b": "inf", "a": [1, 2]}
    assert dumps({"b": 1, "a": 2}).index('"a"') < dumps({"b": 1, "a": 2}).index('"b"')
    assert csv_text([["x"], [0.1]]) == "x\n0.1\n"


def test_constants_cli(tmp_path, capsys):
    assert main(["constants", "constants_example", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "eta1" in out
    rows = json.loads((tmp_path / "constants.json").read_text())["constants"]
    first = [r for r in rows if r["s"] == 1.0][0]
    assert first["eta1"] == pytest.approx(1 / 3) and first["lam"] == pytest.approx(0.25)
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["status"] == "ok"


def test_constants_cli_overrides(tmp_path):
    assert main(["constants", "constants_example", "--out", str(tmp_path), "--a", "3", "--q", "0.5", "--N0", "1", "--s", "2"]) == EXIT_OK
    rows = json.loads((tmp_path / "constants.json").read_text())["constants"]
    assert len(rows) == 1 and rows[0]["lam"] == pytest.approx(1 / 3)


def test_exit_codes(tmp_path):
    assert main(["constants", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("layers: [1, 2\n")
    assert main(["constants", str(bad)]) == EXIT_CONFIG
    assert main(["constants", "constants_example", "--out", "/proc/zpl-no-such-dir"]) == EXIT_IO
    raw = {"name": "narrow", "domain": {"base": {"kind": "ball", "radius": 0.3}}, "layers": {"J": 8, "rho": 1.0, "a": 3.5, "q": 0.2, "N0": 1}, "admissibility": {"window": [2, 5], "n_xi": 8, "n_gamma": 16}}
    path = str(_write(tmp_path, raw))
    # the standalone command reports; the pipeline refuses to continue
    assert main(["admissibility", path, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert json.loads((tmp_path / "a" / "admissibility.json").read_text())["status"] == "not-admissible"
    assert main(["run", path, "--out", str(tmp_path / "r")]) == EXIT_STAGE
    manifest = json.loads((tmp_path / "r" / "run_manifest.json").read_text())
    assert manifest["status"] == "failed" and "condition (A)" in manifest["message"]


def test_print_effective_config(capsys):
    assert main(["solve", "cylinder_decay", "--print-effective-config", "--seed", "9"]) == EXIT_OK
    eff = yaml.safe_load(capsys.readouterr().out)
    assert eff["seed"] == 9 and eff["solver"]["h"] == 0.1


def test_list_configs(capsys):
    assert main(["--list-configs"]) == EXIT_OK
    assert "cylinder_decay" in capsys.readouterr().out.split()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ZPL_OUTPUT_ROOT", str(tmp_path))
    cfg = load_shipped("constants_example")
    assert cfg.output_dir() == tmp_path / "runs" / "constants_example"
    assert main(["constants", "constants_example"]) == EXIT_OK
    assert (tmp_path / "runs" / "constants_example" / "constants.csv").exists()


def test_manifest_checksums(tmp_path):
    import hashlib

    status, manifest = execute("asymptotics", load_shipped("asymptotics_degenerate"), tmp_path)
    assert status == EXIT_OK
    for name, digest in manifest.files.items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
