import json

import numpy as np
import pytest

from lindqpt.cli import (
    EXIT_CAPACITY,
    EXIT_OK,
    EXIT_VALIDATION,
    ExperimentConfig,
    load_config,
    main,
    validate,
)
from lindqpt.errors import DomainError


def test_missing_loss_strength_is_a_validation_error(tmp_path, capsys):
    assert main(["--scenario", "two_band_rate", "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert "gamma_l" in capsys.readouterr().err


def test_capacity_exit_code(tmp_path):
    assert main(["--scenario", "many_body_flux", "--n-cells", "12", "--out", str(tmp_path)]) == EXIT_CAPACITY


def test_field_messages():
    msgs = validate(ExperimentConfig(scenario="two_band_rate", gamma_l=0.2, gamma_g=[-1.0], k_points=0))
    assert any(m.startswith("gamma_g:") for m in msgs)
    assert any(m.startswith("k_points:") for m in msgs)
    assert validate(ExperimentConfig(scenario="nope"))[0].startswith("scenario:")
    assert validate(ExperimentConfig(scenario="toy_cusp")) == []


def test_yaml_sections_and_overrides(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("scenario: two_band_rate\nmodel:\n  gamma_l: 0.2\ngrid:\n  k_points: 8\n  dt: 0.1\n")
    loaded = load_config(str(cfg), {"dt": 0.05})
    assert loaded.gamma_l == 0.2 and loaded.k_points == 8 and loaded.dt == 0.05
    cfg.write_text("scenario: toy_cusp\nbogus: 1\n")
    with pytest.raises(DomainError):
        load_config(str(cfg), {})


def test_toy_run_writes_tables_and_manifest(tmp_path):
    out = tmp_path / "toy"
    assert main(["--scenario", "toy_cusp", "--out", str(out), "--dt", "0.1"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"] == ["toy.csv"]
    assert manifest["report"]["G0"] == pytest.approx(-2 / np.pi)
    rows = np.loadtxt(out / "toy.csv", delimiter=",", skiprows=1)
    assert rows.shape == (21, 3)
    assert np.allclose(rows[:, 1], rows[:, 2], atol=1e-9)


def test_runs_are_byte_identical(tmp_path):
    args = ["--scenario", "two_band_rate", "--gamma-l", "0.2", "--k-points", "8", "--t-max", "0.5", "--dt", "0.05"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "rate.csv").read_bytes() == (tmp_path / "b" / "rate.csv").read_bytes()


def test_json_format_and_spectrum(tmp_path):
    out = tmp_path / "eigs"
    assert main(["--scenario", "liouvillian_spectrum", "--gamma-l", "0.2", "--k-points", "4", "--format", "json", "--out", str(out)]) == EXIT_OK
    data = json.loads((out / "spectrum.json").read_text())
    assert data["columns"] == ["k", "re", "im"]
    assert len(data["rows"]) == 5 * 6
    gap = json.loads((out / "manifest.json").read_text())["report"]["gap"]["k=1"]
    assert gap[0] == pytest.approx(-0.1)


def test_backflow_scenario(tmp_path):
    out = tmp_path / "bf"
    assert main(["--scenario", "backflow_check", "--gamma-l", "0.2", "--t-max", "1.0", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "manifest.json").read_text())["report"]
    assert report["min_real_part"] > 0
    assert report["vanishing_check"] is False


def test_small_many_body_run(tmp_path):
    out = tmp_path / "mb"
    args = ["--scenario", "many_body_flux", "--n-cells", "2", "--flux-samples", "2", "--t-max", "0.1",
            "--trajectories", "20", "--gamma-g", "0", "0.004", "--out", str(out)]
    assert main(args) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["report"]["engines"] == {"gamma_g=0": "nonhermitian", "gamma_g=0.004": "mcwf"}
