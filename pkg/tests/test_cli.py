import json
import subprocess
import sys

import numpy as np
import pytest

from demon_lab.cli.config import config_from_preset, emit, load_config, parse_settings
from demon_lab.cli.main import main
from demon_lab.cli.output import content_hash, read_csv
from demon_lab.errors import ConfigError


def test_fig2_preset_values():
    cfg = config_from_preset("fig2")
    assert cfg.cycles == 10 and cfg.samples == 7000
    assert (cfg.measurement.delta0, cfg.measurement.delta1) == (0.089, 0.430)
    assert cfg.feedback_order == 1
    assert cfg.meta["bath"]["varphi"] == 0.133


def test_fig3k2_preset_values():
    cfg = config_from_preset("fig3k2")
    assert (cfg.measurement.delta0, cfg.measurement.delta1) == (0.157, 0.513)
    assert cfg.feedback_order == 2 and cfg.samples == 10000
    assert dict(cfg.meta["bath"]) == {"varphi": 0.151, "phi": 0.269, "alpha": 1.02e-2, "beta": 0.0}


@pytest.mark.parametrize("name", ["fig2", "fig3k1", "fig3k4", "fig4k3"])
def test_round_trip(name, tmp_path):
    cfg = config_from_preset(name)
    path = tmp_path / "c.ini"
    path.write_text(emit(cfg))
    again = load_config(path)
    assert emit(again) == emit(cfg)
    np.testing.assert_array_equal(again.measurement_array, cfg.measurement_array)
    for w in cfg.feedback:
        np.testing.assert_array_equal(again.feedback[w].operators, cfg.feedback[w].operators)


def test_doubled_angle_convention():
    base = "[experiment]\npreset = fig2\n"
    bloch = parse_settings(base)
    doubled = parse_settings(base + "angle_convention = doubled\n")
    from demon_lab.cli.config import build_config
    from demon_lab.channels import make_bath_channel
    ref = make_bath_channel(2 * 0.133 * np.pi, 2 * 0.280 * np.pi, 1.06e-2)
    got = build_config(doubled).bath
    np.testing.assert_allclose(got.operators, ref.operators)
    assert build_config(bloch).bath is not None


@pytest.mark.parametrize("text, key, line", [
    ("[experiment]\npreset = fig2\n[measurement]\ndelta0 = 1.2\n", "delta0", 4),
    ("[experiment]\npreset = fig2\ncolour = red\n", "colour", 3),
    ("[experiment]\npreset = fig2\n[policy]\nkind = sideways\n", "kind", 4),
    ("[experiment]\npreset = fig2\ncycles = two\n", "cycles", 3),
])
def test_schema_errors_name_line_and_key(text, key, line):
    with pytest.raises(ConfigError) as err:
        parse_settings(text)
    assert err.value.key == key and err.value.line == line


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_settings("[experiment]\npreset = fig2\n[extras]\nx = 1\n")


def test_calibration_section_sets_readout_errors():
    text = ("[experiment]\ncycles = 2\n[calibration]\nmu_down = 0.5\nmu_up = 5\nthreshold = 1\n"
            "[policy]\nkind = ground\n[bath]\nvarphi = 0.1\nphi = 0.2\nalpha = 0.01\n")
    from demon_lab.cli.config import build_config
    cfg = build_config(parse_settings(text))
    assert cfg.measurement.delta0 == pytest.approx(0.393469, abs=1e-6)


def test_content_hash_matches_git_blob_hash():
    assert content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_ft_command_coarse(tmp_path):
    code = main(["ft", "--config", "fig4k3", "--out", str(tmp_path), "--mode", "coarse", "--k", "3"])
    assert code == 0
    header, rows = read_csv(tmp_path / "ft.csv")
    assert header == ["cycle", "expectation", "normalization"]
    assert all(abs(float(r[1]) - 1) <= 1e-8 for r in rows)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["passed"] and manifest["files"] == ["ft.csv"]


def test_reproduce_fig2_panels(tmp_path):
    assert main(["reproduce", "fig2", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "fig2_panels.csv")
    assert header[1:] == ["sigma", "neg_i_te", "neg_i_qct", "exp_sigma", "exp_sigma_te", "exp_sigma_qct"]
    assert len(rows) == 10


def test_reproduce_fig3_panels(tmp_path):
    assert main(["reproduce", "fig3", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "fig3_panels.csv")
    assert header == ["cycle", "k", "p1", "efficiency"] and len(rows) == 40


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\npreset = fig2\n[measurement]\ndelta0 = 1.2\n")
    assert main(["ensemble", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_classical_check_command(tmp_path):
    assert main(["classical-check", "--out", str(tmp_path)]) == 0
    _, rows = read_csv(tmp_path / "classical.csv")
    assert len(rows) == 3


def test_console_script_runs(tmp_path):
    out = subprocess.run([sys.executable, "-m", "demon_lab.cli.main", "ensemble", "--config", "fig2",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "PASS second_law_feedback" in out.stdout
