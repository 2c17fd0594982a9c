"""End-to-end command-line tests.

Configuration handling (defaults, file merge, environment overrides,
JSON-pointer diagnostics), artifact layout with checksum manifests, and
the physics wiring of every subcommand are exercised against shrunken
grids so the whole file runs in seconds.
"""

import csv
import hashlib
import json
import re

import numpy as np
import pytest

from pdc import cli, modes
from pdc.cli import ConfigError, resolve_config
from pdc.modes import GOLDEN_RATIO
from pdc.optics import collinear_degenerate_cut_deg

SHRINK_ENV = {
    "PDC_SIM__NX": "64",
    "PDC_SIM__NT": "48",
    "PDC_SIM__NZ": "30",
    "PDC_SIM__SHOTS": "4",
    "PDC_SIM__CHUNK_SHOTS": "2",
    "PDC_SIM__GLC": "5.0",
    "PDC_SIM__SEED": "9",
    "PDC_SURFACE__N_QX": "41",
    "PDC_SURFACE__N_OMEGA": "61",
}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_of(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


# -- configuration resolution ----------------------------------------------------

def test_defaults_resolve_and_validate():
    cfg = resolve_config(None, environ={})
    assert set(cfg) >= {"crystal", "pumps", "sim", "band_nm", "surface", "gain"}
    assert cfg["crystal"]["cut_deg"] == pytest.approx(collinear_degenerate_cut_deg(), abs=1e-9)
    assert cfg["sim"]["two_pump"] is True


def test_config_file_merges_over_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"crystal": {"beta_deg": 3.5}}))
    cfg = resolve_config(str(path), environ={})
    assert cfg["crystal"]["beta_deg"] == 3.5
    assert cfg["crystal"]["length_mm"] == 4.0


def test_env_overrides_trump_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"crystal": {"beta_deg": 3.5}}))
    cfg = resolve_config(str(path), environ={
        "PDC_CRYSTAL__BETA_DEG": "4.25",
        "PDC_SIM__TWO_PUMP": "false",
        "PDC_GAIN__SWEEP": "4:7:7",
    })
    assert cfg["crystal"]["beta_deg"] == 4.25
    assert cfg["sim"]["two_pump"] is False
    assert cfg["gain"]["sweep"] == "4:7:7"


def test_unknown_key_reported_with_pointer():
    with pytest.raises(ConfigError) as err:
        resolve_config(None, environ={"PDC_SIMX": "1"})
    assert any(pointer == "/simx" for pointer, _ in err.value.problems)


def test_out_of_range_value_reported_with_pointer():
    with pytest.raises(ConfigError) as err:
        resolve_config(None, environ={"PDC_CRYSTAL__CUT_DEG": "0.5"})
    assert any(pointer == "/crystal/cut_deg" and ">=" in message
               for pointer, message in err.value.problems)


def test_wrong_type_reported_with_pointer():
    with pytest.raises(ConfigError) as err:
        resolve_config(None, environ={"PDC_SIM__NX": '"abc"'})
    assert any(pointer == "/sim/nx" for pointer, _ in err.value.problems)


def test_missing_config_file_exits_2_without_artifacts(tmp_path, capsys):
    out = tmp_path / "maps"
    code = cli.main(["pm-surface", "--config", str(tmp_path / "nope.json"),
                     "--out", str(out)])
    assert code == 2
    assert "config error at /" in capsys.readouterr().err
    assert not out.exists()


def test_malformed_config_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = cli.main(["pm-surface", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main(["--version"])
    assert exit_info.value.code == 0
    assert capsys.readouterr().out.startswith("pdc ")


# -- analytic subcommands ---------------------------------------------------------

def test_pm_surface_reruns_bit_identical(tmp_path, monkeypatch):
    for key, value in SHRINK_ENV.items():
        monkeypatch.setenv(key, value)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["pm-surface", "--out", str(d1)]) == 0
    assert cli.main(["pm-surface", "--out", str(d2)]) == 0
    assert (d1 / "pm_surface.csv").read_bytes() == (d2 / "pm_surface.csv").read_bytes()
    rows = read_csv(d1 / "pm_surface.csv")
    assert {r["branch"] for r in rows} == {"sigma1", "sigma2"}
    for r in rows:
        resid = float(r["D1"]) if r["branch"] == "sigma1" else float(r["D2"])
        assert abs(resid) < 1e-6


def test_modes_csv_loci_and_residuals(tmp_path, monkeypatch):
    for key, value in SHRINK_ENV.items():
        monkeypatch.setenv(key, value)
    out = tmp_path / "modes"
    assert cli.main(["modes", "--out", str(out)]) == 0
    rows = read_csv(out / "modes.csv")
    assert {r["branch"] for r in rows} == {"shared", "coupled1", "coupled2"}
    by_lambda = {}
    for r in rows:
        by_lambda.setdefault(r["lambda_nm"], {})[r["branch"]] = r
    shared = [r for r in rows if r["branch"] == "shared"]
    for r in shared:
        # the shared locus equalizes the two pump residuals; they vanish
        # together only at the hot spots
        assert abs(float(r["D1"]) - float(r["D2"])) < 1e-9
        assert float(r["theta_y_ext_deg"]) == 0.0
    for group in by_lambda.values():
        if {"shared", "coupled1", "coupled2"} <= set(group):
            s = group["shared"]
            # each coupled mode inherits the pair residual of its pump
            assert float(group["coupled1"]["D1"]) == pytest.approx(float(s["D1"]), abs=2e-3)
            assert float(group["coupled2"]["D2"]) == pytest.approx(float(s["D2"]), abs=2e-3)
            assert float(group["coupled1"]["theta_x_ext_deg"]) < float(s["theta_x_ext_deg"])
    lams = [float(r["lambda_nm"]) for r in shared]
    assert min(lams) < 620.0 and max(lams) > 820.0


def test_resonance_output_and_csv(tmp_path, capsys):
    out = tmp_path / "res"
    assert cli.main(["resonance", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    found = {m.group(1): float(m.group(2))
             for m in re.finditer(r"([\w-]+) resonance: beta\* = ([+-]\d+\.\d+) deg", printed)}
    assert set(found) == {"collinear-noncollinear", "collinear-nondegenerate"}
    beta_plus = max(found.values())
    beta_minus = min(found.values())
    assert abs(beta_plus - 7.0) <= 0.2
    assert abs(beta_minus + 8.8) <= 0.2
    rows = read_csv(out / "resonance.csv")
    members = {r["branch"].split()[0] for r in rows}
    assert members == {"signal", "idler1", "idler2"}
    for r in rows:
        member = r["branch"].split()[0]
        if member == "signal":
            assert abs(float(r["D1"])) < 1e-6 and abs(float(r["D2"])) < 1e-6
        elif member == "idler1":
            assert abs(float(r["D1"])) < 1e-6
        else:
            assert abs(float(r["D2"])) < 1e-6


def test_gain_csv_matches_module_exponent(tmp_path):
    out = tmp_path / "gain"
    assert cli.main(["gain", "--modes", "4", "--sweep", "4:7:7", "--out", str(out)]) == 0
    rows = read_csv(out / "gain.csv")
    assert len(rows) == 7
    fit = modes.gain_exponent(4, np.linspace(4.0, 7.0, 7))
    for r in rows:
        assert float(r["fitted_exponent"]) == pytest.approx(fit.exponent, abs=1e-12)
    by_glc = {float(r["glc"]): r for r in rows}
    assert float(by_glc[6.0]["ratio"]) == pytest.approx(GOLDEN_RATIO ** 2, rel=1e-3)


def test_gain_single_point_has_nan_exponent(tmp_path):
    out = tmp_path / "gain1"
    assert cli.main(["gain", "--modes", "3", "--glc", "6.0", "--out", str(out)]) == 0
    rows = read_csv(out / "gain.csv")
    assert len(rows) == 1
    assert np.isnan(float(rows[0]["fitted_exponent"]))
    assert float(rows[0]["n_shared"]) > 0.0


# -- simulation and analysis pipeline ---------------------------------------------

def windows_payload(extra=None):
    payload = {
        "windows": [
            {"name": "hot", "lambda_nm": 672.27, "dlambda_nm": 12.0,
             "theta_x_deg": 0.898, "dtheta_deg": 1.0, "role": "shared"},
            {"name": "floor", "lambda_nm": 820.0, "dlambda_nm": 12.0,
             "theta_x_deg": 0.898, "dtheta_deg": 1.0, "role": "background"},
        ]
    }
    if extra:
        payload.update(extra)
    return payload


def test_simulate_then_analyze_roundtrip(tmp_path, monkeypatch):
    for key, value in SHRINK_ENV.items():
        monkeypatch.setenv(key, value)
    maps = tmp_path / "maps"
    assert cli.main(["simulate", "--out", str(maps), "--format", "csv",
                     "--threads", "1"]) == 0
    for name in ("angular_spectrum.bin", "angular_spectrum.json", "far_field.bin",
                 "sections.csv", "angular_spectrum.csv", "manifest.json"):
        assert (maps / name).exists(), name

    manifest = json.loads((maps / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["master_seed"] == 9
    assert set(manifest["versions"]) == {"package", "python", "numpy", "scipy"}
    for name, digest in manifest["outputs"].items():
        assert sha256_of(maps / name) == digest, name

    sidecar = json.loads((maps / "angular_spectrum.json").read_text())
    assert sidecar["axes"]["shots"] == 4
    assert sidecar["shape"] == [64, 48]

    wfile = tmp_path / "windows.json"
    wfile.write_text(json.dumps(windows_payload()))
    report = tmp_path / "report" / "report.json"
    assert cli.main(["analyze", "--maps", str(maps), "--windows", str(wfile),
                     "--out", str(report)]) == 0
    payload = json.loads(report.read_text())
    assert payload["counts"]["hot"] > 0.0
    assert payload["peaks"]["hot"]["intensity"] > 1.0
    assert payload["shots"] == 4
    assert (report.parent / "analyze_manifest.json").exists()


def test_analyze_clipped_window_exits_3_and_cleans_up(tmp_path, monkeypatch, capsys):
    for key, value in SHRINK_ENV.items():
        monkeypatch.setenv(key, value)
    maps = tmp_path / "maps"
    assert cli.main(["simulate", "--out", str(maps)]) == 0
    wfile = tmp_path / "windows.json"
    clipped = windows_payload()
    clipped["windows"][0]["theta_x_deg"] = 30.0
    wfile.write_text(json.dumps(clipped))
    report = tmp_path / "report" / "report.json"
    code = cli.main(["analyze", "--maps", str(maps), "--windows", str(wfile),
                     "--out", str(report)])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err
    assert not report.exists()
    assert not (report.parent / "analyze_manifest.json").exists()


def synthetic_map_dir(parent, name, band_value, ref_value):
    d = parent / name
    d.mkdir(parents=True)
    qx = np.linspace(-0.3, 0.3, 31)
    lam = np.linspace(620.0, 780.0, 41)
    inten = np.where(lam[None, :] < 700.0, band_value, ref_value) * np.ones((31, 1))
    inten.astype("<f8").tofile(d / "angular_spectrum.bin")
    sidecar = {
        "shape": [31, 41],
        "dtype": "<f8",
        "order": "C",
        "units": "synthetic",
        "axes": {
            "rows_qx_rad_per_um": qx.tolist(),
            "cols_omega_rad_per_ps": np.linspace(-200.0, 200.0, 41).tolist(),
            "cols_lambda_nm": lam.tolist(),
            "shots": 8,
        },
    }
    (d / "angular_spectrum.json").write_text(json.dumps(sidecar))


def test_analyze_series_recovers_exact_exponent(tmp_path):
    energies = [4.0, 16.0, 36.0, 64.0]
    slope_ref = 0.7
    parent = tmp_path / "series"
    subdirs = []
    for k, e in enumerate(energies):
        name = f"e{k}"
        subdirs.append(name)
        synthetic_map_dir(parent, name,
                          band_value=np.exp(GOLDEN_RATIO * slope_ref * np.sqrt(e)),
                          ref_value=np.exp(slope_ref * np.sqrt(e)))
    wfile = tmp_path / "windows.json"
    wfile.write_text(json.dumps({
        "windows": [
            {"name": "band", "lambda_nm": 660.0, "dlambda_nm": 30.0,
             "theta_x_deg": 0.0, "dtheta_deg": 0.5, "role": "shared"},
            {"name": "ref", "lambda_nm": 740.0, "dlambda_nm": 30.0,
             "theta_x_deg": 0.0, "dtheta_deg": 0.5, "role": "coupled"},
        ],
        "series": {"band": "band", "reference": "ref",
                   "energy_uj": energies, "maps": subdirs},
    }))
    report = tmp_path / "fit" / "fit.json"
    assert cli.main(["analyze", "--maps", str(parent), "--windows", str(wfile),
                     "--out", str(report)]) == 0
    payload = json.loads(report.read_text())
    assert payload["exponent"] == pytest.approx(GOLDEN_RATIO, abs=1e-9)
    lines = read_csv(report.parent / "fit_lines.csv")
    assert len(lines) == 4
