"""Command-line interface: configuration, reproducible runs, dataset export.

One binary with subcommands. All physics defaults live in the packaged
``defaults.json``; a user configuration file (``--config``) is deep-merged
over the defaults, then environment variables with the ``PDC_`` prefix are
applied (double underscores descend into sections, e.g.
``PDC_CRYSTAL__BETA_DEG=4``), then explicit flags win. Every run writes a
manifest (resolved configuration, master seed, package versions, wall
clock, output digests) sufficient to re-run the job identically.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from importlib import resources

import numpy as np

from . import __version__, analysis, modes, simulate
from .optics import (
    C_UM_PS,
    CrystalConfig,
    PumpPair,
    internal_pump_tilt,
    pump_wavevector,
    signal_wavenumber,
)
from .phasematch import (
    NoIntersectionError,
    band_omegas,
    coupled_mode_positions,
    external_theta_deg,
    find_hotspots,
    find_resonance,
    omega_to_lambda_nm,
    shared_mode_position,
    shared_mode_qx,
    trace_pm_surface,
    _mismatch_scalar,
)
from .simulate import NumericalInstabilityError, SimConfig, run_simulation

ENV_PREFIX = "PDC_"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

GAIN_WINDOW_DLAMBDA_NM = 12.0
GAIN_WINDOW_DTHETA_DEG = 1.0
GAIN_GRID = dict(nx=1024, nt=384, dt_fs=6.0, nz=100, dx_um=2.5)


class ConfigError(Exception):
    """Configuration rejected; carries (json-pointer, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.problems))


# -- configuration ------------------------------------------------------------

def load_defaults() -> dict:
    return json.loads(resources.files("pdc").joinpath("defaults.json").read_text())


def _deep_merge(base, override, pointer=""):
    if not isinstance(override, dict) or not isinstance(base, dict):
        return override
    out = dict(base)
    for key, value in override.items():
        if key in base and isinstance(base[key], dict):
            out[key] = _deep_merge(base[key], value, f"{pointer}/{key}")
        else:
            out[key] = value
    return out


def _apply_env(cfg: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(cfg))
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__")]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([("/" + "/".join(path), f"cannot descend through scalar for {name}")])
        node[path[-1]] = value
    return out


def _num(lo=None, hi=None, integer=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "expected a number"
        if integer and int(v) != v:
            return "expected an integer"
        if lo is not None and v < lo:
            return f"must be >= {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None
    return check


def _boolean(v):
    return None if isinstance(v, bool) else "expected true or false"


def _band(v):
    if (not isinstance(v, list)) or len(v) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        return "expected [min_nm, max_nm]"
    if not (220.0 < v[0] < v[1] < 1060.0):
        return "band must be ascending and inside the dispersion validity range (220, 1060) nm"
    return None


_SCHEMA = {
    "notes": lambda v: None if isinstance(v, str) else "expected a string",
    "crystal": {
        "cut_deg": _num(1.0, 89.0),
        "length_mm": _num(0.01, 100.0),
        "beta_deg": _num(-45.0, 45.0),
    },
    "pumps": {
        "wavelength_nm": _num(220.0, 530.0),
        "theta1_deg": _num(-10.0, 10.0),
        "theta2_deg": _num(-10.0, 10.0),
        "waist_um": _num(1.0, 1e7),
        "duration_ps": _num(1e-3, 1e7),
        "energy_uj": _num(0.0, 1e6),
    },
    "band_nm": _band,
    "sim": {
        "nx": _num(4, 65536, integer=True),
        "ny": _num(1, 4096, integer=True),
        "nt": _num(4, 65536, integer=True),
        "dx_um": _num(1e-3, 1e3),
        "dy_um": _num(1e-3, 1e3),
        "dt_fs": _num(1e-3, 1e6),
        "nz": _num(1, 100000, integer=True),
        "glc": _num(0.0, 30.0),
        "shots": _num(1, 100000, integer=True),
        "seed": _num(0, 2**63 - 1, integer=True),
        "chunk_shots": _num(1, 100000, integer=True),
        "depletion": _boolean,
        "absorber": _boolean,
        "two_pump": _boolean,
    },
    "surface": {
        "n_omega": _num(8, 100000, integer=True),
        "qx_min": _num(-10.0, 10.0),
        "qx_max": _num(-10.0, 10.0),
        "n_qx": _num(2, 100000, integer=True),
    },
    "gain": {
        "modes": _num(2, 4, integer=True),
        "glc": _num(0.0, 30.0),
        "sweep": lambda v: None if isinstance(v, str) else "expected 'from:to:steps'",
    },
}


def _validate_node(schema, node, pointer, problems):
    if callable(schema):
        msg = schema(node)
        if msg:
            problems.append((pointer or "/", msg))
        return
    if not isinstance(node, dict):
        problems.append((pointer or "/", "expected an object"))
        return
    for key, value in node.items():
        child = f"{pointer}/{key}"
        if key not in schema:
            problems.append((child, "unknown key"))
            continue
        _validate_node(schema[key], value, child, problems)


def validate_config(cfg: dict) -> None:
    """Validate a resolved configuration; raises ConfigError with pointers."""
    problems = []
    _validate_node(_SCHEMA, cfg, "", problems)
    if not problems and cfg["surface"]["qx_min"] >= cfg["surface"]["qx_max"]:
        problems.append(("/surface/qx_min", "must be below qx_max"))
    if problems:
        raise ConfigError(problems)


def resolve_config(config_path: str | None, environ=None) -> dict:
    cfg = load_defaults()
    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError([("/", f"config file not found: {config_path}")])
        try:
            with open(config_path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([("/", f"config file is not valid JSON: {exc}")])
        cfg = _deep_merge(cfg, user)
    cfg = _apply_env(cfg, environ)
    validate_config(cfg)
    return cfg


def build_crystal(cfg: dict) -> CrystalConfig:
    c = cfg["crystal"]
    return CrystalConfig(cut_deg=c["cut_deg"], length_mm=c["length_mm"], beta_deg=c["beta_deg"])


def build_pumps(cfg: dict, crystal: CrystalConfig) -> PumpPair:
    """Pump pair with the configured external tilts refracted internally."""
    p = cfg["pumps"]
    th1 = internal_pump_tilt(np.radians(p["theta1_deg"]), crystal, p["wavelength_nm"])
    th2 = internal_pump_tilt(np.radians(p["theta2_deg"]), crystal, p["wavelength_nm"])
    return PumpPair(
        wavelength_nm=p["wavelength_nm"],
        theta1_rad=th1,
        theta2_rad=th2,
        waist_um=p["waist_um"],
        duration_ps=p["duration_ps"],
        energy_uj=p["energy_uj"],
    )


def build_simconfig(cfg: dict, beta_deg: float | None = None, **overrides) -> SimConfig:
    crystal = build_crystal(cfg)
    if beta_deg is not None:
        crystal = replace(crystal, beta_deg=beta_deg)
    pumps = build_pumps(cfg, crystal)
    s = cfg["sim"]
    fields = dict(
        nx=int(s["nx"]), ny=int(s["ny"]), nt=int(s["nt"]),
        dx_um=s["dx_um"], dy_um=s["dy_um"], dt_fs=s["dt_fs"],
        nz=int(s["nz"]), glc=s["glc"], shots=int(s["shots"]),
        seed=int(s["seed"]), chunk_shots=int(s["chunk_shots"]),
        depletion=s["depletion"], absorber=s["absorber"],
        active_pumps=(1, 2) if s["two_pump"] else (1,),
    )
    fields.update(overrides)
    return SimConfig(crystal=crystal, pumps=pumps, **fields)


# -- output artifacts ----------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


class OutputSet:
    """Artifact directory with digest tracking and failure cleanup."""

    def __init__(self, out_dir: str, manifest_name: str = "manifest.json"):
        self.dir = out_dir
        self.manifest_name = manifest_name
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def write_csv(self, name: str, header, rows) -> str:
        path = self.path(name)
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        self.files.append(name)
        return path

    def write_json(self, name: str, obj) -> str:
        path = self.path(name)
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)
        return path

    def write_binary(self, name: str, array: np.ndarray, axes: dict, units: str) -> str:
        path = self.path(name)
        data = np.ascontiguousarray(array, dtype="<f8")
        data.tofile(path)
        self.files.append(name)
        sidecar = {
            "shape": list(data.shape),
            "dtype": "<f8",
            "order": "C",
            "units": units,
            "axes": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in axes.items()},
        }
        self.write_json(name.rsplit(".", 1)[0] + ".json", sidecar)
        return path

    def abort(self):
        for name in self.files:
            try:
                os.remove(self.path(name))
            except OSError:
                pass

    def finalize(self, command: str, cfg: dict, seed: int | None, started: float) -> str:
        import scipy
        digests = {}
        for name in self.files:
            h = hashlib.sha256()
            with open(self.path(name), "rb") as fh:
                for block in iter(lambda: fh.read(1 << 20), b""):
                    h.update(block)
            digests[name] = h.hexdigest()
        manifest = {
            "command": command,
            "config": cfg,
            "master_seed": seed,
            "versions": {
                "package": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_clock_s": round(time.time() - started, 3),
            "outputs": digests,
        }
        path = self.path(self.manifest_name)
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


# -- shared physics recipes -----------------------------------------------------

PM_CSV_HEADER = ("lambda_nm", "theta_x_ext_deg", "theta_y_ext_deg", "branch", "D1", "D2")


def _surface_rows(cfg: dict, crystal: CrystalConfig, pumps: PumpPair):
    sp = cfg["surface"]
    qx = np.linspace(sp["qx_min"], sp["qx_max"], int(sp["n_qx"]))
    rows = []
    for pump_index, branch in ((1, "sigma1"), (2, "sigma2")):
        surf = trace_pm_surface(
            pump_index, pumps, crystal,
            qx_values=qx, qy_values=(0.0,),
            band_nm=tuple(cfg["band_nm"]), n_omega=int(sp["n_omega"]),
        )
        for pt in surf.points:
            d1 = _mismatch_scalar(1, pt.qx, pt.qy, pt.omega, pumps, crystal)
            d2 = _mismatch_scalar(2, pt.qx, pt.qy, pt.omega, pumps, crystal)
            rows.append((pt.lambda_nm, pt.theta_x_ext_deg, pt.theta_y_ext_deg, branch,
                         float(d1), float(d2)))
    rows.sort(key=lambda r: (r[3], r[0], r[1]))
    return rows


def _mode_rows(cfg: dict, crystal: CrystalConfig, pumps: PumpPair, n_omega: int = 241):
    omegas = band_omegas(tuple(cfg["band_nm"]), pumps.wavelength_nm, n_omega)
    rows = []
    for om in omegas:
        lam = omega_to_lambda_nm(om, pumps.wavelength_nm)
        try:
            shared = shared_mode_position(om, pumps, crystal, solve_theta_y=False)
        except NoIntersectionError:
            continue
        q_sh = shared.qx_exact
        d1 = float(_mismatch_scalar(1, q_sh, 0.0, om, pumps, crystal))
        d2 = float(_mismatch_scalar(2, q_sh, 0.0, om, pumps, crystal))
        rows.append((lam, shared.theta_x_ext_deg, 0.0, "shared", d1, d2))
        coupled = coupled_mode_positions(om, pumps, crystal)
        ks = signal_wavenumber(om, crystal, pumps.wavelength_nm)
        for th_int, th_ext, branch in (
            (coupled.theta_1x_int_rad, coupled.theta_1x_ext_deg, "coupled1"),
            (coupled.theta_2x_int_rad, coupled.theta_2x_ext_deg, "coupled2"),
        ):
            q = ks * np.sin(th_int)
            d1 = float(_mismatch_scalar(1, q, 0.0, om, pumps, crystal))
            d2 = float(_mismatch_scalar(2, q, 0.0, om, pumps, crystal))
            rows.append((lam, th_ext, 0.0, branch, d1, d2))
    order = {"shared": 0, "coupled1": 1, "coupled2": 2}
    rows.sort(key=lambda r: (order[r[3]], r[0]))
    return rows


def _hotspot_anchor(pumps: PumpPair, crystal: CrystalConfig, band_nm):
    """Preferred hot spot of a geometry: the tangency pair when present."""
    spots = find_hotspots(pumps, crystal, band_nm=band_nm)
    if not spots:
        raise NoIntersectionError("no hot spots found for this geometry", float("nan"))
    for spot in spots:
        if spot.tangency:
            return spot
    return spots[0]


def _blue_anchor(spot, pumps: PumpPair, crystal: CrystalConfig) -> tuple:
    """Measurement anchor (lambda_nm, qx, omega) on the blue side of a pair.

    Analysis windows and centroid seeds target the short-wavelength member;
    when the doubly matched root lies on the red side, the anchor is its
    conjugate on the shared locus.
    """
    if spot.omega >= 0.0:
        return spot.lambda_s_nm, spot.qx, spot.omega
    om = -spot.omega
    return spot.lambda_i_nm, shared_mode_qx(om, pumps, crystal), om


def _gain_window(anchor) -> analysis.Window:
    lam, qx, om = anchor
    theta = external_theta_deg(qx, om)
    return analysis.Window(
        name="hot", lambda_nm=lam, dlambda_nm=GAIN_WINDOW_DLAMBDA_NM,
        theta_x_deg=theta, dtheta_deg=GAIN_WINDOW_DTHETA_DEG,
    )


def run_gain_sweep(cfg: dict, glc_values, shots: int, threads: int = 1,
                   seed_offset: int = 0, progress=None) -> dict:
    """Simulated gain-exponent protocol for the 3-mode and 4-mode regimes.

    Three configurations are swept over ``glc_values``: the shared hot spot
    at beta = 0 (3-mode coupling), the same window under a single pump
    (2-mode reference), and the coalesced hot spot at the nondegenerate
    resonance (4-mode coupling). Counts are integrated in a fixed
    wavelength/angle window around each predicted hot spot; exponents are
    the fitted-slope ratios of log counts versus g l_c against the
    single-pump reference.
    """
    glc_values = list(glc_values)
    crystal0 = build_crystal(cfg)
    pumps0 = build_pumps(cfg, crystal0)
    band = tuple(cfg["band_nm"])

    resonances = find_resonance(pumps0, crystal0)
    beta_minus = min(r.beta_deg for r in resonances)
    crystal_m = replace(crystal0, beta_deg=beta_minus)
    pumps_m = build_pumps(cfg, crystal_m)

    window0 = _gain_window(_blue_anchor(_hotspot_anchor(pumps0, crystal0, band), pumps0, crystal0))
    window_m = _gain_window(_blue_anchor(_hotspot_anchor(pumps_m, crystal_m, band), pumps_m, crystal_m))

    cases = {
        "hot_beta0": (0.0, (1, 2), window0, 100),
        "reference": (0.0, (1,), window0, 200),
        "hot_resonance": (beta_minus, (1, 2), window_m, 300),
    }
    counts = {name: [] for name in cases}
    for k, glc in enumerate(glc_values):
        for name, (beta, active, window, seed_base) in cases.items():
            sim = build_simconfig(
                cfg, beta_deg=beta, glc=float(glc), shots=shots,
                seed=seed_base + k + seed_offset, active_pumps=active,
                threads=threads, **GAIN_GRID,
            )
            result = run_simulation(sim)
            counts[name].append(analysis.window_counts(result.spectrum, window))
            if progress is not None:
                progress(name, glc)

    energies = np.asarray(glc_values, dtype=float) ** 2
    log_ref = np.log(counts["reference"])
    slope_ref = np.polyfit(glc_values, log_ref, 1)[0]
    fits = {}
    for name in ("hot_beta0", "hot_resonance"):
        slope = np.polyfit(glc_values, np.log(counts[name]), 1)[0]
        fits[name] = slope / slope_ref
    return {
        "glc_values": glc_values,
        "energies_uj": energies.tolist(),
        "windows": {"hot_beta0": asdict(window0), "hot_resonance": asdict(window_m)},
        "beta_resonance_deg": beta_minus,
        "counts": {k: [float(c) for c in v] for k, v in counts.items()},
        "exponent_3mode": float(fits["hot_beta0"]),
        "exponent_4mode": float(fits["hot_resonance"]),
        "target_3mode": float(np.sqrt(2.0)),
        "target_4mode": float(modes.GOLDEN_RATIO),
        "shots_per_point": shots,
    }


def run_overlay(cfg: dict, shots: int, threads: int = 1) -> dict:
    """Far-field centroid versus analytic locus for the three benchmark cases.

    Simulates beta = 0 and both resonances on the production grid, extracts
    the hot-spot transverse centroid at the predicted wavelength, and
    reports the offset from the analytic position in grid cells.
    """
    crystal0 = build_crystal(cfg)
    pumps0 = build_pumps(cfg, crystal0)
    band = tuple(cfg["band_nm"])
    res = find_resonance(pumps0, crystal0)
    beta_plus = max(r.beta_deg for r in res)
    beta_minus = min(r.beta_deg for r in res)

    cases = []
    for label, beta, n_cols, seed in (
        ("beta0", 0.0, 4, 11),
        ("beta_plus", beta_plus, 2, 13),
        ("beta_minus", beta_minus, 3, 12),
    ):
        crystal = replace(crystal0, beta_deg=beta)
        pumps = build_pumps(cfg, crystal)
        anchor = _blue_anchor(_hotspot_anchor(pumps, crystal, band), pumps, crystal)
        cases.append((label, beta, n_cols, seed, anchor))

    out = {"shots": shots, "cases": {}}
    for label, beta, n_cols, seed, anchor in cases:
        lam, qx, _ = anchor
        sim = build_simconfig(cfg, beta_deg=beta, shots=shots, seed=seed,
                              threads=threads, **GAIN_GRID)
        result = run_simulation(sim)
        cen = analysis.hotspot_centroid(
            result.spectrum, lam, qx, n_side_columns=n_cols,
        )
        out["cases"][label] = {
            "beta_deg": beta,
            "lambda_nm": lam,
            "qx_predicted": qx,
            "qx_centroid": cen.qx,
            "offset_cells": cen.offset_cells,
            "cell_size": cen.cell_size,
        }
    return out


# -- subcommands ----------------------------------------------------------------

def cmd_pm_surface(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    out = OutputSet(args.out)
    try:
        crystal = build_crystal(cfg)
        pumps = build_pumps(cfg, crystal)
        out.write_csv("pm_surface.csv", PM_CSV_HEADER, _surface_rows(cfg, crystal, pumps))
    except Exception:
        out.abort()
        raise
    out.finalize("pm-surface", cfg, None, started)
    print(f"wrote {out.path('pm_surface.csv')}")
    return EXIT_OK


def cmd_modes(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    out = OutputSet(args.out)
    try:
        crystal = build_crystal(cfg)
        pumps = build_pumps(cfg, crystal)
        out.write_csv("modes.csv", PM_CSV_HEADER, _mode_rows(cfg, crystal, pumps))
    except Exception:
        out.abort()
        raise
    out.finalize("modes", cfg, None, started)
    print(f"wrote {out.path('modes.csv')}")
    return EXIT_OK


def cmd_resonance(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    crystal = build_crystal(cfg)
    pumps = build_pumps(cfg, crystal)
    resonances = find_resonance(pumps, crystal)
    if not resonances:
        print("no resonance found in the scanned rotation range", file=sys.stderr)
        return EXIT_NUMERIC
    rows = []
    for r in sorted(resonances, key=lambda r: -r.beta_deg):
        print(f"{r.branch} resonance: beta* = {r.beta_deg:+.2f} deg")
        crystal_r = replace(crystal, beta_deg=r.beta_deg)
        pumps_r = build_pumps(cfg, crystal_r)
        try:
            spot = _hotspot_anchor(pumps_r, crystal_r, tuple(cfg["band_nm"]))
        except NoIntersectionError:
            continue
        q1 = pump_wavevector(1, pumps_r, crystal_r).Q
        q2 = pump_wavevector(2, pumps_r, crystal_r).Q
        members = (
            ("signal", spot.lambda_s_nm, spot.qx, spot.omega),
            ("idler1", spot.lambda_i_nm, q1 - spot.qx, -spot.omega),
            ("idler2", spot.lambda_i_nm, q2 - spot.qx, -spot.omega),
        )
        for member, lam, q, om in members:
            th = external_theta_deg(q, om)
            d1 = float(_mismatch_scalar(1, q, 0.0, om, pumps_r, crystal_r))
            d2 = float(_mismatch_scalar(2, q, 0.0, om, pumps_r, crystal_r))
            rows.append((lam, th, 0.0, f"{member} beta*={r.beta_deg:+.4f}", d1, d2))
    if args.out is not None:
        out = OutputSet(args.out)
        try:
            out.write_csv("resonance.csv", PM_CSV_HEADER, rows)
        except Exception:
            out.abort()
            raise
        out.finalize("resonance", cfg, None, started)
        print(f"wrote {out.path('resonance.csv')}")
    return EXIT_OK


def cmd_gain(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    mode_count = int(args.modes if args.modes is not None else cfg["gain"]["modes"])
    sweep = args.sweep if args.sweep is not None else cfg["gain"]["sweep"]
    if args.glc is not None and args.sweep is None:
        glcs = [float(args.glc)]
    else:
        try:
            lo, hi, steps = sweep.split(":")
            glcs = np.linspace(float(lo), float(hi), int(steps)).tolist()
        except (ValueError, AttributeError):
            raise ConfigError([("/gain/sweep", f"expected 'from:to:steps', got {sweep!r}")])
    length = cfg["crystal"]["length_mm"]
    labels = modes.mode_labels(mode_count)
    rows = []
    photon_rows = []
    for glc in glcs:
        spec = modes.CouplingSpec(mode_count=mode_count, g_per_mm=glc / length, length_mm=length)
        stats = modes.photon_statistics(modes.propagate(spec))
        n = stats.mean
        if mode_count == 2:
            n_shared, n_c1, n_c2 = n[0], n[1], n[1]
        elif mode_count == 3:
            n_shared, n_c1, n_c2 = n[0], n[1], n[2]
        else:
            n_shared, n_c1, n_c2 = n[1], n[0], n[3]
        photon_rows.append((glc, n_shared, n_c1, n_c2))
    if len(glcs) >= 2:
        fit = modes.gain_exponent(mode_count, np.asarray(glcs, dtype=float))
        exponent = fit.exponent
    else:
        exponent = float("nan")
    for glc, n_shared, n_c1, n_c2 in photon_rows:
        ratio = n_shared / n_c1 if n_c1 > 0.0 else float("inf")
        rows.append((glc, n_shared, n_c1, n_c2, ratio, exponent))
    out = OutputSet(args.out)
    try:
        out.write_csv("gain.csv", ("glc", "n_shared", "n_c1", "n_c2", "ratio", "fitted_exponent"), rows)
    except Exception:
        out.abort()
        raise
    out.finalize("gain", cfg, None, started)
    print(f"wrote {out.path('gain.csv')} ({labels} topology, exponent vs 2-mode: {exponent:.6f})")
    return EXIT_OK


def _write_map_outputs(out: OutputSet, cfg: dict, result, prefix: str = "") -> None:
    spec = result.spectrum
    out.write_binary(
        f"{prefix}angular_spectrum.bin", spec.intensity,
        axes={
            "rows_qx_rad_per_um": spec.qx,
            "cols_omega_rad_per_ps": spec.omega,
            "cols_lambda_nm": spec.lambda_nm,
            "beta_deg": result.config.crystal.beta_deg,
            "glc": result.config.glc,
            "shots": result.shots,
        },
        units="mean signal photons per grid mode (vacuum subtracted)",
    )
    band = tuple(cfg["band_nm"])
    cols = (spec.lambda_nm >= band[0]) & (spec.lambda_nm <= band[1])
    ff = spec.intensity[:, cols].sum(axis=1)
    out.write_binary(
        f"{prefix}far_field.bin", ff,
        axes={"qx_rad_per_um": spec.qx, "band_nm": list(band)},
        units="band-integrated mean photons per transverse mode",
    )


def _write_sections(out: OutputSet, cfg: dict, result, crystal, pumps, prefix: str = "") -> None:
    spec = result.spectrum
    try:
        spots = find_hotspots(pumps, crystal, band_nm=tuple(cfg["band_nm"]))
    except Exception:
        spots = []
    lams = []
    for spot in spots[:2]:
        lams.extend([spot.lambda_s_nm, spot.lambda_i_nm])
    if not lams:
        lams = [2.0 * pumps.wavelength_nm]
    rows = []
    for lam in lams:
        j = int(np.argmin(np.abs(spec.lambda_nm - lam)))
        lo = max(j - 4, 0)
        hi = min(j + 5, len(spec.lambda_nm))
        profile = spec.intensity[:, lo:hi].mean(axis=1)
        for i, q in enumerate(spec.qx):
            rows.append((spec.lambda_nm[j], float(spec.theta_x_ext_deg[i, j]), float(q), float(profile[i])))
    out.write_csv(f"{prefix}sections.csv", ("lambda_nm", "theta_x_ext_deg", "qx_rad_per_um", "intensity"), rows)


def cmd_simulate(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    overrides = {}
    if args.shots is not None:
        overrides["shots"] = int(args.shots)
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    overrides["threads"] = args.threads
    sim = build_simconfig(cfg, **overrides)
    out = OutputSet(args.out)
    try:
        result = run_simulation(sim)
        crystal = sim.crystal
        pumps = sim.pumps
        _write_map_outputs(out, cfg, result)
        _write_sections(out, cfg, result, crystal, pumps)
        if args.format == "csv":
            spec = result.spectrum
            rows = (
                (spec.lambda_nm[j], float(spec.theta_x_ext_deg[i, j]), float(spec.qx[i]),
                 float(spec.omega[j]), float(spec.intensity[i, j]))
                for i in range(len(spec.qx)) for j in range(len(spec.omega))
            )
            out.write_csv("angular_spectrum.csv",
                          ("lambda_nm", "theta_x_ext_deg", "qx_rad_per_um", "omega_rad_per_ps", "intensity"),
                          rows)
    except Exception:
        out.abort()
        raise
    out.finalize("simulate", cfg, sim.seed, started)
    print(f"wrote maps for beta={sim.crystal.beta_deg} deg, {result.shots} shots to {out.dir}")
    return EXIT_OK


def _load_spectrum(map_dir: str) -> tuple:
    sidecar_path = os.path.join(map_dir, "angular_spectrum.json")
    bin_path = os.path.join(map_dir, "angular_spectrum.bin")
    if not (os.path.exists(sidecar_path) and os.path.exists(bin_path)):
        raise ConfigError([("/maps", f"no angular_spectrum.bin/.json pair in {map_dir}")])
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    data = np.fromfile(bin_path, dtype=meta["dtype"]).reshape(meta["shape"])
    qx = np.asarray(meta["axes"]["rows_qx_rad_per_um"])
    om = np.asarray(meta["axes"]["cols_omega_rad_per_ps"])
    lam = np.asarray(meta["axes"]["cols_lambda_nm"])
    from .optics import C_UM_PS
    w = 2.0 * np.pi * C_UM_PS / (lam / 1000.0)
    theta = np.degrees(np.arcsin(np.clip(qx[:, None] * C_UM_PS / w[None, :], -1.0, 1.0)))
    spec = simulate.AngularSpectrum(intensity=data, qx=qx, omega=om, lambda_nm=lam, theta_x_ext_deg=theta)
    return spec, meta


def cmd_analyze(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    if not os.path.exists(args.windows):
        raise ConfigError([("/windows", f"windows file not found: {args.windows}")])
    with open(args.windows) as fh:
        wcfg = json.load(fh)
    try:
        windows = [analysis.Window(**w) for w in wcfg.get("windows", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError([("/windows", str(exc))])
    report_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    out = OutputSet(report_dir, manifest_name="analyze_manifest.json")
    report_name = os.path.basename(args.out)
    try:
        series = wcfg.get("series")
        if series is None:
            spec, meta = _load_spectrum(args.maps)
            shots = meta["axes"].get("shots")
            report = analysis.extract_hotspots(spec, windows, shots=shots)
            payload = {
                "map_dir": args.maps,
                "windows": [asdict(w) for w in windows],
                "counts": report.counts,
                "raw_counts": report.raw_counts,
                "pixel_counts": report.pixel_counts,
                "peaks": {k: {"lambda_nm": v[0], "theta_x_ext_deg": v[1], "intensity": v[2]}
                          for k, v in report.peaks.items()},
                "background_rate": report.background_rate,
                "ratio": report.ratio,
                "ratio_uncertainty": report.ratio_uncertainty,
                "shots": report.shots,
            }
            out.write_json(report_name, payload)
        else:
            band_name = series["band"]
            ref_name = series["reference"]
            energies = series["energy_uj"]
            subdirs = series["maps"]
            by_name = {w.name: w for w in windows}
            counts_band, counts_ref = [], []
            for sub in subdirs:
                spec, _ = _load_spectrum(os.path.join(args.maps, sub))
                counts_band.append(analysis.window_counts(spec, by_name[band_name]))
                counts_ref.append(analysis.window_counts(spec, by_name[ref_name]))
            fit = analysis.fit_gain_exponent(energies, counts_band, counts_ref)
            payload = {
                "map_dir": args.maps,
                "series_maps": subdirs,
                "energy_uj": list(energies),
                "counts_band": counts_band,
                "counts_reference": counts_ref,
                "exponent": fit.exponent,
                "ci95": fit.ci95,
                "slope": fit.slope,
                "slope_reference": fit.slope_reference,
            }
            out.write_json(report_name, payload)
            x = fit.sqrt_energy
            rows = [
                (float(xi), float(lb), float(fit.slope * xi + fit.intercept),
                 float(lr), float(fit.slope_reference * xi + fit.intercept_reference))
                for xi, lb, lr in zip(x, fit.log_counts, fit.log_counts_reference)
            ]
            out.write_csv("fit_lines.csv",
                          ("sqrt_energy", "log_counts_band", "fit_band", "log_counts_reference", "fit_reference"),
                          rows)
    except Exception:
        out.abort()
        raise
    out.finalize("analyze", cfg, None, started)
    print(f"wrote {os.path.join(report_dir, report_name)}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = resolve_config(args.config)
    started = time.time()
    out = OutputSet(args.out)
    shots = int(args.shots) if args.shots is not None else None
    try:
        if args.figure == "fig2":
            crystal0 = build_crystal(cfg)
            pumps0 = build_pumps(cfg, crystal0)
            for r in find_resonance(pumps0, crystal0):
                crystal = replace(crystal0, beta_deg=r.beta_deg)
                pumps = build_pumps(cfg, crystal)
                rows = _surface_rows(cfg, crystal, pumps)
                out.write_csv(f"fig2_surfaces_beta{r.beta_deg:+.2f}.csv", PM_CSV_HEADER, rows)
        elif args.figure == "fig4":
            for beta in (0.0, 4.0, 7.0):
                crystal = replace(build_crystal(cfg), beta_deg=beta)
                pumps = build_pumps(cfg, crystal)
                rows = _mode_rows(cfg, crystal, pumps)
                out.write_csv(f"fig4_modes_beta{beta:g}.csv", PM_CSV_HEADER, rows)
        elif args.figure in ("fig3", "fig8"):
            if args.figure == "fig3":
                betas = [("beta0", 0.0), ("beta4", 4.0), ("beta7", 7.0)]
            else:
                crystal0 = build_crystal(cfg)
                pumps0 = build_pumps(cfg, crystal0)
                res = find_resonance(pumps0, crystal0)
                betas = [("beta0", 0.0)] + [
                    (f"beta{r.beta_deg:+.2f}", r.beta_deg) for r in res
                ]
            for label, beta in betas:
                sim = build_simconfig(
                    cfg, beta_deg=beta, threads=args.threads,
                    **(dict(shots=shots) if shots else {}), **GAIN_GRID,
                )
                result = run_simulation(sim)
                _write_map_outputs(out, cfg, result, prefix=f"{args.figure}_{label}_")
                _write_sections(out, cfg, result, sim.crystal, sim.pumps, prefix=f"{args.figure}_{label}_")
        elif args.figure == "fig10":
            sweep = run_gain_sweep(
                cfg, glc_values=[4.0, 5.0, 6.0, 7.0],
                shots=shots if shots else 16, threads=args.threads,
                seed_offset=int(args.seed) if args.seed is not None else 0,
            )
            out.write_json("fig10_report.json", sweep)
            glcs = np.asarray(sweep["glc_values"], dtype=float)
            rows = []
            for k, glc in enumerate(glcs):
                rows.append((
                    glc, np.sqrt(sweep["energies_uj"][k]),
                    sweep["counts"]["hot_beta0"][k],
                    sweep["counts"]["reference"][k],
                    sweep["counts"]["hot_resonance"][k],
                ))
            out.write_csv("fig10_counts.csv",
                          ("glc", "sqrt_energy", "counts_hot_beta0", "counts_reference", "counts_hot_resonance"),
                          rows)
        else:
            raise ConfigError([("/figure", f"unknown figure {args.figure!r}")])
    except Exception:
        out.abort()
        raise
    out.finalize(f"reproduce {args.figure}", cfg, shots, started)
    print(f"wrote {args.figure} artifacts to {out.dir}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def _add_common(sp, out_required=True, out_default=None):
    sp.add_argument("--config", help="JSON configuration file merged over the packaged defaults")
    sp.add_argument("--out", required=out_required and out_default is None,
                    default=out_default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdc",
        description="Parametric down-conversion with two tilted pumps: "
                    "phase matching, mode coupling, and stochastic field simulation.",
        epilog="Environment variables with the PDC_ prefix override configuration "
               "values; double underscores descend into sections "
               "(example: PDC_CRYSTAL__BETA_DEG=4 overrides crystal.beta_deg).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pm-surface", help="trace the two phase-matching surfaces (theta_y = 0 section)")
    _add_common(sp)
    sp.set_defaults(func=cmd_pm_surface)

    sp = sub.add_parser("modes", help="shared and coupled mode loci across the band")
    _add_common(sp)
    sp.set_defaults(func=cmd_modes)

    sp = sub.add_parser("resonance", help="facet rotations where triplets merge into 4-mode sets")
    _add_common(sp, out_required=False)
    sp.set_defaults(func=cmd_resonance)

    sp = sub.add_parser("gain", help="analytic few-mode photon numbers and gain exponents")
    _add_common(sp, out_default="out/gain")
    sp.add_argument("--modes", type=int, choices=(2, 3, 4), dest="modes")
    sp.add_argument("--glc", type=float)
    sp.add_argument("--sweep", help="gain sweep as from:to:steps")
    sp.set_defaults(func=cmd_gain)

    sp = sub.add_parser("simulate", help="stochastic split-step run; writes maps and sections")
    _add_common(sp)
    sp.add_argument("--shots", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--format", choices=("csv", "bin"), default="bin",
                    help="also dump the full map as CSV when 'csv'")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="window counts, peak ratios, and gain-exponent fits from saved maps")
    sp.add_argument("--config", help="JSON configuration file merged over the packaged defaults")
    sp.add_argument("--maps", required=True, help="directory containing angular_spectrum.bin/.json")
    sp.add_argument("--windows", required=True, help="JSON file defining windows (and optional series)")
    sp.add_argument("--out", required=True, help="report JSON path")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("reproduce", help="one-command figure recipes with pinned parameters")
    sp.add_argument("figure", choices=("fig2", "fig3", "fig4", "fig8", "fig10"))
    _add_common(sp, out_default=None)
    sp.add_argument("--shots", type=int, help="override shots per simulated case")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for pointer, message in exc.problems:
            print(f"config error at {pointer}: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalInstabilityError, NoIntersectionError, FloatingPointError,
            np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
