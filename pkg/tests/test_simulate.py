"""Split-step simulator tests on reduced grids.

Exact invariants (unitarity, Parseval, semigroup composition, seed
determinism) are pinned at rounding-level tolerances; discretization
checks (dz halving, Manley-Rowe) use the tolerances the production grid
is required to meet. Grids are shrunk to keep the suite fast; none of
the tested properties depend on the grid extent.
"""

import warnings
from dataclasses import replace

import numpy as np
import pytest

from pdc.optics import collinear_degenerate_cut_deg
from pdc.simulate import (
    FieldGrid,
    GridResolutionWarning,
    NumericalInstabilityError,
    SimConfig,
    angular_spectrum,
    calibrate_coupling,
    far_field,
    init_pump,
    propagate,
    run_simulation,
    seed_noise,
    standard_config,
)


def small_config(**overrides):
    kw = dict(nx=64, nt=48, nz=40, glc=2.0, shots=1, seed=7, absorber=False)
    kw.update(overrides)
    return standard_config(**kw)


def total_power(grid):
    return float((np.abs(grid.data) ** 2).sum())


# -- grid guards ---------------------------------------------------------------

def test_default_spacings_emit_no_warnings():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        small_config()
    assert len(rec) == 0


def test_temporal_margin_warning():
    with pytest.warns(GridResolutionWarning, match=r"dt <= 5\.64 fs"):
        small_config(dt_fs=6.0)


def test_transverse_aliasing_warning():
    with pytest.warns(GridResolutionWarning) as rec:
        small_config(dx_um=5.0)
    assert any("aliasing" in str(w.message) and "use dx <= 2.72 um" in str(w.message)
               for w in rec)


def test_single_pump_skips_aliasing_guard():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        small_config(dx_um=5.0, two_pump=False)
    assert not any("aliasing" in str(w.message) for w in rec)


def test_config_validation():
    with pytest.raises(ValueError, match="nx must be >= 1"):
        small_config(nx=0)
    cfg = small_config()
    with pytest.raises(ValueError, match="active_pumps"):
        replace(cfg, active_pumps=(1, 3))


# -- pump and noise ------------------------------------------------------------

def test_waist_unresolvable_raises():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = small_config(dx_um=200.0)
    with pytest.raises(ValueError, match="waist.*unresolvable"):
        init_pump(cfg)


def test_stripe_period_unresolvable_raises():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = small_config(nx=16, nt=8, dx_um=40.0)
    with pytest.raises(ValueError, match=r"stripe period.*need dx < 5\.04"):
        init_pump(cfg)


def test_two_pump_beam_shows_transverse_stripes():
    cfg = small_config(nx=256)
    inten = np.abs(init_pump(cfg).data[:, 0, cfg.nt // 2]) ** 2
    core = inten[cfg.nx // 2 - 40: cfg.nx // 2 + 40]
    contrast = (core.max() - core.min()) / (core.max() + core.min())
    assert contrast > 0.95


def test_single_pump_beam_is_smooth():
    cfg = small_config(nx=256, two_pump=False)
    inten = np.abs(init_pump(cfg).data[:, 0, cfg.nt // 2]) ** 2
    core = inten[cfg.nx // 2 - 10: cfg.nx // 2 + 10]
    contrast = (core.max() - core.min()) / (core.max() + core.min())
    assert contrast < 0.01


def test_noise_variance_is_half_photon():
    cfg = small_config(nt=64, shots=8)
    noise = seed_noise(cfg)
    assert (np.abs(noise.data) ** 2).mean() == pytest.approx(0.5, abs=0.015)


def test_noise_chunks_match_full_draw_bitwise():
    cfg = small_config(nt=16, shots=8)
    full = seed_noise(cfg)
    chunk = seed_noise(cfg, shot_range=(2, 5))
    assert np.array_equal(chunk.data, full.data[2:5])


def test_noise_zero_variance_is_silent():
    cfg = small_config(nt=16, shots=2)
    assert total_power(seed_noise(cfg, variance=0.0)) == 0.0


def test_noise_master_seed_changes_draw():
    cfg = small_config(nt=16, shots=2)
    assert not np.array_equal(seed_noise(cfg, seed=1).data, seed_noise(cfg, seed=2).data)


# -- propagation invariants ----------------------------------------------------

def test_zero_gain_propagation_is_unitary():
    cfg = small_config(glc=0.0, shots=2)
    pump = init_pump(cfg)
    noise = seed_noise(cfg)
    out, pump_out = propagate(cfg, pump, noise, return_pump=True)
    assert total_power(out) == pytest.approx(total_power(noise), rel=1e-10)
    assert total_power(pump_out) == pytest.approx(total_power(pump), rel=1e-10)


def test_angular_spectrum_satisfies_parseval():
    cfg = small_config(shots=2)
    out = propagate(cfg, init_pump(cfg), seed_noise(cfg))
    spec = angular_spectrum(out, vacuum_subtract=False)
    direct = total_power(out) / out.data.shape[0]
    assert spec.intensity.sum() == pytest.approx(direct, rel=1e-10)


def test_propagation_composes_as_semigroup():
    cfg = small_config()
    noise = seed_noise(cfg)
    full = propagate(cfg, init_pump(cfg), noise)
    half = replace(
        cfg,
        crystal=replace(cfg.crystal, length_mm=cfg.crystal.length_mm / 2.0),
        nz=cfg.nz // 2,
        glc=cfg.glc / 2.0,
    )
    first, pump_mid = propagate(half, init_pump(half), noise, return_pump=True)
    second = propagate(half, pump_mid, first)
    defect = np.abs(second.data - full.data).max() / np.abs(full.data).max()
    assert defect <= 1e-10


def test_dz_halving_changes_energy_below_one_percent():
    cfg = small_config(glc=4.0)
    pump = init_pump(cfg)
    noise = seed_noise(cfg)
    coarse = total_power(propagate(replace(cfg, nz=100), pump, noise))
    fine = total_power(propagate(replace(cfg, nz=200), pump, noise))
    assert abs(coarse - fine) / fine < 0.01


def test_depleted_run_conserves_manley_rowe():
    cfg = small_config(depletion=True, glc=3.0, nz=60)
    pump = init_pump(cfg)
    seed = FieldGrid(
        data=np.full((1, cfg.nx, cfg.ny, cfg.nt), 0.05, dtype=complex),
        sim=cfg,
        kind="signal",
    )
    invariant_in = total_power(seed) + 2.0 * total_power(pump)
    out, pump_out = propagate(cfg, pump, seed, return_pump=True)
    invariant_out = total_power(out) + 2.0 * total_power(pump_out)
    depletion = 1.0 - total_power(pump_out) / total_power(init_pump(cfg))
    assert depletion > 0.05
    assert invariant_out == pytest.approx(invariant_in, rel=1e-3)


def test_instability_guard_aborts_on_divergence():
    cfg = small_config()
    bad_pump = FieldGrid(
        data=np.full((cfg.nx, cfg.ny, cfg.nt), np.inf, dtype=complex),
        sim=cfg,
        kind="pump",
    )
    with np.errstate(all="ignore"):
        with pytest.raises(NumericalInstabilityError, match="reduce dz"):
            propagate(cfg, bad_pump, seed_noise(cfg))


def test_evanescent_corners_are_counted_and_zeroed():
    cfg = small_config(dx_um=0.2, glc=0.5, nz=10)
    out = propagate(cfg, init_pump(cfg), seed_noise(cfg))
    assert out.meta["evanescent_signal_modes"] > 0
    assert out.meta["evanescent_pump_modes"] == 0
    assert np.isfinite(out.data).all()


# -- ensemble and outputs ------------------------------------------------------

def test_rerun_is_bit_reproducible():
    cfg = small_config(shots=4, glc=4.0, chunk_shots=2)
    a = run_simulation(cfg)
    b = run_simulation(cfg)
    assert np.array_equal(a.spectrum.intensity, b.spectrum.intensity)
    assert a.shots == 4


def test_spectrum_axes_are_sorted_and_labeled():
    cfg = small_config(shots=2, glc=4.0)
    spec = run_simulation(cfg).spectrum
    assert np.all(np.diff(spec.qx) > 0)
    assert np.all(np.diff(spec.omega) > 0)
    assert np.all(np.diff(spec.lambda_nm) < 0)
    assert spec.intensity.shape == (cfg.nx, cfg.nt)
    assert spec.theta_x_ext_deg.shape == (cfg.nx, cfg.nt)


def test_amplified_spectrum_outshines_vacuum():
    cfg = small_config(shots=2, glc=5.0)
    spec = run_simulation(cfg).spectrum
    peak = spec.intensity.max()
    assert peak > 10.0
    lam_peak = spec.lambda_nm[np.unravel_index(spec.intensity.argmax(), spec.intensity.shape)[1]]
    assert 600.0 < lam_peak < 850.0


def test_far_field_window_validation():
    cfg = small_config(shots=2)
    out = propagate(cfg, init_pump(cfg), seed_noise(cfg))
    with pytest.raises(ValueError, match="selects no grid column"):
        far_field(out, (100.0, 101.0))


def test_far_field_vacuum_subtraction_removes_floor():
    cfg = small_config(glc=0.0, shots=8)
    out = propagate(cfg, init_pump(cfg), seed_noise(cfg))
    raw = far_field(out, (600.0, 850.0))
    flat = far_field(out, (600.0, 850.0), vacuum_subtract=True)
    assert abs(flat.sum()) < 0.05 * raw.sum()


def test_calibrate_coupling_matches_analytic_value():
    cfg = small_config(glc=3.0)
    sigma = calibrate_coupling(cfg)
    assert sigma == pytest.approx(3.0 / cfg.length_um, rel=5e-3)


def test_calibrate_coupling_rejects_nonpositive_target():
    with pytest.raises(ValueError, match="positive"):
        calibrate_coupling(small_config(), target_glc=0.0)


def test_standard_config_geometry():
    cfg = standard_config(beta_deg=3.0, two_pump=False, nx=16, nt=8)
    assert cfg.active_pumps == (1,)
    assert cfg.crystal.beta_deg == 3.0
    assert cfg.crystal.cut_deg == pytest.approx(collinear_degenerate_cut_deg(), abs=1e-12)
    assert cfg.pumps.theta1_rad == 0.0
    assert cfg.pumps.theta2_rad > 0.0
