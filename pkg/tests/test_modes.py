"""Few-mode Bogoliubov dynamics tests.

The eigen-gain identities are exact linear-algebra facts (eigenvalues of
path-graph adjacency matrices), so they are pinned at 1e-10. The fitted
gain exponents were frozen from a reference run of the sweep on the
default grid and double as regression pins.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdc.modes import (
    GOLDEN_RATIO,
    CouplingSpec,
    NonSymplecticError,
    TransferMatrix,
    build_generator,
    gain_exponent,
    gain_spectrum,
    mode_labels,
    photon_statistics,
    propagate,
)

SQRT2 = np.sqrt(2.0)

EXPONENT_3MODE_PIN = 1.414086791057329
EXPONENT_4MODE_PIN = 1.6178686928639578

GAIN = st.floats(min_value=0.1, max_value=3.0)
LENGTH = st.floats(min_value=0.2, max_value=2.0)
TOPOLOGY = st.sampled_from([2, 3, 4])


def spec(n, g=1.3, length=1.0, mismatch=0.0):
    return CouplingSpec(mode_count=n, g_per_mm=g, length_mm=length,
                        mismatch_per_mm=mismatch)


def test_spec_rejects_unsupported_mode_count():
    with pytest.raises(ValueError, match="2, 3, or 4"):
        CouplingSpec(mode_count=5, g_per_mm=1.0, length_mm=1.0)


def test_spec_rejects_negative_gain_and_length():
    with pytest.raises(ValueError, match=">= 0"):
        CouplingSpec(mode_count=2, g_per_mm=-0.1, length_mm=1.0)
    with pytest.raises(ValueError, match="positive"):
        CouplingSpec(mode_count=2, g_per_mm=1.0, length_mm=0.0)


def test_glc_is_gain_length_product():
    assert spec(2, g=2.5, length=1.6).glc == pytest.approx(4.0, abs=1e-15)


def test_generator_block_structure():
    s = spec(3, g=0.7, mismatch=0.4)
    gmat = build_generator(s)
    assert gmat.shape == (6, 6)
    np.testing.assert_allclose(gmat[:3, :3], 0.4j * np.eye(3), atol=1e-15)
    np.testing.assert_allclose(gmat[3:, 3:], -0.4j * np.eye(3), atol=1e-15)
    np.testing.assert_allclose(gmat[:3, 3:], gmat[3:, :3], atol=1e-15)


def test_two_mode_growth_is_pairwise_gain():
    rates = gain_spectrum(spec(2, g=1.3))
    np.testing.assert_allclose(rates, [1.3, 1.3, -1.3, -1.3], atol=1e-10)


def test_three_mode_growth_is_sqrt2_gain():
    g = 1.3
    rates = gain_spectrum(spec(3, g=g))
    assert rates.max() == pytest.approx(SQRT2 * g, abs=1e-10)
    assert sorted(abs(r) for r in rates)[:2] == pytest.approx([0.0, 0.0], abs=1e-10)


def test_four_mode_growth_is_golden_pair():
    g = 1.3
    rates = np.sort(gain_spectrum(spec(4, g=g)))[::-1]
    np.testing.assert_allclose(
        rates[:4],
        [GOLDEN_RATIO * g, GOLDEN_RATIO * g, g / GOLDEN_RATIO, g / GOLDEN_RATIO],
        atol=1e-10,
    )


def test_mismatch_slows_growth():
    matched = gain_spectrum(spec(3, g=1.0)).max()
    detuned = gain_spectrum(spec(3, g=1.0, mismatch=0.8)).max()
    assert detuned < matched


@given(n=TOPOLOGY, g=GAIN, length=LENGTH)
@settings(max_examples=60, deadline=None)
def test_transfer_matrix_is_symplectic(n, g, length):
    t = propagate(spec(n, g=g, length=length))
    d1, d2 = t.symplectic_defect()
    scale = max(1.0, float(np.abs(t.U).max()) ** 2)
    assert d1 <= 1e-10 * scale
    assert d2 <= 1e-10 * scale


def test_corrupted_transfer_raises():
    t = propagate(spec(2, g=1.0))
    bad = TransferMatrix(U=t.U * 1.01, V=t.V)
    with pytest.raises(NonSymplecticError, match="Bogoliubov"):
        photon_statistics(bad)


def test_two_mode_mean_is_sinh_squared():
    stats = photon_statistics(propagate(spec(2, g=1.7)))
    np.testing.assert_allclose(stats.mean, np.sinh(1.7) ** 2, rtol=1e-12)


def test_twin_beam_difference_variance_vanishes():
    stats = photon_statistics(propagate(spec(2, g=1.4)))
    var_diff = (stats.covariance[0, 0] + stats.covariance[1, 1]
                - 2.0 * stats.covariance[0, 1])
    assert abs(var_diff) <= 1e-9 * stats.covariance[0, 0]


def test_three_mode_conjugates_balanced():
    stats = photon_statistics(propagate(spec(3, g=2.0)))
    assert stats.mean[1] == pytest.approx(stats.mean[2], rel=1e-12)
    assert stats.mean[0] > stats.mean[1]


def test_four_mode_means_mirror_symmetric():
    stats = photon_statistics(propagate(spec(4, g=1.5)))
    assert stats.mean[0] == pytest.approx(stats.mean[3], rel=1e-10)
    assert stats.mean[1] == pytest.approx(stats.mean[2], rel=1e-10)


def test_four_mode_shared_to_outer_ratio_is_phi_squared():
    stats = photon_statistics(propagate(spec(4, g=6.0)))
    ratio = stats.mean[1] / stats.mean[0]
    assert ratio == pytest.approx(GOLDEN_RATIO ** 2, rel=1e-4)


def test_transfer_composes_over_length():
    s = spec(3, g=1.1, mismatch=0.3)
    half = propagate(s, length_mm=0.5)
    full = propagate(s)
    u = half.U @ half.U + half.V @ half.V.conj()
    v = half.U @ half.V + half.V @ half.U.conj()
    np.testing.assert_allclose(u, full.U, atol=1e-10)
    np.testing.assert_allclose(v, full.V, atol=1e-10)


def test_gain_exponent_triplet_pinned():
    fit = gain_exponent(3, np.linspace(4.0, 7.0, 7))
    assert fit.exponent == pytest.approx(EXPONENT_3MODE_PIN, abs=1e-9)
    assert fit.exponent == pytest.approx(SQRT2, abs=1e-3)
    assert not fit.warned


def test_gain_exponent_chain_pinned():
    fit = gain_exponent(4, np.linspace(4.0, 7.0, 7))
    assert fit.exponent == pytest.approx(EXPONENT_4MODE_PIN, abs=1e-9)
    assert fit.exponent == pytest.approx(GOLDEN_RATIO, abs=1e-3)
    assert not fit.warned


def test_gain_exponent_warns_outside_asymptotic_regime():
    with pytest.warns(UserWarning, match="below g l_c = 4"):
        fit = gain_exponent(3, [2.0, 3.0, 4.0])
    assert fit.warned
    with pytest.warns(UserWarning, match="spans < 1"):
        fit = gain_exponent(3, [5.0, 5.5])
    assert fit.warned


def test_gain_exponent_needs_two_points():
    with pytest.raises(ValueError, match="at least two"):
        gain_exponent(3, [5.0])


def test_mode_labels():
    assert mode_labels(2) == ("signal", "idler")
    assert mode_labels(3) == ("shared", "coupled1", "coupled2")
    assert mode_labels(4) == ("outer1", "shared1", "shared2", "outer2")
    with pytest.raises(ValueError, match="unsupported"):
        mode_labels(5)
