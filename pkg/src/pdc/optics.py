"""Dispersion and geometry of a uniaxial nonlinear crystal.

Refractive indices from Sellmeier expansions, optic-axis orientation under
crystal rotation, extraordinary pump wave vectors, ordinary signal dispersion,
and internal/external angle conversion at the flat input facet.

Conventions used throughout the package:
    - wavelengths in the public API are vacuum wavelengths in nm,
    - transverse wave numbers q are in rad/um,
    - frequency offsets Omega are in rad/ps (signal offset; the idler
      conjugate sits at -Omega),
    - angles are radians unless the name carries a ``_deg`` suffix,
    - z is the crystal normal, pumps tilt in the (x, z) plane, and a positive
      facet rotation beta moves the optic-axis azimuth from +y toward -x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "C_UM_PS",
    "KATO_BBO_1986",
    "VACUUM_MEDIUM",
    "SellmeierSet",
    "CrystalConfig",
    "PumpPair",
    "ModeCoordinate",
    "PumpWave",
    "WavelengthRangeError",
    "TotalInternalReflectionError",
    "EvanescentModeError",
    "ordinary_index",
    "principal_extraordinary_index",
    "extraordinary_index",
    "optic_axis_direction",
    "pump_wavevector",
    "external_to_internal",
    "internal_to_external",
    "internal_pump_tilt",
    "signal_kz",
    "signal_wavenumber",
    "degenerate_frequency",
    "collinear_degenerate_cut_deg",
]

C_UM_PS = 299.792458
"""Speed of light in um/ps."""


class WavelengthRangeError(ValueError):
    """Wavelength outside the validity range of a Sellmeier expansion."""


class TotalInternalReflectionError(ValueError):
    """Internal angle too steep to refract out through the facet."""


class EvanescentModeError(ValueError):
    """Transverse momentum exceeds the total wave number (q^2 > k^2)."""


@dataclass(frozen=True)
class SellmeierSet:
    """Sellmeier coefficients for the two principal indices of a uniaxial medium.

    Each index follows n^2(lam) = A + B / (lam^2 - C) - D * lam^2 with lam the
    vacuum wavelength in um.

    Attributes:
        ordinary: (A, B, C, D) for the ordinary principal index.
        extraordinary: (A, B, C, D) for the extraordinary principal index.
        valid_range_um: inclusive (min, max) vacuum wavelength validity range.
    """

    ordinary: tuple[float, float, float, float]
    extraordinary: tuple[float, float, float, float]
    valid_range_um: tuple[float, float] = (0.22, 1.06)

    def _evaluate(self, coeffs, wavelength_nm):
        lam = np.asarray(wavelength_nm, dtype=float) / 1000.0
        lo, hi = self.valid_range_um
        if np.any(lam < lo) or np.any(lam > hi):
            bad = np.atleast_1d(lam)
            bad = bad[(bad < lo) | (bad > hi)]
            raise WavelengthRangeError(
                f"wavelength {1000.0 * float(bad.flat[0]):.1f} nm outside the "
                f"Sellmeier validity range [{1000.0 * lo:.0f}, {1000.0 * hi:.0f}] nm"
            )
        a, b, c, d = coeffs
        l2 = lam * lam
        n2 = a + b / (l2 - c) - d * l2
        n = np.sqrt(n2)
        return n if n.ndim else float(n)


KATO_BBO_1986 = SellmeierSet(
    ordinary=(2.7359, 0.01878, 0.01822, 0.01354),
    extraordinary=(2.3753, 0.01224, 0.01667, 0.01516),
    valid_range_um=(0.22, 1.06),
)
"""Beta barium borate dispersion (Kato, IEEE JQE 22, 1013 (1986)), lam in um."""

VACUUM_MEDIUM = SellmeierSet(
    ordinary=(1.0, 0.0, -1.0, 0.0),
    extraordinary=(1.0, 0.0, -1.0, 0.0),
    valid_range_um=(0.01, 100.0),
)
"""Identity medium (n = 1 everywhere), useful for checks."""


@dataclass(frozen=True)
class CrystalConfig:
    """Uniaxial crystal cut, length, and facet rotation.

    Attributes:
        cut_deg: angle between the optic axis and the facet normal z at beta=0.
        length_mm: crystal length along z.
        beta_deg: rotation of the crystal about z (positive moves the
            optic-axis azimuth from +y toward -x).
        sellmeier: dispersion data for the medium.
    """

    cut_deg: float
    length_mm: float = 4.0
    beta_deg: float = 0.0
    sellmeier: SellmeierSet = field(default=KATO_BBO_1986)

    def __post_init__(self):
        if not 0.0 < self.cut_deg < 90.0:
            raise ValueError(f"cut angle must lie in (0, 90) deg, got {self.cut_deg}")
        if self.length_mm <= 0.0:
            raise ValueError(f"crystal length must be positive, got {self.length_mm}")


@dataclass(frozen=True)
class PumpPair:
    """Two extraordinary pump beams tilted in the (x, z) plane.

    Tilt angles are internal (inside the crystal). Transverse wave numbers
    Q_j = k_pj * sin(theta_pj) are always derived, never stored.

    Attributes:
        wavelength_nm: common vacuum pump wavelength.
        theta1_rad: internal tilt of pump 1 (0 for normal incidence).
        theta2_rad: internal tilt of pump 2.
        waist_um: per-beam 1/e^2 intensity waist.
        duration_ps: per-beam pulse duration (Gaussian 1/e amplitude half width).
        energy_uj: per-beam energy in arbitrary calibration units.
    """

    wavelength_nm: float = 352.0
    theta1_rad: float = 0.0
    theta2_rad: float = 0.0
    waist_um: float = 297.0
    duration_ps: float = 1.2
    energy_uj: float = 1.0


@dataclass(frozen=True)
class ModeCoordinate:
    """A signal mode labeled by transverse momentum and frequency offset.

    Attributes:
        qx: transverse wave number along x (rad/um).
        qy: transverse wave number along y (rad/um).
        omega: signal frequency offset from degeneracy (rad/ps); the idler
            conjugate sits at -omega.
    """

    qx: float
    qy: float = 0.0
    omega: float = 0.0

    def signal_wavelength_nm(self, pump_wavelength_nm: float = 352.0) -> float:
        """Vacuum signal wavelength for this mode's frequency offset."""
        w = degenerate_frequency(pump_wavelength_nm) + self.omega
        return 2.0 * np.pi * C_UM_PS / w * 1000.0

    def external_theta_x_deg(self, pump_wavelength_nm: float = 352.0) -> float:
        """External propagation angle along x, from facet momentum conservation.

        The transverse momentum q is conserved across the flat facet, so the
        external direction sine is qx * lam_vac / (2 pi).
        """
        lam_um = self.signal_wavelength_nm(pump_wavelength_nm) / 1000.0
        return float(np.degrees(np.arcsin(self.qx * lam_um / (2.0 * np.pi))))

    def external_theta_y_deg(self, pump_wavelength_nm: float = 352.0) -> float:
        """External propagation angle along y (same mapping as x)."""
        lam_um = self.signal_wavelength_nm(pump_wavelength_nm) / 1000.0
        return float(np.degrees(np.arcsin(self.qy * lam_um / (2.0 * np.pi))))


class PumpWave(NamedTuple):
    """Extraordinary pump wave data: total, longitudinal, transverse wave number."""

    k: float
    k_z: float
    Q: float


def degenerate_frequency(pump_wavelength_nm: float) -> float:
    """Degenerate signal carrier frequency omega_p / 2 in rad/ps."""
    return np.pi * C_UM_PS / (pump_wavelength_nm / 1000.0)


def ordinary_index(wavelength_nm, sellmeier: SellmeierSet = KATO_BBO_1986):
    """Ordinary refractive index n_o at a vacuum wavelength.

    Args:
        wavelength_nm: vacuum wavelength in nm (scalar or array).
        sellmeier: dispersion data.

    Returns:
        n_o, same shape as the input.

    Raises:
        WavelengthRangeError: outside the declared validity range.
    """
    return sellmeier._evaluate(sellmeier.ordinary, wavelength_nm)


def principal_extraordinary_index(wavelength_nm, sellmeier: SellmeierSet = KATO_BBO_1986):
    """Principal extraordinary index n_e (propagation perpendicular to the axis)."""
    return sellmeier._evaluate(sellmeier.extraordinary, wavelength_nm)


def extraordinary_index(wavelength_nm, theta_oa, sellmeier: SellmeierSet = KATO_BBO_1986):
    """Direction-dependent extraordinary index of a uniaxial medium.

    1/n^2(theta) = cos^2(theta)/n_o^2 + sin^2(theta)/n_e^2 where theta is the
    angle between the wave normal and the optic axis. Continuous and
    pi-periodic in theta.

    Args:
        wavelength_nm: vacuum wavelength in nm (scalar or array).
        theta_oa: angle between wave vector and optic axis, rad.
        sellmeier: dispersion data.

    Returns:
        n(theta_oa), broadcast over the inputs.
    """
    n_o = ordinary_index(wavelength_nm, sellmeier)
    n_e = principal_extraordinary_index(wavelength_nm, sellmeier)
    ct = np.cos(theta_oa)
    st = np.sin(theta_oa)
    n = 1.0 / np.sqrt(ct * ct / (n_o * n_o) + st * st / (n_e * n_e))
    return n if getattr(n, "ndim", 0) else float(n)


def optic_axis_direction(crystal: CrystalConfig) -> np.ndarray:
    """Unit vector of the optic axis in the lab frame.

    At beta = 0 the axis lies in the (y, z) plane at the cut angle from z;
    rotating the crystal by beta about z moves the azimuth from +y toward -x.
    """
    cut = np.radians(crystal.cut_deg)
    beta = np.radians(crystal.beta_deg)
    return np.array(
        [
            -np.sin(beta) * np.sin(cut),
            np.cos(beta) * np.sin(cut),
            np.cos(cut),
        ]
    )


def pump_wavevector(pump_index: int, pumps: PumpPair, crystal: CrystalConfig) -> PumpWave:
    """Wave vector of one extraordinary pump beam.

    The index is evaluated on the wave-normal direction
    u = (sin theta_pj, 0, cos theta_pj); spatial walk-off enters only through
    this angle dependence (wave-normal surface approximation).

    Args:
        pump_index: 1 or 2.
        pumps: pump-pair parameters (internal tilts).
        crystal: crystal configuration.

    Returns:
        PumpWave(k, k_z, Q) in rad/um.
    """
    if pump_index == 1:
        theta = pumps.theta1_rad
    elif pump_index == 2:
        theta = pumps.theta2_rad
    else:
        raise ValueError(f"pump index must be 1 or 2, got {pump_index}")
    axis = optic_axis_direction(crystal)
    u = np.array([np.sin(theta), 0.0, np.cos(theta)])
    theta_oa = np.arccos(np.clip(np.dot(u, axis), -1.0, 1.0))
    n = extraordinary_index(pumps.wavelength_nm, theta_oa, crystal.sellmeier)
    k = 2.0 * np.pi / (pumps.wavelength_nm / 1000.0) * n
    return PumpWave(k=k, k_z=k * np.cos(theta), Q=k * np.sin(theta))


def external_to_internal(theta_ext: float, n: float) -> float:
    """Refract an external angle through the flat facet: sin(ext) = n sin(int)."""
    if abs(theta_ext) >= np.pi / 2:
        raise ValueError(f"external angle must satisfy |theta| < pi/2, got {theta_ext}")
    return float(np.arcsin(np.sin(theta_ext) / n))


def internal_to_external(theta_int: float, n: float) -> float:
    """Inverse facet refraction; fails when the ray is internally trapped."""
    s = n * np.sin(theta_int)
    if abs(s) > 1.0:
        raise TotalInternalReflectionError(
            f"n sin(theta_int) = {s:.4f} exceeds 1; the ray cannot exit the facet"
        )
    return float(np.arcsin(s))


def internal_pump_tilt(
    theta_ext: float,
    crystal: CrystalConfig,
    wavelength_nm: float = 352.0,
    iterations: int = 60,
) -> float:
    """Internal tilt of an extraordinary beam entering at an external angle.

    Because the extraordinary index depends on the refracted direction, the
    Snell condition sin(ext) = n(theta_int) sin(int) is a fixed-point problem;
    it is solved by direct iteration (the map is strongly contracting at the
    few-degree tilts used here).

    Args:
        theta_ext: external incidence angle in the (x, z) plane, rad.
        crystal: crystal configuration (provides axis orientation and medium).
        wavelength_nm: beam vacuum wavelength.
        iterations: fixed-point iteration count.

    Returns:
        Internal tilt angle, rad.
    """
    axis = optic_axis_direction(crystal)
    n_guess = extraordinary_index(wavelength_nm, np.radians(crystal.cut_deg), crystal.sellmeier)
    th = theta_ext / n_guess
    for _ in range(iterations):
        u = np.array([np.sin(th), 0.0, np.cos(th)])
        theta_oa = np.arccos(np.clip(np.dot(u, axis), -1.0, 1.0))
        n = extraordinary_index(wavelength_nm, theta_oa, crystal.sellmeier)
        th = np.arcsin(np.sin(theta_ext) / n)
    return float(th)


def signal_wavenumber(omega, crystal: CrystalConfig, pump_wavelength_nm: float = 352.0):
    """Ordinary signal wave number k_s(omega) = (w/c) n_o at offset omega."""
    w = degenerate_frequency(pump_wavelength_nm) + np.asarray(omega, dtype=float)
    lam_nm = 2.0 * np.pi * C_UM_PS / w * 1000.0
    k = w / C_UM_PS * ordinary_index(lam_nm, crystal.sellmeier)
    return k if k.ndim else float(k)


def signal_kz(
    mode: ModeCoordinate,
    crystal: CrystalConfig,
    pump_wavelength_nm: float = 352.0,
) -> float:
    """Longitudinal wave number of an ordinary signal mode.

    k_sz = sqrt(k_s^2 - qx^2 - qy^2), exact square-root dispersion with no
    paraxial truncation.

    Raises:
        EvanescentModeError: when q^2 > k_s^2 (no propagating solution).
    """
    k_s = signal_wavenumber(mode.omega, crystal, pump_wavelength_nm)
    q2 = mode.qx * mode.qx + mode.qy * mode.qy
    ksq = k_s * k_s - q2
    if ksq < 0.0:
        raise EvanescentModeError(
            f"|q| = {np.sqrt(q2):.4f} rad/um exceeds k_s = {k_s:.4f} rad/um "
            f"at omega = {mode.omega:.2f} rad/ps"
        )
    return float(np.sqrt(ksq))


def collinear_degenerate_cut_deg(
    pump_wavelength_nm: float = 352.0,
    sellmeier: SellmeierSet = KATO_BBO_1986,
) -> float:
    """Cut angle at which collinear degenerate type-I phase matching is exact.

    Solves n_e(lam_p, theta) = n_o(2 lam_p) by bisection. For the default
    dispersion data this lands near the nominal manufacturer cut of 33.48 deg.
    """
    from scipy.optimize import brentq

    n_target = ordinary_index(2.0 * pump_wavelength_nm, sellmeier)

    def f(theta):
        return extraordinary_index(pump_wavelength_nm, theta, sellmeier) - n_target

    theta = brentq(f, 0.05, 1.5, xtol=1e-14)
    return float(np.degrees(theta))
