"""Phase-matching geometry for parametric down-conversion with two tilted pumps.

Evaluates the longitudinal mismatches D_1/D_2, traces the phase-matching
surfaces Sigma_1/Sigma_2, solves the shared-mode and coupled-mode angular
positions (first-order formulas plus an exact intersection solver), finds the
hot-spot wavelength pairs where both mismatches vanish simultaneously, and
locates the facet rotations beta* at which a coupled mode coalesces with a
shared mode (the 3-mode to 4-mode transition).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .optics import (
    CrystalConfig,
    EvanescentModeError,
    ModeCoordinate,
    PumpPair,
    C_UM_PS,
    degenerate_frequency,
    extraordinary_index,
    internal_pump_tilt,
    optic_axis_direction,
    pump_wavevector,
    signal_wavenumber,
)

__all__ = [
    "DegenerateConfigurationError",
    "NoIntersectionError",
    "PMPoint",
    "PMSurface",
    "HotSpot",
    "SharedMode",
    "CoupledModes",
    "Resonance",
    "mismatch_D",
    "trace_pm_surface",
    "pump_rate",
    "shared_mode_qx",
    "shared_mode_position",
    "coupled_mode_positions",
    "find_hotspots",
    "find_resonance",
    "rebuild_pumps_for_beta",
    "external_tilts",
]

DEFAULT_BAND_NM = (550.0, 850.0)


class DegenerateConfigurationError(ValueError):
    """The two pumps are coincident; quantities requiring distinct tilts diverge."""


class NoIntersectionError(ValueError):
    """No solution inside the analysis band; carries the nearest approach found."""

    def __init__(self, message, nearest=None):
        super().__init__(message)
        self.nearest = nearest


@dataclass(frozen=True)
class PMPoint:
    """A refined point on a phase-matching surface."""

    lambda_nm: float
    theta_x_ext_deg: float
    theta_y_ext_deg: float
    branch: str
    d1: float
    d2: float
    qx: float
    qy: float
    omega: float


@dataclass(frozen=True)
class PMSurface:
    """Traced surface points plus a diagnostic for empty traces."""

    points: tuple
    min_abs_mismatch: float

    def section(self, qy: float = 0.0, atol: float = 1e-12) -> tuple:
        """Points lying on one transverse-y plane (default: the theta_y=0 cut)."""
        return tuple(p for p in self.points if abs(p.qy - qy) <= atol)


@dataclass(frozen=True)
class HotSpot:
    """A mode where both pump mismatches vanish simultaneously.

    ``lambda_s_nm``, ``qx`` and ``omega`` locate the doubly phase-matched
    mode itself, on whichever side of degeneracy its root lies (``omega``
    keeps its sign); ``lambda_i_nm`` is the energy conjugate where the
    paired photons of both processes appear. ``partial`` marks pairs whose
    conjugate falls outside the analysis band.
    """

    lambda_s_nm: float
    lambda_i_nm: float
    qx: float
    omega: float
    tangency: bool = False
    partial: bool = False


@dataclass(frozen=True)
class SharedMode:
    """Shared-mode angular position at one signal frequency offset.

    ``theta_x_int_rad`` is the first-order (paraxial) prediction; ``qx_exact``
    comes from the exact D1 = D2 intersection and ``paraxial_error_rad`` is
    the (signed) difference first-order minus exact, reported rather than
    hidden.
    """

    omega: float
    theta_x_int_rad: float
    theta_x_ext_deg: float
    qx_exact: float
    theta_x_exact_int_rad: float
    paraxial_error_rad: float
    theta_y_int_rad: float | None
    theta_y_ext_deg: float | None


@dataclass(frozen=True)
class CoupledModes:
    """Coupled-mode angular positions at one signal frequency offset."""

    omega: float
    theta_1x_int_rad: float
    theta_2x_int_rad: float
    theta_1x_ext_deg: float
    theta_2x_ext_deg: float


@dataclass(frozen=True)
class Resonance:
    """A facet rotation where a coupled mode coalesces with the shared mode."""

    beta_deg: float
    branch: str


def _signal_leg_kz(qx, qy, omega, crystal, pump_nm):
    """Vectorized k_sz with NaN (not an error) on evanescent entries."""
    k_s = signal_wavenumber(omega, crystal, pump_nm)
    ksq = k_s * k_s - qx * qx - qy * qy
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.where(ksq > 0.0, ksq, np.nan))


def mismatch_D(
    pump_index: int,
    mode: ModeCoordinate,
    pumps: PumpPair,
    crystal: CrystalConfig,
) -> float:
    """Longitudinal wave-vector mismatch D_j for one pump.

    D_j = k_sz(q, omega) + k_sz(Q_j - q, -omega) - k_jz, with the idler leg at
    the conjugate frequency and transverse momentum Q_j - q.

    Raises:
        EvanescentModeError: naming the leg (signal or idler) that has no
            propagating solution.
    """
    wave = pump_wavevector(pump_index, pumps, crystal)
    pump_nm = pumps.wavelength_nm
    s = _signal_leg_kz(mode.qx, mode.qy, mode.omega, crystal, pump_nm)
    if np.isnan(s):
        raise EvanescentModeError(
            f"signal leg evanescent at q=({mode.qx:.4f},{mode.qy:.4f}) rad/um, "
            f"omega={mode.omega:.2f} rad/ps"
        )
    i = _signal_leg_kz(wave.Q - mode.qx, -mode.qy, -mode.omega, crystal, pump_nm)
    if np.isnan(i):
        raise EvanescentModeError(
            f"idler leg evanescent at q=({wave.Q - mode.qx:.4f},{-mode.qy:.4f}) rad/um, "
            f"omega={-mode.omega:.2f} rad/ps"
        )
    return float(s + i - wave.k_z)


def _mismatch_scalar(pump_index, qx, qy, omega, pumps, crystal):
    """Mismatch as a plain float with NaN on evanescent legs (for root scans)."""
    wave = pump_wavevector(pump_index, pumps, crystal)
    s = _signal_leg_kz(qx, qy, omega, crystal, pumps.wavelength_nm)
    i = _signal_leg_kz(wave.Q - qx, -qy, -omega, crystal, pumps.wavelength_nm)
    return s + i - wave.k_z


def band_omegas(band_nm=DEFAULT_BAND_NM, pump_wavelength_nm: float = 352.0, n: int = 601):
    """Signal frequency offsets spanning a vacuum-wavelength band (ascending)."""
    w0 = degenerate_frequency(pump_wavelength_nm)
    lam_lo, lam_hi = min(band_nm), max(band_nm)
    om_hi = 2.0 * np.pi * C_UM_PS / (lam_lo / 1000.0) - w0
    om_lo = 2.0 * np.pi * C_UM_PS / (lam_hi / 1000.0) - w0
    return np.linspace(om_lo, om_hi, n)


def omega_to_lambda_nm(omega, pump_wavelength_nm: float = 352.0):
    """Vacuum signal wavelength for a frequency offset."""
    w = degenerate_frequency(pump_wavelength_nm) + np.asarray(omega, dtype=float)
    lam = 2.0 * np.pi * C_UM_PS / w * 1000.0
    return lam if lam.ndim else float(lam)


def external_theta_deg(q, omega, pump_wavelength_nm: float = 352.0):
    """External angle (deg) of a signal mode from conserved transverse momentum."""
    w = degenerate_frequency(pump_wavelength_nm) + np.asarray(omega, dtype=float)
    s = np.clip(np.asarray(q, dtype=float) * C_UM_PS / w, -1.0, 1.0)
    th = np.degrees(np.arcsin(s))
    return th if th.ndim else float(th)


def trace_pm_surface(
    pump_index: int,
    pumps: PumpPair,
    crystal: CrystalConfig,
    qx_values=None,
    qy_values=(0.0,),
    band_nm=DEFAULT_BAND_NM,
    n_omega: int = 241,
    tol: float = 1e-10,
) -> PMSurface:
    """Trace one phase-matching surface Sigma_j as a refined point cloud.

    For every transverse grid node the mismatch is scanned along the
    frequency axis; bracketed sign changes are refined by bisection to
    |D_j| < tol. Points are emitted in deterministic order (by qy, qx,
    then omega).

    Args:
        pump_index: 1 or 2.
        pumps, crystal: configuration.
        qx_values: transverse grid along x (default 161 nodes over +-0.75 rad/um).
        qy_values: transverse planes along y (default: the theta_y = 0 section).
        band_nm: vacuum wavelength band scanned along the frequency axis.
        n_omega: frequency samples per node.
        tol: mismatch tolerance of the refined roots.

    Returns:
        PMSurface with the point tuple; when no phase matching exists in the
        band the tuple is empty and ``min_abs_mismatch`` reports how close the
        scan came.
    """
    if qx_values is None:
        qx_values = np.linspace(-0.75, 0.75, 161)
    omegas = band_omegas(band_nm, pumps.wavelength_nm, n_omega)
    pump_nm = pumps.wavelength_nm
    branch = f"sigma{pump_index}"
    points = []
    min_abs = np.inf
    for qy in qy_values:
        for qx in qx_values:
            vals = _mismatch_scalar(pump_index, qx, qy, omegas, pumps, crystal)
            finite = np.isfinite(vals)
            if finite.any():
                min_abs = min(min_abs, float(np.nanmin(np.abs(vals))))
            sign = np.sign(vals)
            for i in range(len(omegas) - 1):
                if not (finite[i] and finite[i + 1]):
                    continue
                if sign[i] == 0.0:
                    root = omegas[i]
                elif sign[i] * sign[i + 1] < 0.0:
                    root = brentq(
                        lambda om: _mismatch_scalar(pump_index, qx, qy, om, pumps, crystal),
                        omegas[i],
                        omegas[i + 1],
                        xtol=1e-12,
                        rtol=8.9e-16,
                    )
                else:
                    continue
                d1 = _mismatch_scalar(1, qx, qy, root, pumps, crystal)
                d2 = _mismatch_scalar(2, qx, qy, root, pumps, crystal)
                dj = d1 if pump_index == 1 else d2
                if not np.isfinite(dj) or abs(dj) > tol:
                    continue
                points.append(
                    PMPoint(
                        lambda_nm=omega_to_lambda_nm(root, pump_nm),
                        theta_x_ext_deg=external_theta_deg(qx, root, pump_nm),
                        theta_y_ext_deg=external_theta_deg(qy, root, pump_nm),
                        branch=branch,
                        d1=float(d1) if np.isfinite(d1) else np.nan,
                        d2=float(d2) if np.isfinite(d2) else np.nan,
                        qx=float(qx),
                        qy=float(qy),
                        omega=float(root),
                    )
                )
    return PMSurface(points=tuple(points), min_abs_mismatch=min_abs)


def pump_rate(pumps: PumpPair, crystal: CrystalConfig) -> float:
    """Rate of pump wave-number variation with transverse tilt.

    (k_p2 - k_p1) / (Q_2 - Q_1): the dimensionless parameter controlling how
    the shared-mode locus shifts against the coupled-mode loci.

    Raises:
        DegenerateConfigurationError: when the pumps are coincident.
    """
    w1 = pump_wavevector(1, pumps, crystal)
    w2 = pump_wavevector(2, pumps, crystal)
    dq = w2.Q - w1.Q
    if abs(dq) < 1e-9:
        raise DegenerateConfigurationError(
            "pumps have (nearly) equal transverse wave numbers; "
            "the tilt-variation rate is undefined"
        )
    return (w2.k - w1.k) / dq


def shared_mode_qx(omega: float, pumps: PumpPair, crystal: CrystalConfig) -> float:
    """Exact transverse position of the shared-mode locus: root of D1 - D2.

    Solved by bisection in qx at fixed omega; this is the oracle against
    which the first-order formula is compared.
    """

    def f(qx):
        d1 = _mismatch_scalar(1, qx, 0.0, omega, pumps, crystal)
        d2 = _mismatch_scalar(2, qx, 0.0, omega, pumps, crystal)
        return d1 - d2

    return brentq(f, -3.0, 3.0, xtol=1e-14)


def _shared_qx_grid(omegas, pumps, crystal, iterations: int = 60):
    """Vectorized bisection for the shared-mode qx over a frequency grid."""
    lo = np.full_like(omegas, -3.0)
    hi = np.full_like(omegas, 3.0)

    def f(qx):
        d1 = _mismatch_scalar(1, qx, 0.0, omegas, pumps, crystal)
        d2 = _mismatch_scalar(2, qx, 0.0, omegas, pumps, crystal)
        return d1 - d2

    flo = f(lo)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        take_lo = flo * fm <= 0.0
        hi = np.where(take_lo, mid, hi)
        lo = np.where(take_lo, lo, mid)
        flo = np.where(take_lo, flo, fm)
    return 0.5 * (lo + hi)


def _mean_pump_wavenumber(pumps, crystal):
    w1 = pump_wavevector(1, pumps, crystal)
    w2 = pump_wavevector(2, pumps, crystal)
    return 0.5 * (w1.k + w2.k)


def shared_mode_position(
    omega: float,
    pumps: PumpPair,
    crystal: CrystalConfig,
    solve_theta_y: bool = True,
) -> SharedMode:
    """Shared-mode angular position at one frequency offset.

    The x-angle follows the first-order formula
    theta_0x = (theta_p1 + theta_p2)/2 + rate * k_s(-omega)/k_s(omega),
    reported alongside the exact D1 = D2 intersection. The y-angle comes from
    intersecting the phase-matching surface at the exact x-position
    (D1 = 0 solved for qy).

    Raises:
        NoIntersectionError: when the surface does not reach this locus at
            this frequency (carries the nearest-approach mismatch).
    """
    pump_nm = pumps.wavelength_nm
    rate = pump_rate(pumps, crystal)
    k_s = signal_wavenumber(omega, crystal, pump_nm)
    k_i = signal_wavenumber(-omega, crystal, pump_nm)
    theta_mean = 0.5 * (pumps.theta1_rad + pumps.theta2_rad)
    theta_0x = theta_mean + rate * (k_i / k_s)

    qx_exact = shared_mode_qx(omega, pumps, crystal)
    theta_exact = float(np.arcsin(np.clip(qx_exact / k_s, -1.0, 1.0)))

    theta_y = None
    theta_y_ext = None
    if solve_theta_y:
        def d1_of_qy(qy):
            return _mismatch_scalar(1, qx_exact, qy, omega, pumps, crystal)

        d0 = d1_of_qy(0.0)
        qy_hi = 0.95 * np.sqrt(max(k_s * k_s - qx_exact * qx_exact, 0.0))
        d_hi = d1_of_qy(qy_hi)
        if np.isfinite(d0) and np.isfinite(d_hi) and d0 * d_hi <= 0.0:
            qy_root = brentq(d1_of_qy, 0.0, qy_hi, xtol=1e-14)
            theta_y = float(np.arcsin(np.clip(qy_root / k_s, -1.0, 1.0)))
            theta_y_ext = external_theta_deg(qy_root, omega, pump_nm)
        else:
            qy_scan = np.linspace(0.0, qy_hi, 256)
            vals = np.abs(d1_of_qy(qy_scan))
            nearest = float(np.nanmin(vals)) if np.isfinite(vals).any() else np.nan
            raise NoIntersectionError(
                f"no phase-matched theta_y at omega={omega:.2f} rad/ps along the "
                f"shared locus; nearest |D1| = {nearest:.3e} rad/um",
                nearest=nearest,
            )

    return SharedMode(
        omega=float(omega),
        theta_x_int_rad=float(theta_0x),
        theta_x_ext_deg=external_theta_deg(k_s * np.sin(theta_0x), omega, pump_nm),
        qx_exact=float(qx_exact),
        theta_x_exact_int_rad=theta_exact,
        paraxial_error_rad=float(theta_0x - theta_exact),
        theta_y_int_rad=theta_y,
        theta_y_ext_deg=theta_y_ext,
    )


def coupled_mode_positions(
    omega: float,
    pumps: PumpPair,
    crystal: CrystalConfig,
) -> CoupledModes:
    """Coupled-mode x-angles at one frequency offset (first-order formula).

    theta_{1,2}x = (theta_p1 + theta_p2)/2
                   +- (theta_p1 - theta_p2)/2 * k_p / k_s(omega) - rate,
    with k_p the mean pump wave number. The y-angle equals the shared mode's.
    """
    pump_nm = pumps.wavelength_nm
    rate = pump_rate(pumps, crystal)
    k_s = signal_wavenumber(omega, crystal, pump_nm)
    k_p = _mean_pump_wavenumber(pumps, crystal)
    theta_mean = 0.5 * (pumps.theta1_rad + pumps.theta2_rad)
    half_diff = 0.5 * (pumps.theta1_rad - pumps.theta2_rad)
    theta_1 = theta_mean + half_diff * (k_p / k_s) - rate
    theta_2 = theta_mean - half_diff * (k_p / k_s) - rate
    return CoupledModes(
        omega=float(omega),
        theta_1x_int_rad=float(theta_1),
        theta_2x_int_rad=float(theta_2),
        theta_1x_ext_deg=external_theta_deg(k_s * np.sin(theta_1), omega, pump_nm),
        theta_2x_ext_deg=external_theta_deg(k_s * np.sin(theta_2), omega, pump_nm),
    )


def find_hotspots(
    pumps: PumpPair,
    crystal: CrystalConfig,
    band_nm=DEFAULT_BAND_NM,
    n_scan: int = 1201,
    tangency_tol: float = 1e-8,
) -> tuple:
    """Hot-spot wavelength pairs: modes with D1 = D2 = 0 on the theta_y=0 cut.

    Along the shared locus qx*(omega) the residual g(omega) = D1(qx*, omega)
    is scanned across the band. Transversal roots are bracketed and refined;
    tangential contacts (double roots, the signature of the resonance
    condition) are caught as local minima of |g| refined below
    ``tangency_tol``. A family detected from both of its (approximately
    conjugate) roots is reported once, at the exact root; entries are
    ordered by the matched mode's wavelength.

    Returns:
        Tuple of HotSpot entries (possibly empty off the phase-matched band).
    """
    omegas = band_omegas(band_nm, pumps.wavelength_nm, n_scan)
    qxs = _shared_qx_grid(omegas, pumps, crystal)
    g = _mismatch_scalar(1, qxs, 0.0, omegas, pumps, crystal)

    def g_of(om):
        q = shared_mode_qx(om, pumps, crystal)
        return _mismatch_scalar(1, q, 0.0, om, pumps, crystal)

    roots = []
    finite = np.isfinite(g)
    for i in range(len(omegas) - 1):
        if not (finite[i] and finite[i + 1]):
            continue
        if g[i] == 0.0:
            roots.append((float(omegas[i]), False))
        elif g[i] * g[i + 1] < 0.0:
            om = brentq(g_of, omegas[i], omegas[i + 1], xtol=1e-10)
            roots.append((float(om), False))
    # Tangential contacts: interior local minima of |g| that refine to ~0.
    absg = np.abs(g)
    for i in range(1, len(omegas) - 1):
        if not (finite[i - 1] and finite[i] and finite[i + 1]):
            continue
        if absg[i] <= absg[i - 1] and absg[i] <= absg[i + 1] and absg[i] < 1e-3:
            res = minimize_scalar(
                lambda om: abs(g_of(om)),
                bounds=(omegas[i - 1], omegas[i + 1]),
                method="bounded",
                options={"xatol": 1e-10},
            )
            if res.fun < tangency_tol:
                roots.append((float(res.x), True))

    # Deduplicate (a root may be found by both paths; a transversal detection
    # wins over a tangency flag) and fold pairs to omega >= 0.
    dedup = []
    dom = omegas[1] - omegas[0]
    for om, tang in sorted(roots):
        merged = False
        for j, (o, t) in enumerate(dedup):
            if abs(om - o) < 0.75 * dom:
                dedup[j] = (o, t and tang)
                merged = True
                break
        if not merged:
            dedup.append((om, tang))

    lam_lo, lam_hi = min(band_nm), max(band_nm)
    spots = []
    seen = []
    for om, tang in dedup:
        # A family detected from both its blue- and red-side roots (the locus
        # is only approximately antisymmetric in frequency) is reported once.
        if any(abs(abs(om) - abs(o)) < 0.75 * dom for o in seen):
            continue
        seen.append(om)
        lam_s = omega_to_lambda_nm(om, pumps.wavelength_nm)
        lam_i = omega_to_lambda_nm(-om, pumps.wavelength_nm)
        q_at = shared_mode_qx(om, pumps, crystal)
        spots.append(
            HotSpot(
                lambda_s_nm=float(lam_s),
                lambda_i_nm=float(lam_i),
                qx=float(q_at),
                omega=float(om),
                tangency=tang,
                partial=not (lam_lo <= lam_i <= lam_hi),
            )
        )
    spots.sort(key=lambda h: h.lambda_s_nm)
    return tuple(spots)


def external_tilts(pumps: PumpPair, crystal: CrystalConfig) -> tuple[float, float]:
    """External tilt angles of the two pumps for the given crystal orientation."""
    axis = optic_axis_direction(crystal)
    out = []
    for th in (pumps.theta1_rad, pumps.theta2_rad):
        u = np.array([np.sin(th), 0.0, np.cos(th)])
        theta_oa = np.arccos(np.clip(np.dot(u, axis), -1.0, 1.0))
        n = extraordinary_index(pumps.wavelength_nm, theta_oa, crystal.sellmeier)
        out.append(float(np.arcsin(n * np.sin(th))))
    return out[0], out[1]


def rebuild_pumps_for_beta(
    pumps: PumpPair,
    crystal: CrystalConfig,
    beta_deg: float,
) -> tuple[PumpPair, CrystalConfig]:
    """Re-refract the pumps for a new facet rotation at fixed external tilts.

    The external geometry (beam directions outside the crystal) is the
    experimentally fixed quantity; rotating the crystal changes the
    extraordinary index seen by each beam and therefore its internal tilt.
    """
    ext1, ext2 = external_tilts(pumps, crystal)
    new_crystal = replace(crystal, beta_deg=beta_deg)
    th1 = 0.0 if ext1 == 0.0 else internal_pump_tilt(ext1, new_crystal, pumps.wavelength_nm)
    th2 = 0.0 if ext2 == 0.0 else internal_pump_tilt(ext2, new_crystal, pumps.wavelength_nm)
    return replace(pumps, theta1_rad=th1, theta2_rad=th2), new_crystal


def find_resonance(
    pumps: PumpPair,
    crystal: CrystalConfig,
    beta_range_deg=(-15.0, 15.0),
    step_deg: float = 0.25,
) -> tuple:
    """Facet rotations beta* satisfying the coalescence (resonance) condition.

    Roots of rate(beta) = -+ (theta_p2 - theta_p1)/2 are bracketed on a scan
    of the requested step and refined by bisection. The branch where the
    shared mode merges with the pump-1 coupled branch is labeled
    ``collinear-noncollinear``; the opposite-sign branch is
    ``collinear-nondegenerate``.

    Raises:
        NoIntersectionError: when no root lies in the range (carries the scan
            residuals as diagnostic).
    """

    ext1, ext2 = external_tilts(pumps, crystal)

    def residual(beta_deg, sign):
        c = replace(crystal, beta_deg=beta_deg)
        th1 = 0.0 if ext1 == 0.0 else internal_pump_tilt(ext1, c, pumps.wavelength_nm)
        th2 = 0.0 if ext2 == 0.0 else internal_pump_tilt(ext2, c, pumps.wavelength_nm)
        p = replace(pumps, theta1_rad=th1, theta2_rad=th2)
        return pump_rate(p, c) + sign * 0.5 * (th2 - th1)

    betas = np.arange(beta_range_deg[0], beta_range_deg[1] + 0.5 * step_deg, step_deg)
    found = []
    for sign, label in ((+1.0, "collinear-noncollinear"), (-1.0, "collinear-nondegenerate")):
        vals = np.array([residual(b, sign) for b in betas])
        for i in range(len(betas) - 1):
            if vals[i] == 0.0:
                found.append(Resonance(float(betas[i]), label))
            elif vals[i] * vals[i + 1] < 0.0:
                root = brentq(lambda b: residual(b, sign), betas[i], betas[i + 1], xtol=1e-7)
                found.append(Resonance(float(root), label))
    if not found:
        raise NoIntersectionError(
            f"no resonance in beta range {beta_range_deg} at step {step_deg} deg",
            nearest=None,
        )
    return tuple(sorted(found, key=lambda r: r.beta_deg))
