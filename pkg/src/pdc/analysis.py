"""Quantitative post-processing of simulated angular-spectral maps.

Hot-spot windows are rectangles in (vacuum wavelength, external angle).
Counts are integrated inside each window, optionally background-corrected
from designated background windows, and gain exponents are obtained from
straight-line fits of log counts versus the square root of pump energy,
with the enhancement quoted as the ratio of fitted slopes between a band
and a reference band.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .simulate import AngularSpectrum

__all__ = [
    "Window",
    "WindowClippedError",
    "HotspotReport",
    "GainFit",
    "CentroidResult",
    "window_counts",
    "extract_hotspots",
    "fit_gain_exponent",
    "hotspot_centroid",
    "DEFAULT_WINDOW_DLAMBDA_NM",
    "DEFAULT_WINDOW_DTHETA_DEG",
]

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_DLAMBDA_NM = 5.0
DEFAULT_WINDOW_DTHETA_DEG = 0.3


class WindowClippedError(ValueError):
    """A window extends past the map edge; the message lists the overlap."""


@dataclass(frozen=True)
class Window:
    """Rectangular integration window over (wavelength, external angle).

    ``dlambda_nm`` and ``dtheta_deg`` are full widths; a pixel belongs to the
    window when |lambda - lambda_nm| < dlambda_nm / 2 and
    |theta - theta_x_deg| < dtheta_deg / 2.

    ``role`` marks how the window enters a report: "shared" and "coupled"
    windows are signal bands (their peak ratio is reported), "background"
    windows estimate the fluorescence floor.
    """

    name: str
    lambda_nm: float
    dlambda_nm: float
    theta_x_deg: float
    dtheta_deg: float
    role: str = "shared"

    def __post_init__(self):
        if self.dlambda_nm <= 0.0 or self.dtheta_deg <= 0.0:
            raise ValueError(f"window {self.name}: widths must be positive")
        if self.role not in ("shared", "coupled", "background"):
            raise ValueError(f"window {self.name}: unknown role {self.role!r}")

    def overlaps(self, other: "Window") -> bool:
        return (
            abs(self.lambda_nm - other.lambda_nm) < (self.dlambda_nm + other.dlambda_nm) / 2.0
            and abs(self.theta_x_deg - other.theta_x_deg) < (self.dtheta_deg + other.dtheta_deg) / 2.0
        )


@dataclass
class HotspotReport:
    """Integrated counts and peak positions per window.

    ``counts`` are background-corrected (clamped at zero) when background
    windows are present, otherwise raw sums. ``ratio`` is the peak intensity
    of the brightest shared window over that of the brightest coupled
    window; its uncertainty assumes thermal statistics of the per-pixel
    shot average (relative error sqrt(2 / shots)).
    """

    windows: tuple
    counts: dict
    raw_counts: dict
    pixel_counts: dict
    peaks: dict
    background_rate: float
    ratio: float | None
    ratio_uncertainty: float | None
    shots: int | None = None


@dataclass
class CentroidResult:
    """Mean-shift centroid of a hot spot along the transverse axis."""

    qx: float
    lambda_nm: float
    cell_size: float
    offset_cells: float
    iterations: int


@dataclass
class GainFit:
    """Slope-ratio gain exponent from log-count fits versus sqrt(E_p)."""

    exponent: float
    ci95: float
    slope: float
    slope_reference: float
    intercept: float
    intercept_reference: float
    sqrt_energy: np.ndarray
    used: np.ndarray
    used_reference: np.ndarray
    log_counts: np.ndarray = field(default=None, repr=False)
    log_counts_reference: np.ndarray = field(default=None, repr=False)


def _window_mask(spectrum: AngularSpectrum, window: Window) -> np.ndarray:
    """Boolean pixel mask of a window, validating it sits inside the map."""
    lam = spectrum.lambda_nm
    theta = spectrum.theta_x_ext_deg
    lam_lo = window.lambda_nm - window.dlambda_nm / 2.0
    lam_hi = window.lambda_nm + window.dlambda_nm / 2.0
    th_lo = window.theta_x_deg - window.dtheta_deg / 2.0
    th_hi = window.theta_x_deg + window.dtheta_deg / 2.0
    problems = []
    if lam_lo < lam.min():
        problems.append(f"{lam.min() - lam_lo:.3f} nm past the short-wavelength edge")
    if lam_hi > lam.max():
        problems.append(f"{lam_hi - lam.max():.3f} nm past the long-wavelength edge")
    cols = (np.abs(lam - window.lambda_nm) < window.dlambda_nm / 2.0)
    if cols.any():
        avail_lo = theta[0, cols].max()
        avail_hi = theta[-1, cols].min()
        if th_lo < avail_lo:
            problems.append(f"{avail_lo - th_lo:.4f} deg past the negative-angle edge")
        if th_hi > avail_hi:
            problems.append(f"{th_hi - avail_hi:.4f} deg past the positive-angle edge")
    if problems:
        raise WindowClippedError(
            f"window {window.name!r} is clipped by the map edge: " + "; ".join(problems)
        )
    return cols[None, :] & (np.abs(theta - window.theta_x_deg) < window.dtheta_deg / 2.0)


def window_counts(spectrum: AngularSpectrum, window: Window) -> float:
    """Raw integrated intensity inside one window."""
    return float(spectrum.intensity[_window_mask(spectrum, window)].sum())


def extract_hotspots(
    spectrum: AngularSpectrum,
    windows,
    shots: int | None = None,
) -> HotspotReport:
    """Integrate hot-spot windows on an angular-spectral map.

    Background windows (role "background") estimate a per-pixel fluorescence
    rate that is subtracted from the signal windows; net counts are clamped
    at zero. Peak positions are located on the raw map.

    Args:
        spectrum: the (qx, omega) intensity map with coordinate arrays.
        windows: iterable of Window (signal and background roles may mix;
            windows must be pairwise non-overlapping).
        shots: ensemble size behind the map, used for the ratio uncertainty.

    Raises:
        WindowClippedError: a window extends past the map edge.
        ValueError: two windows overlap.
    """
    windows = tuple(windows)
    for i, a in enumerate(windows):
        for b in windows[i + 1:]:
            if a.overlaps(b):
                raise ValueError(f"windows {a.name!r} and {b.name!r} overlap")
    masks = {w.name: _window_mask(spectrum, w) for w in windows}
    raw = {name: float(spectrum.intensity[m].sum()) for name, m in masks.items()}
    npix = {name: int(m.sum()) for name, m in masks.items()}

    bg_windows = [w for w in windows if w.role == "background"]
    bg_pixels = sum(npix[w.name] for w in bg_windows)
    bg_rate = (
        sum(raw[w.name] for w in bg_windows) / bg_pixels if bg_pixels else 0.0
    )

    counts = {}
    peaks = {}
    for w in windows:
        net = raw[w.name] - bg_rate * npix[w.name]
        counts[w.name] = max(net, 0.0)
        m = masks[w.name]
        vals = np.where(m, spectrum.intensity, -np.inf)
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        peaks[w.name] = (
            float(spectrum.lambda_nm[j]),
            float(spectrum.theta_x_ext_deg[i, j]),
            float(spectrum.intensity[i, j]),
        )

    shared_peaks = [peaks[w.name][2] for w in windows if w.role == "shared"]
    coupled_peaks = [peaks[w.name][2] for w in windows if w.role == "coupled"]
    ratio = ratio_err = None
    if shared_peaks and coupled_peaks:
        ratio = max(shared_peaks) / max(coupled_peaks)
        if shots:
            ratio_err = abs(ratio) * np.sqrt(2.0 / shots)
    return HotspotReport(
        windows=windows,
        counts=counts,
        raw_counts=raw,
        pixel_counts=npix,
        peaks=peaks,
        background_rate=bg_rate,
        ratio=ratio,
        ratio_uncertainty=ratio_err,
        shots=shots,
    )


def _weighted_line(x, y, w):
    """Weighted least-squares line fit returning slope, intercept, slope var."""
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    sw = np.sqrt(w)
    design = np.column_stack([x * sw, sw])
    coef, *_ = np.linalg.lstsq(design, y * sw, rcond=None)
    slope, intercept = coef
    resid = y - (slope * x + intercept)
    dof = len(x) - 2
    s2 = float((w * resid * resid).sum() / dof) if dof > 0 else 0.0
    xtwx = np.array([[(w * x * x).sum(), (w * x).sum()],
                     [(w * x).sum(), w.sum()]])
    var_slope = s2 * np.linalg.inv(xtwx)[0, 0]
    return float(slope), float(intercept), float(var_slope)


def fit_gain_exponent(
    energy_uj,
    counts,
    reference_counts,
    weights=None,
    reference_weights=None,
) -> GainFit:
    """Gain exponent of a band relative to a reference band.

    Fits log(counts) versus sqrt(E_p) for both series by (optionally
    weighted) least squares and returns the ratio of the slopes with a 95%
    confidence interval propagated from the per-fit residual variances.
    Global rescaling of either count series shifts only the intercept, so
    the exponent is invariant up to floating-point rounding of the logs.

    Args:
        energy_uj: pump energies (at least 4, spanning at least 2x in
            sqrt(E_p)).
        counts: band counts per energy; non-positive entries are dropped
            with a logged warning.
        reference_counts: reference-band counts on the same energies.
        weights: optional per-point weights (1/variance of log counts).
        reference_weights: same for the reference band.

    Raises:
        ValueError: fewer than 4 energies, insufficient span, or fewer than
            3 usable points in either band after dropping.
    """
    x = np.sqrt(np.asarray(energy_uj, dtype=float))
    if len(x) < 4:
        raise ValueError(f"need at least 4 energy points, got {len(x)}")
    if x.min() <= 0.0 or x.max() / x.min() < 2.0:
        raise ValueError(
            f"sqrt(E_p) must span at least a factor of 2, got {x.max() / max(x.min(), 1e-300):.3f}"
        )

    def usable(name, c):
        c = np.asarray(c, dtype=float)
        ok = np.isfinite(c) & (c > 0.0)
        if not ok.all():
            dropped = [f"E={e:g} counts={v:g}" for e, v in zip(np.asarray(energy_uj)[~ok], c[~ok])]
            logger.warning("dropping non-positive %s points: %s", name, "; ".join(dropped))
        if ok.sum() < 3:
            raise ValueError(f"fewer than 3 usable {name} points after dropping")
        return c, ok

    c_band, ok_b = usable("band", counts)
    c_ref, ok_r = usable("reference", reference_counts)
    wb = None if weights is None else np.asarray(weights, dtype=float)[ok_b]
    wr = None if reference_weights is None else np.asarray(reference_weights, dtype=float)[ok_r]
    sb, ib, vb = _weighted_line(x[ok_b], np.log(c_band[ok_b]), wb)
    sr, ir, vr = _weighted_line(x[ok_r], np.log(c_ref[ok_r]), wr)
    if sr == 0.0:
        raise ValueError("reference slope is zero; exponent undefined")
    exponent = sb / sr
    ci = 1.96 * abs(exponent) * np.sqrt(
        vb / sb**2 + vr / sr**2 if sb != 0.0 else vr / sr**2
    )
    return GainFit(
        exponent=float(exponent),
        ci95=float(ci),
        slope=sb,
        slope_reference=sr,
        intercept=ib,
        intercept_reference=ir,
        sqrt_energy=x,
        used=ok_b,
        used_reference=ok_r,
        log_counts=np.log(np.where(ok_b, c_band, np.nan)),
        log_counts_reference=np.log(np.where(ok_r, c_ref, np.nan)),
    )


def hotspot_centroid(
    spectrum: AngularSpectrum,
    lambda_nm: float,
    qx_guess: float,
    n_side_columns: int = 4,
    half_width_cells: int = 8,
    iterations: int = 6,
) -> CentroidResult:
    """Transverse centroid of a hot spot near a predicted position.

    Averages the map over 2 n + 1 wavelength columns around the target,
    then runs a mean-shift iteration: a box of +-half_width_cells rows
    around the current center is re-centered on its intensity-weighted
    mean. The returned offset is the distance from the initial guess in
    grid cells.
    """
    lam = spectrum.lambda_nm
    qx = spectrum.qx
    j0 = int(np.argmin(np.abs(lam - lambda_nm)))
    lo_j = max(j0 - n_side_columns, 0)
    hi_j = min(j0 + n_side_columns + 1, len(lam))
    profile = spectrum.intensity[:, lo_j:hi_j].mean(axis=1)
    dq = float(qx[1] - qx[0])
    center = float(np.argmin(np.abs(qx - qx_guess)))
    for _ in range(iterations):
        i = int(round(center))
        lo = max(i - half_width_cells, 0)
        hi = min(i + half_width_cells + 1, len(qx))
        w = np.clip(profile[lo:hi], 0.0, None)
        total = w.sum()
        if total <= 0.0:
            break
        center = float((np.arange(lo, hi) * w).sum() / total)
    q_centroid = float(np.interp(center, np.arange(len(qx)), qx))
    return CentroidResult(
        qx=q_centroid,
        lambda_nm=float(lam[j0]),
        cell_size=dq,
        offset_cells=float(center - (qx_guess - qx[0]) / dq),
        iterations=iterations,
    )
