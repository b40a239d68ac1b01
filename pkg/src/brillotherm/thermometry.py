"""From red/blue sideband peak areas to a thermal occupation with bounds."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .model import HBAR, KB, Side
from .spectra import SpectrumTrace, fit_baseline, normalized_axis

TWO_PI = 2 * np.pi


class Measured(NamedTuple):
    value: float
    sigma: float = 0.0


def as_measured(x) -> Measured:
    if isinstance(x, Measured):
        return x
    if isinstance(x, (tuple, list)):
        return Measured(float(x[0]), float(x[1]) if len(x) > 1 else 0.0)
    return Measured(float(x), 0.0)


def propagate(fn, values, sigmas):
    """Linear error propagation of ``fn(*values)`` with independent inputs."""
    values = [float(v) for v in values]
    f0 = fn(*values)
    var = 0.0
    for i, (v, s) in enumerate(zip(values, sigmas)):
        if s == 0:
            continue
        h = 1e-6 * max(abs(v), abs(s))
        up = list(values)
        dn = list(values)
        up[i] += h
        dn[i] -= h
        var += ((fn(*up) - fn(*dn)) / (2 * h) * s) ** 2
    return Measured(f0, math.sqrt(var))


class Method(str, enum.Enum):
    PAIR = "pair"
    WARMUP_RED = "warmup_red"
    WARMUP_BLUE = "warmup_blue"


@dataclass(frozen=True)
class CorrectionSet:
    """Per-run quantities that scale the observed sideband area.

    Each field is a (value, sigma) pair; rates are angular.  The coupling
    ratios are kappa_red^ext1/kappa_blue^ext1 and kappa_red^ext2/kappa_blue^ext2.
    """
    side: Side
    pump_power: Measured
    p_lo: Measured
    kappa_signal: Measured
    delta_detune: Measured
    gamma_eff: Measured
    kappa_ratio_ext1: Measured
    kappa_ratio_ext2: Measured
    kappa_pump: Measured

    def __post_init__(self):
        object.__setattr__(self, "side", Side.parse(self.side))
        for f in fields(self):
            if f.name == "side":
                continue
            m = as_measured(getattr(self, f.name))
            object.__setattr__(self, f.name, m)
            if not (np.isfinite(m.value) and np.isfinite(m.sigma) and m.sigma >= 0):
                raise ConfigError(f"correction {f.name} must be finite with a non-negative sigma")
            if f.name != "delta_detune" and not m.value > 0:
                raise ConfigError(f"correction {f.name} must be positive")

    FACTOR_NAMES = ("pump_power", "p_lo", "kappa_signal", "delta_detune", "gamma_eff",
                    "kappa_ratio_ext1", "kappa_ratio_ext2", "kappa_pump")

    def values(self):
        return [getattr(self, n).value for n in self.FACTOR_NAMES]

    def sigmas(self):
        return [getattr(self, n).sigma for n in self.FACTOR_NAMES]


def lorentzian_window_fraction(half_width_hz, gamma_eff_hz):
    """Fraction of a Lorentzian (FWHM ``gamma_eff_hz``) inside +-half_width."""
    return 2 / np.pi * np.arctan(2 * half_width_hz / gamma_eff_hz)


def default_half_width(gamma_eff_hz, kappa_hz):
    """20 effective linewidths, but no more than a tenth of the cavity linewidth."""
    return min(20 * gamma_eff_hz, kappa_hz / 10)


def integrate_peak(trace: SpectrumTrace, center, half_width, gamma_eff_hz=None,
                   kappa_hz=None, baseline_cov=None) -> Measured:
    """Trapezoidal area over [center - half_width, center + half_width] (Hz).

    The window edges are placed exactly by linear interpolation; the
    uncertainty follows from the per-point sigmas through the same weights.
    ``baseline_cov`` (covariance of the subtracted normalized-axis polynomial)
    adds the baseline uncertainty under the window.
    """
    lo, hi = center - half_width, center + half_width
    f = trace.freq
    if not half_width > 0 or lo < f[0] or hi > f[-1]:
        raise ConfigError("integration window exceeds the trace span")
    if gamma_eff_hz is not None and half_width < 5 * gamma_eff_hz:
        warnings.warn("integration half-width below 5 effective linewidths", RuntimeWarning,
                      stacklevel=2)
    if kappa_hz is not None and half_width > kappa_hz / 10:
        warnings.warn("integration half-width above a tenth of the cavity linewidth",
                      RuntimeWarning, stacklevel=2)
    w = _trapezoid_weights(f, lo, hi)
    area = float(w @ trace.power)
    var = float(np.sum((w * trace.sigma) ** 2))
    if baseline_cov is not None:
        cov = np.asarray(baseline_cov)
        v = np.polynomial.polynomial.polyvander(normalized_axis(f), cov.shape[0] - 1)
        j = w @ v
        var += float(j @ cov @ j)
    return Measured(area, float(np.sqrt(var)))


def _trapezoid_weights(f, lo, hi):
    """Weights w with sum(w * y) = trapezoid integral of the interpolant on [lo, hi]."""
    n = f.size
    w = np.zeros(n)
    i0 = int(np.searchsorted(f, lo, side="right")) - 1
    i1 = int(np.searchsorted(f, hi, side="left"))
    i0 = max(i0, 0)
    i1 = min(i1, n - 1)
    for i in range(i0, i1):
        a, b = max(f[i], lo), min(f[i + 1], hi)
        if b <= a:
            continue
        h = f[i + 1] - f[i]
        # values at a and b as linear combinations of y[i], y[i+1]
        ta, tb = (a - f[i]) / h, (b - f[i]) / h
        seg = b - a
        w[i] += seg * ((1 - ta) + (1 - tb)) / 2
        w[i + 1] += seg * (ta + tb) / 2
    return w


def _prefactor(side, pump_power, p_lo, kappa_signal, delta_detune, gamma_eff, r1, r2, kappa_pump):
    coupling = r1 / r2 if side is Side.RED else 1.0
    detuning = (kappa_signal / 2) ** 2 + delta_detune**2
    return pump_power * p_lo * coupling / (detuning * gamma_eff * kappa_pump**2)


def prefactor(corr: CorrectionSet) -> Measured:
    """Side-dependent factor dividing the raw area, up to a common constant.

    Coupling rates enter only as red/blue ratios: the red product
    kappa_red^ext1 * kappa_blue^ext2 relative to the blue product
    kappa_blue^ext1 * kappa_red^ext2 equals ratio_ext1 / ratio_ext2.
    """
    return propagate(lambda *v: _prefactor(corr.side, *v), corr.values(), corr.sigmas())


def corrected_integral(area, corr: CorrectionSet, half_width_hz=None) -> Measured:
    """Area divided by the correction prefactor.

    With ``half_width_hz`` the truncated Lorentzian tails outside the window
    are restored using the effective linewidth of ``corr``.
    """
    area = as_measured(area)

    def fn(a, *v):
        val = a / _prefactor(corr.side, *v)
        if half_width_hz is not None:
            val /= lorentzian_window_fraction(half_width_hz, v[4] / TWO_PI)
        return val

    if _prefactor(corr.side, *corr.values()) == 0:
        raise ConfigError("correction prefactor is zero")
    return propagate(fn, [area.value] + corr.values(), [area.sigma] + corr.sigmas())


def correction_breakdown(corr: CorrectionSet, half_width_hz=None) -> dict:
    """Every correction factor with its value and sigma, for provenance."""
    out = {n: {"value": getattr(corr, n).value, "sigma": getattr(corr, n).sigma}
           for n in corr.FACTOR_NAMES}
    pf = prefactor(corr)
    out["prefactor"] = {"value": pf.value, "sigma": pf.sigma}
    if half_width_hz is not None:
        out["half_width_hz"] = half_width_hz
        out["window_fraction"] = float(lorentzian_window_fraction(
            half_width_hz, corr.gamma_eff.value / TWO_PI))
    return out


@dataclass
class OccupancyReport:
    integral_r: Measured | None
    integral_b: Measured | None
    corrected_r: Measured
    corrected_b: Measured
    asymmetry: Measured
    n_th: float
    bound_lo: float
    bound_hi: float
    method: Method = Method.PAIR
    valid: bool = True
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def m(x):
            return None if x is None else {"value": _num(x.value), "sigma": _num(x.sigma)}
        return {
            "integral_r": m(self.integral_r), "integral_b": m(self.integral_b),
            "corrected_r": m(self.corrected_r), "corrected_b": m(self.corrected_b),
            "asymmetry": m(self.asymmetry), "n_th": _num(self.n_th),
            "bound_lo": _num(self.bound_lo), "bound_hi": _num(self.bound_hi),
            "method": self.method.value, "valid": self.valid, "provenance": self.provenance,
        }


def _num(v):
    """JSON-safe float: non-finite values become strings."""
    v = float(v)
    return v if math.isfinite(v) else str(v)


def occupancy_from_asymmetry(a):
    return 1.0 / (a - 1.0)


def occupancy_from_pair(corr_r, corr_b, integral_r=None, integral_b=None,
                        provenance=None) -> OccupancyReport:
    """n_th = 1/(I_b/I_r - 1) with bounds from the asymmetry error-bar extremes."""
    corr_r, corr_b = as_measured(corr_r), as_measured(corr_b)
    if not corr_r.value > 0:
        raise ConfigError("red corrected integral must be positive")
    a = propagate(lambda r, b: b / r, [corr_r.value, corr_b.value], [corr_r.sigma, corr_b.sigma])
    valid = a.value > 1
    n = occupancy_from_asymmetry(a.value) if a.value != 1 else math.inf
    up, dn = a.value + a.sigma, a.value - a.sigma
    lo = occupancy_from_asymmetry(up) if up > 1 else math.nan
    hi = occupancy_from_asymmetry(dn) if dn > 1 else math.inf
    return OccupancyReport(integral_r, integral_b, corr_r, corr_b, a, n, lo, hi,
                           Method.PAIR, valid, dict(provenance or {}))


def coupling_ratio_from_fano(mode1_port1, mode2_port1, mode1_port2, mode2_port2):
    """Red/blue coupling ratios from the S'*kappa_ext products of four Fano fits."""
    for f in (mode1_port1, mode2_port1, mode1_port2, mode2_port2):
        if not f.converged:
            raise ConfigError("coupling ratios need converged reflection fits")
    key = "s_prime_kappa_ext"

    def ratio(a, b):
        return propagate(lambda x, y: x / y, [a.params[key], b.params[key]],
                         [a.sigma(key), b.sigma(key)])

    return ratio(mode1_port1, mode2_port1), ratio(mode1_port2, mode2_port2)


class WarmupPoint(NamedTuple):
    n_th: float
    sigma: float
    valid: bool


def warmup_occupancy(ref: OccupancyReport, ref_corrected, new_corrected, side) -> WarmupPoint:
    """Single-sided occupation assuming a constant detection prefactor.

    Red: n = n_ref * I / I_ref.  Blue: n = (n_ref + 1) * I / I_ref - 1.
    """
    side = Side.parse(side)
    if not ref.valid:
        raise ConfigError("reference pair is not physical")
    iref, inew = as_measured(ref_corrected), as_measured(new_corrected)
    n_ref_sigma = 0.5 * (ref.bound_hi - ref.bound_lo) if math.isfinite(ref.bound_hi) else 0.0
    if side is Side.RED:
        def fn(n0, i0, i1):
            return n0 * i1 / i0
    else:
        def fn(n0, i0, i1):
            return (n0 + 1) * i1 / i0 - 1
    m = propagate(fn, [ref.n_th, iref.value, inew.value], [n_ref_sigma, iref.sigma, inew.sigma])
    return WarmupPoint(m.value, m.sigma, m.value >= 0)


def normalize_for_display(trace_r: SpectrumTrace, trace_b: SpectrumTrace,
                          corr_r: CorrectionSet, corr_b: CorrectionSet) -> SpectrumTrace:
    """Rescale the red peak (above its unit baseline) by the blue/red prefactor ratio."""
    k = prefactor(corr_b).value / prefactor(corr_r).value
    return trace_r.with_power(1 + (trace_r.power - 1) * k, trace_r.sigma * k)


def bose_einstein(omega, temperature):
    """Thermal occupation of a mode at angular frequency ``omega``."""
    return 1.0 / np.expm1(HBAR * np.asarray(omega) / (KB * np.asarray(temperature)))


def temperature_from_occupancy(omega, n):
    return HBAR * np.asarray(omega) / (KB * np.log1p(1.0 / np.asarray(n)))


def locate_peak(trace: SpectrumTrace, approx_center=None, search_half_width=None, smooth_bins=3):
    """Frequency of the peak maximum, refined by a parabola through three points."""
    y = ndimage.gaussian_filter1d(trace.power, smooth_bins) if smooth_bins else trace.power
    mask = np.ones(len(trace), dtype=bool)
    if approx_center is not None and search_half_width is not None:
        mask = np.abs(trace.freq - approx_center) <= search_half_width
    idx = np.flatnonzero(mask)
    i = idx[int(np.argmax(y[idx]))]
    if 0 < i < len(y) - 1:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            off = 0.5 * (y0 - y2) / den
            return float(trace.freq[i] + off * (trace.freq[i + 1] - trace.freq[i - 1]) / 2)
    return float(trace.freq[i])


@dataclass
class SideAnalysis:
    center_hz: float
    half_width_hz: float
    baseline_coeffs: np.ndarray
    area: Measured
    corrected: Measured


def analyze_side(trace: SpectrumTrace, corr: CorrectionSet, center_hz=None, half_width_hz=None,
                 exclusion_half_width_hz=None) -> SideAnalysis:
    """Baseline removal, peak integration and correction for one sideband trace."""
    kappa_hz = corr.kappa_signal.value / TWO_PI
    gamma_hz = corr.gamma_eff.value / TWO_PI
    if half_width_hz is None:
        half_width_hz = default_half_width(gamma_hz, kappa_hz)
    if center_hz is None:
        # smooth over roughly one linewidth and keep the window inside the trace
        df = float(np.median(np.diff(trace.freq)))
        span = 0.5 * (trace.freq[-1] - trace.freq[0]) - half_width_hz
        if span <= 0:
            raise ConfigError("trace is narrower than the integration window")
        mid = 0.5 * (trace.freq[-1] + trace.freq[0])
        # a preliminary baseline over the whole trace removes slopes before the search
        rough, _ = fit_baseline(trace)
        center_hz = locate_peak(trace.with_power(trace.power - rough), mid, span,
                                smooth_bins=max(gamma_hz / df / 2, 1.0))
    excl = exclusion_half_width_hz if exclusion_half_width_hz is not None else 5 * kappa_hz
    base, coeffs, cov = fit_baseline(trace, [(center_hz - excl, center_hz + excl)], return_cov=True)
    sub = trace.with_power(trace.power - base)
    area = integrate_peak(sub, center_hz, half_width_hz, gamma_hz, kappa_hz, baseline_cov=cov)
    return SideAnalysis(center_hz, half_width_hz, coeffs, area,
                        corrected_integral(area, corr, half_width_hz))


def analyze_pair(trace_r: SpectrumTrace, trace_b: SpectrumTrace, corr_r: CorrectionSet,
                 corr_b: CorrectionSet, centers=(None, None), half_widths=(None, None),
                 exclusion_half_width_hz=None) -> OccupancyReport:
    if corr_r.side is not Side.RED or corr_b.side is not Side.BLUE:
        raise ConfigError("corrections must be tagged red and blue respectively")
    for tr, side in ((trace_r, Side.RED), (trace_b, Side.BLUE)):
        if tr.meta.pump_side is not None and tr.meta.pump_side is not side:
            raise ConfigError(f"trace tagged {tr.meta.pump_side.value} supplied as {side.value}")
    ar = analyze_side(trace_r, corr_r, centers[0], half_widths[0], exclusion_half_width_hz)
    ab = analyze_side(trace_b, corr_b, centers[1], half_widths[1], exclusion_half_width_hz)
    prov = {
        "red": {"center_hz": ar.center_hz, "corrections": correction_breakdown(corr_r, ar.half_width_hz),
                "baseline_coeffs": [float(c) for c in ar.baseline_coeffs],
                "timestamps": [trace_r.meta.timestamp_start, trace_r.meta.timestamp_end]},
        "blue": {"center_hz": ab.center_hz, "corrections": correction_breakdown(corr_b, ab.half_width_hz),
                 "baseline_coeffs": [float(c) for c in ab.baseline_coeffs],
                 "timestamps": [trace_b.meta.timestamp_start, trace_b.meta.timestamp_end]},
    }
    return occupancy_from_pair(ar.corrected, ab.corrected, ar.area, ab.area, prov)
