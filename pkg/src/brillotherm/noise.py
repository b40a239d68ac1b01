"""Laser frequency-noise calibration, its effect on thermometry, and sweep-dip spectra.

Power spectral densities are indexed by frequency in Hz.  A measured voltage
density S_VV maps onto frequency noise through S_ww = A * S_VV, with the
calibration tone's integral over its Hz-wide line equal to w^2 beta^2 / 4.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoFeatureError, PhysicsError

J0_FIRST_ZERO = 2.404825557695773


def bessel_j(n: int, x, terms=30):
    """J_n(x) from its power series; accurate to ~1e-15 for |x| < 3."""
    x = np.asarray(x, dtype=float)
    half = x / 2
    term = half**n / math.factorial(n)
    total = term.copy() if isinstance(term, np.ndarray) else term
    q = -half * half
    for k in range(1, terms):
        term = term * q / (k * (k + n))
        total = total + term
    return total


def sideband_ratio(beta):
    """[J1(beta) / J0(beta)]^2, the first-sideband to carrier power ratio."""
    return (bessel_j(1, beta) / bessel_j(0, beta)) ** 2


def eom_beta_from_sideband_ratio(p1_over_p0: float, tol=1e-15) -> float:
    """Modulation depth below the first zero of J0 for a measured sideband ratio."""
    ratio = float(p1_over_p0)
    if not (np.isfinite(ratio) and ratio >= 0):
        raise ConfigError("sideband ratio must be finite and non-negative")
    if ratio == 0:
        return 0.0
    target = math.sqrt(ratio)
    # J1/J0 rises monotonically from 0 to +inf on [0, first zero of J0)
    lo, hi = 0.0, J0_FIRST_ZERO
    beta = min(2 * target, 0.5 * (lo + hi))
    for _ in range(200):
        j0, j1 = bessel_j(0, beta), bessel_j(1, beta)
        g = j1 / j0 - target
        if g > 0:
            hi = beta
        else:
            lo = beta
        # d(J1/J0)/dbeta = 1 + (J1/J0)^2 - (J1/J0)/beta
        r = j1 / j0
        d = 1 + r * r - r / beta if beta > 0 else 0.5
        step = beta - g / d if d > 0 else 0.5 * (lo + hi)
        new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(new - beta) <= tol * max(beta, 1e-300):
            beta = new
            break
        beta = new
    return float(beta)


@dataclass
class FrequencyNoisePSD:
    freq: np.ndarray
    s_ww: np.ndarray
    band_stats: dict = field(default_factory=dict)
    n_floored: int = 0


def _line_power(freq, psd, center, half_width, floor_width=None):
    """Integrated line power above a median floor taken just outside the line."""
    freq = np.asarray(freq, dtype=float)
    psd = np.asarray(psd, dtype=float)
    inside = np.abs(freq - center) <= half_width
    fw = 4 * half_width if floor_width is None else floor_width
    ring = (np.abs(freq - center) > half_width) & (np.abs(freq - center) <= half_width + fw)
    if inside.sum() < 1:
        raise NoFeatureError("line window contains no samples")
    floor = float(np.median(psd[ring])) if ring.any() else 0.0
    df = np.gradient(freq)
    return float(np.sum((psd[inside] - floor) * df[inside])), floor


def calibrate_conversion(freq, psd, tone_freq, beta, half_width=None, min_snr=5.0) -> float:
    """Conversion A = S_ww / S_VV at the calibration tone.

    The tone of modulation depth ``beta`` at ``tone_freq`` (Hz) carries
    frequency-noise power w^2 beta^2 / 4 in its positive-frequency line.
    """
    freq = np.asarray(freq, dtype=float)
    psd = np.asarray(psd, dtype=float)
    if freq.shape != psd.shape or freq.size < 3:
        raise ConfigError("PSD arrays must match and hold at least three points")
    if not beta > 0:
        raise ConfigError("modulation depth must be positive")
    df = float(np.median(np.diff(freq)))
    hw = 3 * df if half_width is None else half_width
    power, floor = _line_power(freq, psd, tone_freq, hw)
    ring = (np.abs(freq - tone_freq) > hw) & (np.abs(freq - tone_freq) <= 5 * hw)
    noise = float(np.std(psd[ring])) * df * math.sqrt(max((np.abs(freq - tone_freq) <= hw).sum(), 1)) \
        if ring.sum() > 1 else 0.0
    if not power > max(min_snr * noise, 0.0) or power <= 0:
        raise NoFeatureError("calibration tone not resolved above the noise")
    w = 2 * np.pi * tone_freq
    return w**2 * beta**2 / (4 * power)


def laser_frequency_noise(freq, total_psd, shot_psd, dark_psd, A, band_center=None,
                          band_span=10e6, shot_includes_dark=True) -> FrequencyNoisePSD:
    """Excess (classical) laser frequency noise from MZI-discriminated spectra.

    The shot-noise reference is recorded on the same detector, so by default it
    already contains the dark noise and only shot is subtracted.  Negative
    excess values are floored at zero and counted.
    """
    arrays = [np.asarray(a, dtype=float) for a in (freq, total_psd, shot_psd)]
    f, tot, shot = arrays
    dark = np.zeros_like(tot) if dark_psd is None else np.asarray(dark_psd, dtype=float)
    if not (f.shape == tot.shape == shot.shape == np.broadcast_to(dark, tot.shape).shape):
        raise ConfigError("PSDs must share one frequency grid")
    excess = tot - shot - (0.0 if shot_includes_dark else dark)
    floored = int(np.sum(excess < 0))
    s = np.asarray(A, dtype=float) * np.maximum(excess, 0.0)
    stats = {}
    if band_center is not None:
        band = np.abs(f - band_center) <= band_span / 2
        if not band.any():
            raise ConfigError("statistics band contains no samples")
        avg = float(np.mean(s[band]))
        stats = {"center_hz": float(band_center), "span_hz": float(band_span), "avg": avg,
                 "avg_plus_std": avg + float(np.std(s[band])), "n_points": int(band.sum())}
    return FrequencyNoisePSD(f, s, stats, floored)


def photon_noise_number(s_ww, omega_m, photon_flux):
    """Noise photons at the mechanical offset, S_ww(Omega_m) |E0|^2 / Omega_m^2."""
    return s_ww * photon_flux / omega_m**2


def phase_noise_phonons(s_ww_at_peak, omega_m, photon_flux, C=None, gamma_m=None, gamma_eff=None,
                        kappa_ext2_over_kappa=0.5, kappa=None, delta_21=None):
    """Phonons added by laser phase noise for a red pump.

    The linewidth ratio defaults to the resonant value C / (1 + C).  Passing
    ``kappa`` or ``delta_21`` checks the resolved-sideband and
    ``delta_21 = omega_m`` assumptions and warns if they fail.
    """
    if kappa is not None and not omega_m > 10 * kappa:
        warnings.warn("phase-noise heating assumes resolved sidebands", RuntimeWarning, stacklevel=2)
    if delta_21 is not None and abs(delta_21 - omega_m) > 0.1 * (kappa or abs(omega_m) * 1e-4):
        warnings.warn("phase-noise heating assumes delta_21 = omega_m", RuntimeWarning, stacklevel=2)
    if gamma_m is not None and gamma_eff is not None:
        frac = (gamma_eff - gamma_m) / gamma_eff
    elif C is not None:
        frac = C / (1 + C)
    else:
        raise ConfigError("need either C or both linewidths")
    return frac * kappa_ext2_over_kappa * photon_noise_number(s_ww_at_peak, omega_m, photon_flux)


def _squash_terms(n_phi_photon, kappa_ext_over_kappa, C):
    r = 2 * kappa_ext_over_kappa
    return r * (1 - C / 2) * n_phi_photon, r * (1 + C / 2) * n_phi_photon


def inferred_from_true_occupancy(n_th, n_phi_photon, kappa_ext_over_kappa, C):
    """Occupancy a sideband-asymmetry measurement reports in the presence of phase noise."""
    a, b = _squash_terms(n_phi_photon, kappa_ext_over_kappa, C)
    den = np.asarray(n_th, dtype=float) - b
    if np.any(den <= 0):
        raise PhysicsError("phase-noise squashing exceeds the occupancy; inferred value undefined")
    return den / (1 + a + b)


def true_occupancy_from_inferred(n_inf, n_phi_photon, kappa_ext_over_kappa, C):
    """Invert 1/n_inf = (n + 1 + a) / (n - b) - 1 for the true occupancy n."""
    if not 0 <= C < 1:
        raise ConfigError("cooperativity must lie in [0, 1)")
    a, b = _squash_terms(n_phi_photon, kappa_ext_over_kappa, C)
    if 1 + a + b == 0:
        raise PhysicsError("degenerate phase-noise relation")
    return np.asarray(n_inf, dtype=float) * (1 + a + b) + b


@dataclass(frozen=True, eq=False)
class DipRecord:
    """Resonance-dip times from a triangular laser sweep (two dips per period).

    The frequency calibration is either ``sweep_rate`` (Hz/s) or the dip
    duration ``dip_width_s`` together with the cavity linewidth.
    """
    dip_times: np.ndarray
    sweep_rate: float | None = None
    cavity_linewidth: float | None = None
    dip_width_s: float | None = None

    def __post_init__(self):
        t = np.asarray(self.dip_times, dtype=float)
        if t.ndim != 1 or t.size < 8:
            raise ConfigError("need at least eight dip times")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("dip times must be strictly increasing")
        object.__setattr__(self, "dip_times", t)
        if self.rate is None:
            raise ConfigError("give sweep_rate or both cavity_linewidth and dip_width_s")

    @property
    def rate(self):
        if self.sweep_rate is not None:
            return float(self.sweep_rate)
        if self.cavity_linewidth is not None and self.dip_width_s:
            return float(self.cavity_linewidth) / float(self.dip_width_s)
        return None


@dataclass
class DipSpectrum:
    freq: np.ndarray
    psd: np.ndarray
    series: np.ndarray
    sample_rate: float
    rms: float


def cavity_frequency_series(rec: DipRecord, phase=0) -> tuple:
    """Cavity-frequency excursions (Hz) sampled once per sweep period.

    Dips of the same sweep direction (every second dip) are paired; the
    deviations of their separations from the sweep period, accumulated, give
    the cavity frequency divided by the sweep rate.  The accumulated series is
    detrended by a least-squares line, which also fixes the period.
    """
    t = rec.dip_times
    same = t[phase::2]
    d = np.diff(same)
    period = float(np.median(d))
    if np.any(np.abs(d - period) > 0.25 * period) or np.any(np.diff(t) > 0.75 * period):
        raise ConfigError("dip sequence has gaps or missing dips")
    acc = np.concatenate([[0.0], np.cumsum(d)])
    k = np.arange(acc.size)
    slope, icpt = np.polyfit(k, acc, 1)
    series = (acc - (slope * k + icpt)) * rec.rate
    return series, 1.0 / slope


def sweep_dip_noise_spectrum(rec: DipRecord, phase=0) -> DipSpectrum:
    """One-sided periodogram (Hz^2/Hz) of the cavity frequency up to half the sweep rate."""
    series, fs = cavity_frequency_series(rec, phase)
    n = series.size
    spec = np.fft.rfft(series)
    psd = np.abs(spec) ** 2 / (fs * n)
    psd[1:] *= 2
    if n % 2 == 0:
        psd[-1] /= 2
    freq = np.fft.rfftfreq(n, 1 / fs)
    return DipSpectrum(freq, psd, series, fs, float(np.sqrt(np.sum(psd) * fs / n)))


def line_amplitude(spec: DipSpectrum, f_line, half_width_bins=10) -> float:
    """Sinusoid amplitude from the periodogram power summed around ``f_line``."""
    df = spec.sample_rate / spec.series.size
    i = int(round(f_line / df))
    lo, hi = max(i - half_width_bins, 1), min(i + half_width_bins + 1, spec.psd.size)
    return float(np.sqrt(2 * np.sum(spec.psd[lo:hi]) * df))


def synthetic_dips(n_periods, sweep_freq=2e3, sweep_span=50e6, modulation=None, white_rms=0.0,
                   seed=0, t_offset=0.25):
    """Dip times for a triangular sweep across a cavity whose frequency wanders.

    ``modulation`` is a callable t -> cavity frequency offset (Hz).  Returns the
    times and the sweep rate (Hz/s).
    """
    period = 1.0 / sweep_freq
    rate = 2 * sweep_span / period
    rng = np.random.default_rng(seed)
    white = white_rms * rng.standard_normal(2 * n_periods) if white_rms > 0 else np.zeros(2 * n_periods)
    times = []
    for k in range(n_periods):
        t0 = k * period
        # rising half: f = rate * (t - t0) - span/2 crosses the cavity at offset x
        for half, sign in ((0, 1), (1, -1)):
            tc = t0 + (t_offset + half * 0.5) * period
            x = (modulation(tc) if modulation is not None else 0.0) + white[2 * k + half]
            times.append(tc + sign * x / rate)
    return np.array(times), rate
