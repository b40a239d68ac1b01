"""Probe-transmission and heterodyne sideband spectra, noise and baselines."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InstabilityError
from .model import (Side, SystemParams, check_stability, cooperativity, coupling_rates,
                    resonant_backaction)


@dataclass(frozen=True)
class TraceMeta:
    rbw_hz: float | None = None
    pump_side: Side | None = None
    n_averages: int = 1
    timestamp_start: str | None = None
    timestamp_end: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pump_side is not None:
            object.__setattr__(self, "pump_side", Side.parse(self.pump_side))
        if int(self.n_averages) < 1:
            raise ConfigError("n_averages must be at least 1")


@dataclass(frozen=True, eq=False)
class SpectrumTrace:
    freq: np.ndarray
    power: np.ndarray
    sigma: np.ndarray | None = None
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __post_init__(self):
        freq = np.asarray(self.freq, dtype=float)
        power = np.asarray(self.power, dtype=float)
        sigma = np.zeros_like(power) if self.sigma is None else np.asarray(self.sigma, dtype=float)
        if freq.ndim != 1 or freq.shape != power.shape or sigma.shape != power.shape:
            raise ConfigError("trace arrays must be one-dimensional and of equal length")
        if freq.size == 0:
            raise ConfigError("trace is empty")
        if np.any(np.diff(freq) <= 0):
            raise ConfigError("trace frequencies must be strictly increasing")
        if not (np.all(np.isfinite(power)) and np.all(np.isfinite(freq))):
            raise ConfigError("trace contains non-finite values")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ConfigError("trace uncertainties must be finite and non-negative")
        object.__setattr__(self, "freq", freq)
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "sigma", sigma)

    def __len__(self):
        return self.freq.size

    def with_power(self, power, sigma=None) -> "SpectrumTrace":
        return replace(self, power=power, sigma=self.sigma if sigma is None else sigma)


@dataclass(frozen=True)
class NoiseModel:
    """Additive baseline polynomial plus white Gaussian fluctuations.

    ``poly_coeffs`` are in increasing order and act on the normalized
    frequency axis returned by :func:`normalized_axis`.
    """
    baseline_level: float = 0.0
    poly_coeffs: tuple = ()
    rng_seed: int = 0

    def __post_init__(self):
        if not self.baseline_level >= 0:
            raise ConfigError("noise baseline level must be non-negative")
        if len(self.poly_coeffs) > 3:
            raise ConfigError("baseline polynomial is limited to order 2")
        object.__setattr__(self, "poly_coeffs", tuple(float(c) for c in self.poly_coeffs))


def normalized_axis(freq):
    """Map a frequency grid affinely onto [-1, 1]."""
    freq = np.asarray(freq, dtype=float)
    mid = 0.5 * (freq[0] + freq[-1])
    half = 0.5 * (freq[-1] - freq[0])
    return (freq - mid) / (half if half > 0 else 1.0)


def transmission_lineshape(omega, delta_21, kappa, a0, mech_terms, side):
    """|I_T|^2 for probe offsets ``omega`` and mechanical terms (omega_m, gamma_m, g)."""
    omega = np.asarray(omega, dtype=float)
    s = Side.parse(side).sign
    den = kappa / 2 - 1j * (omega - delta_21)
    for om, gm, g in mech_terms:
        den = den + s * g**2 / (gm / 2 - 1j * (omega - om))
    return np.abs(a0 * (kappa / 2) / den) ** 2


def omit_omia_transmission(params: SystemParams, probe_offsets, a0=1.0) -> SpectrumTrace:
    """OMIT (red pump) or OMIA (blue pump) probe transmission.

    ``probe_offsets`` are angular probe-pump detunings; the returned trace is
    indexed in Hz.
    """
    if params.pump.detuning != 0:
        raise ConfigError("transmission model assumes a pump locked on resonance")
    g = coupling_rates(params)
    if params.pump.side is Side.BLUE:
        kappa = params.signal_mode.kappa
        for k, (gm, m) in enumerate(zip(g, params.mechanics)):
            if cooperativity(gm, kappa, m.gamma_m) >= 1:
                raise InstabilityError(f"OMIA mode {k} at or beyond cooperativity 1")
    terms = [(m.omega_m, m.gamma_m, gm) for m, gm in zip(params.mechanics, g)]
    probe_offsets = np.asarray(probe_offsets, dtype=float)
    power = transmission_lineshape(probe_offsets, params.delta_21, params.signal_mode.kappa,
                                   a0, terms, params.pump.side)
    return SpectrumTrace(probe_offsets / (2 * np.pi), power,
                         meta=TraceMeta(pump_side=params.pump.side))


def sideband_peak_terms(params: SystemParams):
    """Per-mode (omega_eff, gamma_eff, amplitude) of the heterodyne peak.

    The amplitude multiplies the product of the cavity filter and the
    mechanical Lorentzian ``gamma_m / ((gamma_eff/2)^2 + x^2)``.
    """
    g = coupling_rates(params)
    check_stability(params, g)
    out = []
    for k, mech in enumerate(params.mechanics):
        ba = resonant_backaction(params, k, g)
        occ = mech.n_th if params.pump.side is Side.RED else mech.n_th + 1
        out.append((ba.omega_eff, ba.gamma_eff, g[k] ** 2 * params.signal_mode.kappa_ext2 * occ))
    return out


def esa_power_spectrum(params: SystemParams, omega_grid, n_averages=1) -> SpectrumTrace:
    """Spectrum-analyzer power of the beat between scattered light and the LO.

    Backaction is evaluated at the bare mechanical frequency, so each peak is a
    fixed-width Lorentzian filtered by the signal-mode response.
    """
    det = params.detection
    if det is None:
        raise ConfigError("ESA spectrum needs a detection chain")
    sig = params.signal_mode
    omega = np.asarray(omega_grid, dtype=float)
    terms = sideband_peak_terms(params)
    base = det.beta * det.hbar * sig.omega * det.p_lo
    cav = 1.0 / ((sig.kappa / 2) ** 2 + (omega - (params.delta_21 - det.delta_lo)) ** 2)
    peak = np.zeros_like(omega)
    for (om_eff, gm_eff, amp), mech in zip(terms, params.mechanics):
        if det.rbw * 2 * np.pi > gm_eff / 5:
            warnings.warn("RBW is not small compared with the effective mechanical linewidth",
                          RuntimeWarning, stacklevel=2)
        peak += amp * cav * mech.gamma_m / ((gm_eff / 2) ** 2 + (omega - (om_eff - det.delta_lo)) ** 2)
    meta = TraceMeta(rbw_hz=det.rbw, pump_side=params.pump.side, n_averages=n_averages)
    return SpectrumTrace(omega / (2 * np.pi), base * (1 + peak), meta=meta)


def synthesize_trace(clean: SpectrumTrace, noise: NoiseModel) -> SpectrumTrace:
    """Add the baseline polynomial and averaged white noise to a clean trace."""
    power = clean.power.copy()
    if noise.poly_coeffs:
        power = power + np.polynomial.polynomial.polyval(normalized_axis(clean.freq),
                                                         noise.poly_coeffs)
    sigma = clean.sigma
    if noise.baseline_level > 0:
        rng = np.random.default_rng(noise.rng_seed)
        s = noise.baseline_level / np.sqrt(clean.meta.n_averages)
        power = power + s * rng.standard_normal(power.size)
        sigma = np.sqrt(sigma**2 + s**2)
    return clean.with_power(power, sigma)


def _outside(freq, windows):
    keep = np.ones(freq.size, dtype=bool)
    for lo, hi in windows:
        keep &= ~((freq >= min(lo, hi)) & (freq <= max(lo, hi)))
    return keep


def fit_baseline(trace: SpectrumTrace, exclusion_windows=(), order=2, return_cov=False):
    """Least-squares polynomial (normalized axis) through the non-excluded points.

    Points are weighted by their sigmas when all are positive; the coefficient
    covariance is then absolute, otherwise it is scaled by the residual variance.
    """
    keep = _outside(trace.freq, exclusion_windows)
    if keep.sum() < 10:
        raise ConfigError("fewer than 10 points remain outside the exclusion windows")
    x = normalized_axis(trace.freq)
    V = np.polynomial.polynomial.polyvander(x[keep], order)
    y = trace.power[keep]
    sig = trace.sigma[keep]
    weighted = np.all(sig > 0)
    w = 1 / sig if weighted else np.ones_like(y)
    coeffs, *_ = np.linalg.lstsq(V * w[:, None], y * w, rcond=None)
    baseline = np.polynomial.polynomial.polyval(x, coeffs)
    if not return_cov:
        return baseline, coeffs
    A = (V * w[:, None]).T @ (V * w[:, None])
    cov = np.linalg.inv(A)
    if not weighted:
        dof = max(keep.sum() - order - 1, 1)
        cov *= np.sum((y - V @ coeffs) ** 2) / dof
    return baseline, coeffs, cov


def subtract_baseline(trace: SpectrumTrace, exclusion_windows=(), order=2):
    baseline, coeffs = fit_baseline(trace, exclusion_windows, order)
    return trace.with_power(trace.power - baseline), coeffs


def normalize_baseline(trace: SpectrumTrace, exclusion_windows=(), order=2):
    """Divide a trace by its fitted baseline so the noise floor sits at one."""
    baseline, coeffs = fit_baseline(trace, exclusion_windows, order)
    return trace.with_power(trace.power / baseline, trace.sigma / np.abs(baseline)), coeffs
