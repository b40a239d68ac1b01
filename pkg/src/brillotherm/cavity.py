"""One-dimensional transfer-matrix model of a mirror / crystal / mirror stack.

Fields on either side of an element are (forward, backward) amplitude pairs;
the element matrix maps the right-hand pair onto the left-hand pair, so a
stack is the ordered product of its element matrices.  Frequencies are in Hz
and lengths in meters.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import constants
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import find_peaks

from .errors import ConfigError, PhysicsError, TrackingError

C_LIGHT = constants.c
QUARTZ_INDEX = 1.5346        # ordinary index near 1550 nm
MIRROR_POWER_REFLECTIVITY = 0.999
BRILLOUIN_FREQUENCY = 12.65e9


@dataclass(frozen=True)
class Layer:
    thickness: float
    index: complex = 1.0

    def __post_init__(self):
        if not self.thickness >= 0:
            raise ConfigError("layer thickness must be non-negative")
        if not np.real(self.index) > 0:
            raise ConfigError("refractive index must have a positive real part")


@dataclass(frozen=True)
class Mirror:
    """Thin partial reflector; ``r`` is seen from the left, ``-r`` from the right."""
    r: complex
    t: complex

    def __post_init__(self):
        if abs(self.r) ** 2 + abs(self.t) ** 2 > 1 + 1e-12:
            raise ConfigError("mirror violates |r|^2 + |t|^2 <= 1")
        if self.t == 0:
            raise ConfigError("mirror transmissivity must be non-zero")

    @classmethod
    def from_reflectivity(cls, power_r=MIRROR_POWER_REFLECTIVITY, loss=0.0, interior="left"):
        """Mirror with the hard-reflection phase (pi) on its ``interior`` side."""
        if interior not in ("left", "right"):
            raise ConfigError("mirror interior side must be 'left' or 'right'")
        r = np.sqrt(power_r)
        return cls(-r if interior == "left" else r, np.sqrt(1 - power_r - loss))


@dataclass(frozen=True)
class LayerStack:
    """Ordered elements between two outer media.

    Adjacent layers of different index meet at a bare Fresnel interface.
    """
    elements: tuple
    wavelength_center: float = 1550e-9
    n_left: float = 1.0
    n_right: float = 1.0

    def __post_init__(self):
        els = tuple(self.elements)
        for e in els:
            if not isinstance(e, (Layer, Mirror)):
                raise ConfigError("stack elements must be Layer or Mirror")
        object.__setattr__(self, "elements", els)

    @property
    def center_frequency(self) -> float:
        return C_LIGHT / self.wavelength_center

    @property
    def optical_length(self) -> float:
        return sum(np.real(e.index) * e.thickness for e in self.elements if isinstance(e, Layer))

    @property
    def mirrors(self):
        return [e for e in self.elements if isinstance(e, Mirror)]

    def with_thickness(self, layer_position: int, thickness: float) -> "LayerStack":
        els = list(self.elements)
        if not isinstance(els[layer_position], Layer):
            raise ConfigError("element to resize is not a layer")
        els[layer_position] = replace(els[layer_position], thickness=thickness)
        return replace(self, elements=tuple(els))


def _interface(r, t, rp=None, tp=None):
    rp = -r if rp is None else rp
    tp = t if tp is None else tp
    return np.array([[1.0, -rp], [r, t * tp - r * rp]], dtype=complex) / t


def fresnel(n1, n2):
    """(r, t, r', t') amplitude coefficients at normal incidence from n1 into n2."""
    r = (n1 - n2) / (n1 + n2)
    return r, 2 * n1 / (n1 + n2), -r, 2 * n2 / (n1 + n2)


def _scattering_sequence(stack: LayerStack):
    """Flatten the stack into ('iface', r, t, r', t') and ('prop', n, d) steps."""
    steps = []
    n_cur = stack.n_left
    for e in stack.elements:
        if isinstance(e, Mirror):
            steps.append(("iface", e.r, e.t, -e.r, e.t))
        else:
            if e.index != n_cur:
                steps.append(("iface",) + fresnel(n_cur, e.index))
                n_cur = e.index
            steps.append(("prop", e.index, e.thickness))
    if stack.n_right != n_cur:
        steps.append(("iface",) + fresnel(n_cur, stack.n_right))
    return steps


def transfer_matrix(stack: LayerStack, freqs) -> np.ndarray:
    """Stack matrix with shape (2, 2, len(freqs))."""
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    k0 = 2 * np.pi * f / C_LIGHT
    m = np.zeros((2, 2, f.size), dtype=complex)
    m[0, 0] = m[1, 1] = 1.0
    for step in _scattering_sequence(stack):
        if step[0] == "iface":
            a = _interface(*step[1:])
            m = np.einsum("ijf,jk->ikf", m, a)
        else:
            ph = step[1] * k0 * step[2]
            e_minus, e_plus = np.exp(-1j * ph), np.exp(1j * ph)
            m = np.stack([np.stack([m[0, 0] * e_minus, m[0, 1] * e_plus]),
                          np.stack([m[1, 0] * e_minus, m[1, 1] * e_plus])])
    return m


@dataclass
class StackSpectrum:
    freqs: np.ndarray
    r: np.ndarray
    t: np.ndarray
    port: int

    @property
    def transmission(self):
        return np.abs(self.t) ** 2 * self._power_ratio

    @property
    def reflection(self):
        return np.abs(self.r) ** 2

    _power_ratio: float = 1.0


def stack_spectrum(stack: LayerStack, freqs, port: int = 1) -> StackSpectrum:
    """Complex amplitude reflection and transmission for light entering at ``port``.

    Port 1 is the left side, port 2 the right side.
    """
    m = transfer_matrix(stack, freqs)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if port == 1:
        r, t = m[1, 0] / m[0, 0], 1 / m[0, 0]
        ratio = np.real(stack.n_right) / np.real(stack.n_left)
    elif port == 2:
        r, t = -m[0, 1] / m[0, 0], det / m[0, 0]
        ratio = np.real(stack.n_left) / np.real(stack.n_right)
    else:
        raise ConfigError("port must be 1 or 2")
    return StackSpectrum(np.atleast_1d(np.asarray(freqs, dtype=float)), r, t, port, ratio)


def power_transmission(stack: LayerStack, freqs) -> np.ndarray:
    m = transfer_matrix(stack, freqs)
    return np.abs(1 / m[0, 0]) ** 2 * np.real(stack.n_right) / np.real(stack.n_left)


@dataclass(frozen=True)
class Resonance:
    f0: float
    linewidth: float
    depth: float


def find_resonances(freqs, transmission, min_depth=0.5, min_contrast=2.0) -> list:
    """Transmission maxima refined by a parabola through the three top samples.

    Only peaks reaching ``min_depth`` of the highest one and rising at least
    ``min_contrast`` times above their surroundings count as fundamental modes.
    """
    f = np.asarray(freqs, dtype=float)
    y = np.asarray(transmission, dtype=float)
    if f.size < 3 or y.max() <= 0:
        return []
    idx, props = find_peaks(y, prominence=0)
    out = []
    for i, prom in zip(idx, props["prominences"]):
        if y[i] < min_depth * y.max() or y[i] < min_contrast * (y[i] - prom) or prom <= 0:
            continue
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den < 0 else 0.0
        h = 0.5 * (f[i + 1] - f[i - 1])
        f0 = f[i] + off * h
        peak = y1 - 0.25 * (y0 - y2) * off
        width = _fwhm(f, y, i, peak)
        if width is not None and width < 8 * h:
            warnings.warn("frequency grid under-resolves a resonance (fewer than 8 points per FWHM)",
                          RuntimeWarning, stacklevel=2)
        out.append(Resonance(float(f0), float(width) if width is not None else float("nan"),
                             float(peak)))
    return out


def _fwhm(f, y, i, peak):
    half = 0.5 * peak
    lo = i
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i
    while hi < y.size - 1 and y[hi] > half:
        hi += 1
    if y[lo] > half or y[hi] > half:
        return None
    fl = f[lo] + (half - y[lo]) * (f[lo + 1] - f[lo]) / (y[lo + 1] - y[lo])
    fh = f[hi - 1] + (half - y[hi - 1]) * (f[hi] - f[hi - 1]) / (y[hi] - y[hi - 1])
    return fh - fl


def free_spectral_range(stack: LayerStack) -> float:
    """Average longitudinal mode spacing c / 2 n L over the whole stack."""
    return C_LIGHT / (2 * stack.optical_length)


def _refine_peak(stack, f_guess, half_window):
    # search in offsets: the optimizer's relative tolerance would swamp absolute optical frequencies
    res = minimize_scalar(lambda u: -power_transmission(stack, f_guess + u)[0],
                          bounds=(-half_window, half_window), method="bounded",
                          options={"xatol": 1e-3})
    return float(f_guess + res.x)


def detect_modes(stack: LayerStack, f_lo, f_hi, step=None) -> np.ndarray:
    """Refined resonance frequencies of all fundamental modes in [f_lo, f_hi]."""
    if step is None:
        step = free_spectral_range(stack) * (1 - abs(stack.mirrors[0].r) ** 2) / (2 * np.pi) / 10 \
            if stack.mirrors else free_spectral_range(stack) / 1000
    f = np.arange(f_lo, f_hi, step)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = find_resonances(f, power_transmission(stack, f))
    return np.array([_refine_peak(stack, r.f0, 2 * step) for r in res])


def _local_mode(stack, f_pred, span, n=2001):
    loc = np.linspace(f_pred - span, f_pred + span, n)
    i = int(np.argmax(power_transmission(stack, loc)))
    return _refine_peak(stack, loc[i], 2 * span / (n - 1) * 2)


@dataclass
class ModeSpacingCurve:
    delta_l: np.ndarray
    spacing: np.ndarray
    pair: int = 0


def _track_mode(args):
    stack, layer_position, base, delta_l, f_start, span, fsr = args
    out = np.empty(delta_l.size)
    prev = prev2 = None
    for j, dl in enumerate(delta_l):
        s = stack.with_thickness(layer_position, base + dl)
        if prev is None:
            pred = f_start
        elif prev2 is None:
            pred = prev
        else:
            pred = 2 * prev - prev2
        f_new = _local_mode(s, pred, span)
        if abs(f_new - pred) > fsr / 4:
            # lost the mode: re-detect around the prediction and take the nearest
            cand = detect_modes(s, pred - fsr, pred + fsr)
            if cand.size == 0:
                raise TrackingError(f"no resonance near {pred:.6g} Hz at delta_l = {dl:.3g} m")
            f_new = float(cand[np.argmin(np.abs(cand - pred))])
        out[j] = f_new
        prev2, prev = prev, f_new
    return out


def _default_gap_position(stack):
    idx = [i for i, e in enumerate(stack.elements) if isinstance(e, Layer)]
    if not idx:
        raise ConfigError("stack has no layer to lengthen")
    return idx[-1]


def mode_frequencies_vs_length(stack: LayerStack, delta_l_grid, n_modes, f_center=None,
                               layer_position=None, jobs=1, span=None) -> np.ndarray:
    """Frequencies of ``n_modes`` consecutive modes near ``f_center`` along the grid.

    Only the layer at ``layer_position`` (default: the last layer, the gap to
    the back mirror) changes thickness.  Returns an array (len(grid), n_modes).
    """
    delta_l = np.asarray(delta_l_grid, dtype=float)
    if delta_l.ndim != 1 or delta_l.size == 0:
        raise ConfigError("length grid must be a non-empty 1-D array")
    if n_modes < 1:
        raise ConfigError("need at least one mode")
    pos = _default_gap_position(stack) if layer_position is None else layer_position
    base = stack.elements[pos].thickness
    f_center = stack.center_frequency if f_center is None else f_center
    fsr = free_spectral_range(stack)
    s0 = stack.with_thickness(pos, base + delta_l[0])
    modes = detect_modes(s0, f_center - (n_modes + 1) * fsr, f_center + (n_modes + 1) * fsr)
    if modes.size < n_modes:
        raise TrackingError("fewer resonances than requested near the centre frequency")
    first = int(np.clip(np.searchsorted(modes, f_center) - n_modes // 2, 0, modes.size - n_modes))
    start = modes[first:first + n_modes]
    if span is None:
        steps = np.abs(np.diff(delta_l)).max() if delta_l.size > 1 else 0.0
        # mode shift per unit length is about f / L; leave a generous margin
        span = max(20 * steps * f_center / (stack.optical_length), 50e6)
    tasks = [(stack, pos, base, delta_l, f0, span, fsr) for f0 in start]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            cols = list(ex.map(_track_mode, tasks))
    else:
        cols = [_track_mode(t) for t in tasks]
    return np.column_stack(cols)


def mode_spacing_vs_length(stack: LayerStack, delta_l_grid, n_pairs=1, f_center=None,
                           layer_position=None, jobs=1) -> list:
    """Spacing of every adjacent mode pair as the back gap changes."""
    track = mode_frequencies_vs_length(stack, delta_l_grid, n_pairs + 1, f_center,
                                       layer_position, jobs)
    dl = np.asarray(delta_l_grid, dtype=float)
    sp = np.diff(track, axis=1)
    return [ModeSpacingCurve(dl.copy(), sp[:, k], k) for k in range(n_pairs)]


def oscillation_period(curve: ModeSpacingCurve) -> float:
    """Mean distance between successive maxima of the spacing curve."""
    spl = CubicSpline(curve.delta_l, curve.spacing)
    ext = spl.derivative().roots(extrapolate=False)
    maxima = np.sort([x for x in ext if spl(x, 2) < 0])
    # merge maxima closer than a tenth of the sampled span (numerical ripples)
    if len(maxima):
        keep = [maxima[0]]
        for x in maxima[1:]:
            if x - keep[-1] > 0.1 * (curve.delta_l[-1] - curve.delta_l[0]) / 2:
                keep.append(x)
        maxima = np.array(keep)
    if len(maxima) < 2:
        raise PhysicsError("curve contains fewer than two maxima")
    return float(np.mean(np.diff(maxima)))


def max_gradient(curve: ModeSpacingCurve) -> float:
    """Largest |d spacing / d delta_l| (Hz per meter)."""
    return float(np.abs(np.gradient(curve.spacing, curve.delta_l)).max())


@dataclass
class InsensitivePoint:
    delta_l_star: float
    spacing_at_star: float
    gradient_residual: float
    max_gradient: float


def find_displacement_insensitive_point(curve: ModeSpacingCurve,
                                        target=BRILLOUIN_FREQUENCY) -> InsensitivePoint:
    """Extremum of the spacing curve whose spacing is nearest ``target`` (Hz)."""
    if curve.delta_l.size < 4:
        raise ConfigError("curve too short to locate an extremum")
    spl = CubicSpline(curve.delta_l, curve.spacing)
    d1 = spl.derivative()
    ext = [x for x in d1.roots(extrapolate=False)
           if curve.delta_l[0] < x < curve.delta_l[-1]]
    if not ext:
        raise PhysicsError("spacing curve has no extremum in the given range")
    vals = spl(ext)
    k = int(np.argmin(np.abs(vals - target)))
    x = float(ext[k])
    return InsensitivePoint(x, float(vals[k]), float(abs(d1(x))), max_gradient(curve))


def reference_stack(total_length=10.4e-3, crystal_length=5e-3, spacer=0.2e-3,
                    crystal_index=QUARTZ_INDEX, mirror_reflectivity=MIRROR_POWER_REFLECTIVITY,
                    wavelength=1550e-9) -> LayerStack:
    """Front mirror, vacuum spacer, bare crystal, vacuum gap, back mirror."""
    gap = total_length - crystal_length - spacer
    if gap <= 0:
        raise ConfigError("crystal and spacer do not fit in the total length")
    front = Mirror.from_reflectivity(mirror_reflectivity, interior="right")
    back = Mirror.from_reflectivity(mirror_reflectivity, interior="left")
    return LayerStack((front, Layer(spacer, 1.0), Layer(crystal_length, crystal_index),
                       Layer(gap, 1.0), back), wavelength)


def pair_extremum_spacing(stack: LayerStack, f_center=None, layer_position=None, n_grid=64,
                          period=None):
    """Largest spacing of the mode pair nearest ``f_center`` over one oscillation period."""
    pos = _default_gap_position(stack) if layer_position is None else layer_position
    period = stack.wavelength_center * 0.85 if period is None else period
    grid = np.linspace(0, period, n_grid)
    track = mode_frequencies_vs_length(stack, grid, 2, f_center, pos)
    sp = track[:, 1] - track[:, 0]
    curve = ModeSpacingCurve(grid, sp)
    spl = CubicSpline(grid, sp)
    ext = [x for x in spl.derivative().roots(extrapolate=False) if spl(x, 2) < 0]
    if not ext:
        return float(sp.max()), float(grid[int(np.argmax(sp))]), curve
    vals = spl(ext)
    k = int(np.argmax(vals))
    return float(vals[k]), float(ext[k]), curve


def tune_length_to_target(stack: LayerStack, target=BRILLOUIN_FREQUENCY, search=0.6e-3,
                          tol_hz=1e6, layer_position=None, f_center=None):
    """Change the back gap so the spacing maximum coincides with ``target``.

    Returns (tuned stack, spacing maximum, delta_l of the maximum within one
    period).  The maximum spacing scales roughly as 1/L, so a root is
    bracketed over +-``search`` meters of gap change.
    """
    pos = _default_gap_position(stack) if layer_position is None else layer_position
    base = stack.elements[pos].thickness

    def h(dg):
        s, _, _ = pair_extremum_spacing(stack.with_thickness(pos, base + dg), f_center, pos)
        return s - target

    lo, hi = -min(search, 0.9 * base), search
    h_lo, h_hi = h(lo), h(hi)
    if np.sign(h_lo) == np.sign(h_hi):
        raise PhysicsError("target spacing not reachable within the length search range")
    dg = brentq(h, lo, hi, xtol=1e-10, rtol=1e-12, maxiter=60)
    tuned = stack.with_thickness(pos, base + dg)
    s, x, _ = pair_extremum_spacing(tuned, f_center, pos)
    if abs(s - target) > tol_hz:
        warnings.warn(f"tuned spacing misses the target by {abs(s - target):.3g} Hz",
                      RuntimeWarning, stacklevel=2)
    return tuned, s, x
