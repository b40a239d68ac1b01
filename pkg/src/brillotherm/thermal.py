"""Steady-state crystal temperature from an equivalent thermal circuit.

The crystal exchanges heat with its mount through a temperature-dependent
resistance and with mount and still by blackbody radiation.  Temperatures are
the circuit "voltages"; all values are in kelvin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoAdmissibleRootError


@dataclass(frozen=True)
class ThermalParams:
    """R(V_m) = r0 + r1/V_m + r2/V_m^2 and blackbody coefficients (W/K^4)."""
    r0: float = 0.0
    r1: float = 0.0
    r2: float = 0.0
    b_sc: float = 0.0
    b_mc: float = 0.0

    def __post_init__(self):
        vals = (self.r0, self.r1, self.r2, self.b_sc, self.b_mc)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ConfigError("thermal parameters must be finite and non-negative")
        if not (self.r0 + self.r1 + self.r2 > 0 or (self.b_sc > 0 and self.b_mc > 0)):
            raise ConfigError("crystal needs a conductive link or radiative links to both stages")


@dataclass(frozen=True, eq=False)
class WarmupSeries:
    times: np.ndarray
    v_m: np.ndarray
    v_s: np.ndarray

    def __post_init__(self):
        t, m, s = (np.asarray(a, dtype=float) for a in (self.times, self.v_m, self.v_s))
        if not (t.ndim == 1 and t.shape == m.shape == s.shape):
            raise ConfigError("warmup arrays must be one-dimensional and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("warmup times must be strictly increasing")
        if np.any(m <= 0) or np.any(s <= 0) or not np.all(np.isfinite(m + s)):
            raise ConfigError("warmup temperatures must be positive and finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "v_m", m)
        object.__setattr__(self, "v_s", s)


def thermal_resistance(v_m, p: ThermalParams):
    v_m = np.asarray(v_m, dtype=float)
    if np.any(v_m <= 0):
        raise ConfigError("mount temperature must be positive")
    return p.r0 + p.r1 / v_m + p.r2 / v_m**2


def quartic_coefficients(v_m, v_s, p: ThermalParams):
    """Coefficients (highest power first) of the steady-state quartic in V_c.

    With infinite resistance (no conductive link) the equation is divided by R
    first, leaving the pure radiative balance.
    """
    b = p.b_sc + p.b_mc
    rad = p.b_sc * v_s**4 + p.b_mc * v_m**4
    if p.r0 + p.r1 + p.r2 == 0:
        return np.array([b, 0.0, 0.0, 0.0, -rad])
    r = thermal_resistance(v_m, p)
    return np.array([r * b, 0.0, 0.0, 1.0, -(v_m + r * rad)])


def quartic_residual(v_c, v_m, v_s, p: ThermalParams):
    """Quartic residual scaled by its largest coefficient."""
    c = quartic_coefficients(v_m, v_s, p)
    return np.polyval(c, v_c) / np.max(np.abs(c))


def steady_state_crystal_temps(v_m, v_s, p: ThermalParams) -> np.ndarray:
    """Vectorized steady-state solve over paired arrays of mount and still temperatures.

    Each quartic is scanned over [min(V_m, V_s), max(V_m, V_s)] in 256 steps;
    the first sign change is bisected to 1e-12 relative and polished by one
    Newton step, so the smallest admissible root is returned.
    """
    v_m, v_s = np.broadcast_arrays(np.asarray(v_m, dtype=float), np.asarray(v_s, dtype=float))
    shape = v_m.shape
    v_m, v_s = v_m.ravel(), v_s.ravel()
    if np.any(~(v_m > 0)) or np.any(~(v_s > 0)):
        raise ConfigError("mount and still temperatures must be positive")
    out = v_m.copy()
    todo = (v_m != v_s) & ((p.b_sc > 0) | (p.b_mc > 0))
    if not todo.any():
        return out.reshape(shape)
    m, s = v_m[todo], v_s[todo]
    c = _coeff_rows(m, s, p)
    c /= np.max(np.abs(c), axis=1, keepdims=True)

    def f(x):
        return (((c[:, 0] * x + c[:, 1]) * x + c[:, 2]) * x + c[:, 3]) * x + c[:, 4]

    lo, hi = np.minimum(m, s), np.maximum(m, s)
    u = np.linspace(0.0, 1.0, 257)
    grid = lo[:, None] + (hi - lo)[:, None] * u[None, :]
    grid[:, -1] = hi  # the endpoint may itself be the root
    vals = f(grid.T).T
    # values within the rounding bound of the evaluation count as zeros
    mag = (((np.abs(c[:, 0, None]) * grid + np.abs(c[:, 1, None])) * grid + np.abs(c[:, 2, None])) * grid
           + np.abs(c[:, 3, None])) * grid + np.abs(c[:, 4, None])
    sgn = np.where(np.abs(vals) <= 16 * np.finfo(float).eps * mag, 0.0, np.sign(vals))
    change = (sgn[:, :-1] * sgn[:, 1:] <= 0)
    has = change.any(axis=1)
    if not has.all():
        k = int(np.flatnonzero(~has)[0])
        real = np.roots(c[k])
        real = np.sort(real[np.abs(real.imag) <= 1e-9 * np.abs(real)].real)
        raise NoAdmissibleRootError(
            f"no root of the steady-state quartic between {lo[k]:g} K and {hi[k]:g} K",
            real_roots=real)
    idx = np.argmax(change, axis=1)
    rows = np.arange(m.size)
    a, b = grid[rows, idx], grid[rows, idx + 1]
    fa = vals[rows, idx]
    exact = sgn[rows, idx] == 0
    for _ in range(200):
        if np.all((b - a) <= 1e-12 * np.maximum(np.abs(a), np.abs(b))):
            break
        mid = 0.5 * (a + b)
        fm = f(mid)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
    root = np.where(exact, grid[rows, idx], 0.5 * (a + b))
    d = ((4 * c[:, 0] * root + 3 * c[:, 1]) * root + 2 * c[:, 2]) * root + c[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        polished = root - f(root) / d
    better = (d != 0) & (polished >= lo) & (polished <= hi) & (np.abs(f(polished)) <= np.abs(f(root)))
    out[todo] = np.where(better, polished, root)
    return out.reshape(shape)


def _coeff_rows(v_m, v_s, p):
    b = p.b_sc + p.b_mc
    rad = p.b_sc * v_s**4 + p.b_mc * v_m**4
    z = np.zeros_like(v_m)
    if p.r0 + p.r1 + p.r2 == 0:
        return np.stack([np.full_like(v_m, b), z, z, z, -rad], axis=1)
    r = thermal_resistance(v_m, p)
    return np.stack([r * b, z, z, np.ones_like(v_m), -(v_m + r * rad)], axis=1)


def steady_state_crystal_temp(v_m, v_s, p: ThermalParams) -> float:
    """Smallest real root of the steady-state quartic between V_m and V_s."""
    return float(steady_state_crystal_temps(float(v_m), float(v_s), p)[()])


def warmup_sweep(series: WarmupSeries, p: ThermalParams) -> np.ndarray:
    return steady_state_crystal_temps(series.v_m, series.v_s, p)


@dataclass
class RegimePoint:
    params: ThermalParams
    v_c: np.ndarray
    rms_mount: float
    rms_still: float
    regime: str
    plateau_then_track: bool


def classify_track(v_c, v_m, v_s):
    """'mount', 'still' or 'intermediate' from the RMS distance to either stage."""
    rm = float(np.sqrt(np.mean((v_c - v_m) ** 2)))
    rs = float(np.sqrt(np.mean((v_c - v_s) ** 2)))
    frac = rm / (rm + rs) if rm + rs > 0 else 0.0
    regime = "mount" if frac < 1 / 3 else "still" if frac > 2 / 3 else "intermediate"
    return rm, rs, regime


def plateau_then_track(v_c, v_m, plateau_k=0.4, plateau_tol=0.2, track_tol=0.1):
    """True if V_c sits near ``plateau_k`` while V_m is below it and follows V_m above it."""
    low = v_m < plateau_k
    high = ~low
    if not low.any() or not high.any():
        return False
    ok_low = np.all(np.abs(v_c[low] - plateau_k) <= plateau_tol * plateau_k)
    ok_high = np.all(np.abs(v_c[high] - v_m[high]) <= track_tol * v_m[high])
    return bool(ok_low and ok_high)


def scan_regimes(series: WarmupSeries, param_grid, plateau_k=0.4) -> list:
    """Evaluate every parameter set and classify the resulting crystal track."""
    out = []
    for p in param_grid:
        try:
            v_c = warmup_sweep(series, p)
        except NoAdmissibleRootError:
            continue
        rm, rs, regime = classify_track(v_c, series.v_m, series.v_s)
        out.append(RegimePoint(p, v_c, rm, rs, regime,
                               plateau_then_track(v_c, series.v_m, plateau_k)))
    return out


def parameter_grid(r0=(0.0,), r1=(0.0,), r2=(0.0,), b_sc=(0.0,), b_mc=(0.0,)):
    """Cartesian product of coefficient values, skipping invalid combinations."""
    grid = []
    for a in r0:
        for b in r1:
            for c in r2:
                for d in b_sc:
                    for e in b_mc:
                        try:
                            grid.append(ThermalParams(a, b, c, d, e))
                        except ConfigError:
                            pass
    return grid


def synthetic_warmup(n=60, t_end=60.0):
    """Warmup where the still heats quickly at first and the mount catches up late.

    Times are in minutes; the mount stays near 0.1 K until roughly t = 40.
    """
    t = np.linspace(0, t_end, n)
    v_s = 0.8 + 2.2 * (1 - np.exp(-t / 12.0)) + 0.02 * t
    v_m = 0.1 + 3.0 / (1 + np.exp(-(t - 48.0) / 3.0))
    return WarmupSeries(t, v_m, v_s)
