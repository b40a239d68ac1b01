"""Damped Gauss-Newton least squares and the staged spectral fits.

Parameters are fitted in the offset-scaled form ``p = p_init + scale * u``,
which keeps resonance centers (~1e11 rad/s) and widths (~1e5 rad/s) on a
common numerical footing.  Location parameters should be given a scale of
the order of the relevant linewidth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage, signal

from .errors import ConfigError, ConvergenceError, FitError, NoFeatureError
from .model import Side
from .spectra import SpectrumTrace, transmission_lineshape

TWO_PI = 2 * np.pi


@dataclass
class FitResult:
    params: dict
    covariance: np.ndarray
    chi2_reduced: float
    converged: bool
    n_iter: int
    extras: dict = field(default_factory=dict)

    @property
    def names(self):
        return tuple(self.params)

    def sigma(self, name) -> float:
        i = self.names.index(name)
        return float(np.sqrt(max(self.covariance[i, i], 0.0)))

    def value(self, name):
        return self.params[name], self.sigma(name)

    def to_dict(self) -> dict:
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "param_order": list(self.params),
            "covariance": [float(v) for v in np.asarray(self.covariance).ravel()],
            "chi2_reduced": float(self.chi2_reduced),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
        }

    @classmethod
    def from_dict(cls, d) -> "FitResult":
        order = d.get("param_order", list(d["params"]))
        n = len(order)
        cov = np.asarray(d["covariance"], dtype=float).reshape(n, n)
        return cls({k: float(d["params"][k]) for k in order}, cov, float(d["chi2_reduced"]),
                   bool(d["converged"]), int(d["n_iter"]))


def nls_fit(model: Callable, x, y, init: Mapping[str, float], sigma=None, bounds=None,
            fixed=(), jac: Callable | None = None, scales=None, max_iter=200,
            raise_on_failure=True) -> FitResult:
    """Levenberg-Marquardt fit of ``model(x, **params)`` to ``y``.

    Parameters
    ----------
    model : callable
        ``model(x, **params) -> array`` of the same shape as ``y``.
    init : mapping
        Starting values for every model parameter (ordered).
    sigma : array, optional
        Per-point standard deviations; ``None`` or all-zero means unweighted.
    bounds : mapping name -> (lo, hi), optional
        Box constraints, enforced by projection.
    fixed : iterable of names
        Parameters held at their initial value.
    jac : callable, optional
        ``jac(x, **params) -> {name: d model / d name}``; central finite
        differences are used otherwise.
    scales : mapping name -> float, optional
        Characteristic step size per parameter (defaults to ``|init|`` or 1).

    Returns
    -------
    FitResult
        Covariance is ``(J^T J)^-1`` scaled by the reduced chi-square.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    init = {k: float(v) for k, v in init.items()}
    names = list(init)
    free = [n for n in names if n not in set(fixed)]
    if not free:
        raise ConfigError("no free parameters")
    if y.size < len(free):
        raise FitError("fewer data points than free parameters")
    if sigma is None or not np.any(np.asarray(sigma)):
        w = np.ones_like(y)
    else:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ConfigError("per-point sigmas must be positive for a weighted fit")
        w = 1.0 / sigma
    scales = dict(scales or {})
    s = np.array([scales.get(n) or (abs(init[n]) if init[n] != 0 else 1.0) for n in free])
    p0 = np.array([init[n] for n in free])
    bounds = bounds or {}
    lo = np.array([(bounds.get(n, (-np.inf, np.inf))[0] - init[n]) / sc for n, sc in zip(free, s)])
    hi = np.array([(bounds.get(n, (-np.inf, np.inf))[1] - init[n]) / sc for n, sc in zip(free, s)])
    if np.any(lo > 0) or np.any(hi < 0):
        raise ConfigError("initial values violate the bounds")

    def params_of(u):
        p = dict(init)
        p.update(zip(free, p0 + s * u))
        return p

    def resid(u):
        return (y - model(x, **params_of(u))) * w

    def jacobian(u):
        if jac is not None:
            d = jac(x, **params_of(u))
            cols = [-np.asarray(d[n], dtype=float) * sc * w for n, sc in zip(free, s)]
            return np.column_stack(cols)
        cols = []
        h = 1e-6
        for j in range(len(free)):
            e = np.zeros_like(u)
            e[j] = h
            cols.append((resid(u + e) - resid(u - e)) / (2 * h))
        return np.column_stack(cols)

    u = np.zeros(len(free))
    r = resid(u)
    cost = 0.5 * r @ r
    J = jacobian(u)
    if np.any(np.all(J == 0, axis=0)):
        bad = [free[j] for j in np.flatnonzero(np.all(J == 0, axis=0))]
        raise FitError(f"singular Jacobian: model insensitive to {bad}")
    lam = 1e-3
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        grad = J.T @ r
        if np.max(np.abs(grad)) < 1e-10:
            converged = True
            break
        A = J.T @ J
        d = np.maximum(np.diag(A), 1e-30 * np.max(np.diag(A)))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            u_new = np.clip(u + step, lo, hi)
            r_new = resid(u_new)
            cost_new = 0.5 * r_new @ r_new
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        rel = (cost - cost_new) / max(cost, np.finfo(float).tiny)
        u, r, cost = u_new, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        J = jacobian(u)
        if rel < 1e-12 or cost == 0.0:
            converged = True
            break

    dof = y.size - len(free)
    chi2_red = 2 * cost / dof if dof > 0 else 0.0
    A = J.T @ J
    try:
        cond = np.linalg.cond(A)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e15:
        raise FitError("singular Jacobian at the optimum; parameters are not identifiable")
    cov_u = np.linalg.inv(A) * (chi2_red if dof > 0 else 1.0)
    cov_free = cov_u * np.outer(s, s)
    cov = np.zeros((len(names), len(names)))
    idx = [names.index(n) for n in free]
    cov[np.ix_(idx, idx)] = 0.5 * (cov_free + cov_free.T)
    result = FitResult(params_of(u), cov, float(chi2_red), converged, n_iter,
                       extras={"cost": float(cost), "fixed": [n for n in names if n not in free]})
    if not converged and raise_on_failure:
        raise ConvergenceError(f"no convergence within {max_iter} iterations", result)
    return result


def _trace_weights(trace: SpectrumTrace, mask):
    sig = trace.sigma[mask]
    return sig if np.all(sig > 0) else None


# --- optical Lorentzian -----------------------------------------------------

def lorentzian_model(x, delta_21, kappa, a0):
    return a0**2 * (kappa / 2) ** 2 / ((kappa / 2) ** 2 + (x - delta_21) ** 2)


def lorentzian_jacobian(x, delta_21, kappa, a0):
    h = kappa / 2
    d = x - delta_21
    den = h**2 + d**2
    f = a0**2 * h**2 / den
    return {
        "delta_21": f * 2 * d / den,
        "kappa": a0**2 * h * d**2 / den**2,
        "a0": 2 * a0 * h**2 / den,
    }


def _half_max_width(x, y, i_peak, level):
    """Width between the crossings of ``level`` either side of ``i_peak``."""
    left = i_peak
    while left > 0 and y[left] > level:
        left -= 1
    right = i_peak
    while right < y.size - 1 and y[right] > level:
        right += 1

    def cross(i, j):
        if y[i] == y[j]:
            return x[i]
        return x[i] + (level - y[i]) * (x[j] - x[i]) / (y[j] - y[i])

    return cross(right, right - 1) - cross(left, left + 1)


def fit_optical_lorentzian(trace: SpectrumTrace, mech_exclusion_windows=(), init=None,
                           background=(), side=None) -> FitResult:
    """Lorentzian fit of the probe transmission, ignoring excluded windows (Hz).

    ``background`` optionally lists mechanical terms (omega_m, gamma_m, g)
    held fixed inside the lineshape, which removes the bias from their tails.
    """
    keep = np.ones(len(trace), dtype=bool)
    for lo, hi in mech_exclusion_windows:
        keep &= ~((trace.freq >= lo) & (trace.freq <= hi))
    if keep.sum() < 4:
        raise FitError("too few points outside the exclusion windows")
    x = TWO_PI * trace.freq[keep]
    y = trace.power[keep]
    if init is None:
        i = int(np.argmax(y))
        width = _half_max_width(x, y, i, 0.5 * y[i])
        init = {"delta_21": x[i], "kappa": max(width, 4 * np.median(np.diff(x))),
                "a0": np.sqrt(max(y[i], 1e-300))}
    kappa0 = init["kappa"]
    background = list(background)
    if background:
        side = Side.parse(side if side is not None else trace.meta.pump_side)

        def model(xx, delta_21, kappa, a0):
            return transmission_lineshape(xx, delta_21, kappa, a0, background, side)

        def jac(xx, delta_21, kappa, a0):
            d = transmission_jacobian(xx, delta_21, kappa, a0, background, side)
            return {k: d[k] for k in ("delta_21", "kappa", "a0")}
    else:
        model, jac = lorentzian_model, lorentzian_jacobian
    return nls_fit(model, x, y, init, sigma=_trace_weights(trace, keep),
                   bounds={"kappa": (0, np.inf), "a0": (0, np.inf)}, jac=jac,
                   scales={"delta_21": kappa0, "kappa": kappa0})


# --- mechanical features ----------------------------------------------------

def transmission_jacobian(x, delta_21, kappa, a0, mech_terms, side):
    """Derivatives of |I_T|^2 with respect to every parameter.

    Returns a dict with keys delta_21, kappa, a0 and per-mode tuples under
    ``"mech"`` as (d/d omega_m, d/d gamma_m, d/d g).
    """
    s = Side.parse(side).sign
    den = kappa / 2 - 1j * (x - delta_21)
    qs = []
    for om, gm, g in mech_terms:
        q = gm / 2 - 1j * (x - om)
        qs.append(q)
        den = den + s * g**2 / q
    num = (a0 * kappa / 2) ** 2
    mag2 = np.abs(den) ** 2
    f = num / mag2

    def d_den(dd):
        return -num * 2 * np.real(np.conj(den) * dd) / mag2**2

    out = {
        "delta_21": d_den(1j),
        "kappa": 2 * f / kappa + d_den(0.5),
        "a0": 2 * a0 * (kappa / 2) ** 2 / mag2,
        "mech": [],
    }
    for (om, gm, g), q in zip(mech_terms, qs):
        out["mech"].append((d_den(-s * g**2 * 1j / q**2),
                            d_den(-s * g**2 * 0.5 / q**2),
                            d_den(2 * s * g / q)))
    return out


def fit_mechanical_feature(trace: SpectrumTrace, optical: FitResult, window, side=None,
                           init=None, background=(), min_significance=5.0) -> FitResult:
    """Fit one mechanical term inside ``window`` (Hz) with the optical parameters fixed.

    ``background`` holds other mechanical terms fixed in the lineshape.
    """
    side = Side.parse(side if side is not None else trace.meta.pump_side)
    lo, hi = window
    m = (trace.freq >= lo) & (trace.freq <= hi)
    if m.sum() < 5:
        raise FitError("mechanical window holds fewer than 5 points")
    x = TWO_PI * trace.freq[m]
    y = trace.power[m]
    d21, kap, a0 = (optical.params[k] for k in ("delta_21", "kappa", "a0"))
    background = list(background)
    base = transmission_lineshape(x, d21, kap, a0, background, side)
    res = y / base - 1
    noise = np.median(trace.sigma[m] / base)
    amp = np.max(np.abs(res))
    if amp <= max(min_significance * noise, 1e-9):
        raise NoFeatureError("no mechanical feature above the noise in the window")
    s = side.sign
    if init is None:
        init = _mechanical_guess(x, res, kap, d21, s)

    def model(xx, omega_m, gamma_m, g):
        return transmission_lineshape(xx, d21, kap, a0, background + [(omega_m, gamma_m, g)], side)

    def jac(xx, omega_m, gamma_m, g):
        d = transmission_jacobian(xx, d21, kap, a0, background + [(omega_m, gamma_m, g)], side)
        d = d["mech"][-1]
        return {"omega_m": d[0], "gamma_m": d[1], "g": d[2]}

    g0 = init["gamma_m"]
    return nls_fit(model, x, y, init, sigma=_trace_weights(trace, m),
                   bounds={"gamma_m": (0, np.inf), "g": (0, np.inf)}, jac=jac,
                   scales={"omega_m": g0, "gamma_m": g0})


def _mechanical_guess(x, res, kappa, delta_21, s):
    """Starting values from the relative deviation ``res`` around one feature.

    The feature is located from the extreme lobes, its width from their
    separation or the half-maximum width, and the coupling from the on-center
    depth corrected for the cavity detuning.
    """
    absr = np.abs(res)
    i = int(np.argmax(absr))
    width = _half_max_width(x, absr, i, 0.5 * absr[i])
    lobes = [int(np.argmax(res)), int(np.argmin(res))]
    if res[lobes[0]] > 0 > res[lobes[1]] and min(abs(res[lobes[0]]), abs(res[lobes[1]])) > 0.3 * absr[i]:
        center = 0.5 * (x[lobes[0]] + x[lobes[1]])
        width = max(width, abs(x[lobes[0]] - x[lobes[1]]))
    else:
        center = x[i]
    if not width > 0:
        width = (x[-1] - x[0]) / 20
    # peak-to-peak swing of |1/(1 + s*c*L)|^2 - 1 with L = (k/2)/(k/2 - i*dc)
    swing = np.max(res) - np.min(res)
    dc = center - delta_21
    lc = (kappa / 2) / (kappa / 2 - 1j * dc)
    cs = np.geomspace(1e-6, 0.999 if s < 0 else 1e4, 400)
    resp = np.abs(1 / (1 + s * cs[:, None] * lc * np.array([1, 1j, -1j]))) ** 2 - 1
    pred = resp.max(axis=1) - resp.min(axis=1)
    pred = np.maximum(pred, np.abs(resp[:, 0]))
    c0 = float(np.interp(swing, pred, cs)) if np.all(np.diff(pred) > 0) else float(
        cs[np.argmin(np.abs(pred - swing))])
    gamma0 = width / (1 + s * c0 * np.real(lc)) if 1 + s * c0 * np.real(lc) > 0 else width
    return {"omega_m": center, "gamma_m": gamma0, "g": np.sqrt(c0 * kappa * gamma0 / 4)}


def _run_lengths(mask):
    """Length of the run of True values containing each element (0 where False)."""
    out = np.zeros(mask.size, dtype=int)
    i = 0
    while i < mask.size:
        if mask[i]:
            j = i
            while j < mask.size and mask[j]:
                j += 1
            out[i:j] = j - i
            i = j
        else:
            i += 1
    return out


@dataclass(frozen=True)
class Feature:
    center_hz: float
    width_hz: float
    amplitude: float


def detect_features(trace: SpectrumTrace, baseline=None, threshold=5.0, min_points=3,
                    max_width_hz=None):
    """Narrow extrema standing ``threshold`` noise deviations above the baseline.

    ``baseline`` is a model array for the broad lineshape; without one the
    trace is detrended by a running median.  The noise is the trace's sigma
    when present, otherwise a robust estimate from point-to-point differences.
    A feature needs ``min_points`` consecutive points beyond half the
    threshold.  Opposite-sign lobes of a single dispersive feature are merged,
    and features touching the trace edges or wider than ``max_width_hz`` are
    discarded.
    """
    y = trace.power
    f = trace.freq
    if baseline is None:
        k = max(5, (len(y) // 25) | 1)
        baseline = ndimage.median_filter(y, size=k, mode="nearest")
    dev = y - baseline
    floor = 1e-3 * np.max(np.abs(dev))
    if np.all(trace.sigma > 0):
        sig = np.maximum(trace.sigma, floor)
    else:
        sig = max(1.4826 * np.median(np.abs(np.diff(dev))) / np.sqrt(2), floor, 1e-300)
    z = dev / sig
    res = y / baseline - 1
    step = np.median(np.diff(f))
    raw = []
    for sgn in (1.0, -1.0):
        zz = sgn * z
        pk, props = signal.find_peaks(zz, height=threshold, prominence=threshold)
        if pk.size == 0:
            continue
        widths = signal.peak_widths(zz, pk, rel_height=0.5)[0] * step
        run = _run_lengths(zz > 0.5 * threshold)
        for i, w in zip(pk, widths):
            if i < min_points or i >= len(y) - min_points or run[i] < min_points:
                continue
            w = max(w, step)
            if max_width_hz is None or w <= max_width_hz:
                raw.append([f[i], w, res[i]])
    raw.sort()
    merged = []
    paired = False
    # a dispersive feature has two lobes, so each feature absorbs at most one neighbour
    for c, w, a in raw:
        if (merged and not paired and c - merged[-1][0] < 1.5 * max(w, merged[-1][1])
                and np.sign(a) != np.sign(merged[-1][2])):
            # the stronger lobe marks the resonance
            if abs(a) > abs(merged[-1][2]):
                merged[-1] = [c, w, a]
            paired = True
        else:
            merged.append([c, w, a])
            paired = False
    return [Feature(m[0], m[1], m[2]) for m in merged]


@dataclass
class StagedFit:
    optical: FitResult
    mechanical: list
    windows: list
    first_pass: tuple = ()
    joint: FitResult | None = None


def _terms(fits, skip=None):
    return [(f.params["omega_m"], f.params["gamma_m"], f.params["g"])
            for k, f in enumerate(fits) if k != skip]


def fit_omit_staged(trace: SpectrumTrace, side=None, window_factor=10.0, backfit=3,
                    joint=False) -> StagedFit:
    """Optical fit away from the mechanical features, then one fit per feature.

    The first pass follows the plain two-stage recipe.  Each of the ``backfit``
    further passes refits every stage with the other stages' current terms
    held fixed, removing the bias from overlapping tails.  With ``joint=True``
    all parameters are finally refined together on the full trace.
    """
    side = Side.parse(side if side is not None else trace.meta.pump_side)

    def windows_of(feats):
        # each window stops halfway to the neighbouring features
        c = [ft.center_hz for ft in feats]
        edges = [-np.inf] + [0.5 * (a + b) for a, b in zip(c, c[1:])] + [np.inf]
        return [(max(ft.center_hz - window_factor * ft.width_hz, edges[k]),
                 min(ft.center_hz + window_factor * ft.width_hz, edges[k + 1]))
                for k, ft in enumerate(feats)]

    # features are located against a Lorentzian baseline, refined once their windows are excluded
    x = TWO_PI * trace.freq
    optical = fit_optical_lorentzian(trace, windows_of(detect_features(trace)))
    for _ in range(2):
        base = lorentzian_model(x, **optical.params)
        feats = detect_features(trace, base, max_width_hz=optical.params["kappa"] / TWO_PI / 10)
        windows = windows_of(feats)
        optical = fit_optical_lorentzian(trace, windows, init=dict(optical.params))
    mech = [fit_mechanical_feature(trace, optical, w, side) for w in windows]
    first = (optical, tuple(mech))
    for _ in range(backfit if mech else 0):
        optical = fit_optical_lorentzian(trace, windows, init=dict(optical.params),
                                         background=_terms(mech), side=side)
        mech = [fit_mechanical_feature(trace, optical, w, side, init=dict(mech[k].params),
                                       background=_terms(mech, skip=k))
                for k, w in enumerate(windows)]
    out = StagedFit(optical, mech, windows, first)
    if joint and mech:
        out.joint = fit_omit_joint(trace, optical, mech, side)
    return out


def fit_omit_joint(trace: SpectrumTrace, optical: FitResult, mech: list, side) -> FitResult:
    side = Side.parse(side)
    nm = len(mech)
    init = dict(optical.params)
    for k, f in enumerate(mech):
        for name in ("omega_m", "gamma_m", "g"):
            init[f"{name}_{k}"] = f.params[name]

    def unpack(p):
        return [(p[f"omega_m_{k}"], p[f"gamma_m_{k}"], p[f"g_{k}"]) for k in range(nm)]

    def model(x, **p):
        return transmission_lineshape(x, p["delta_21"], p["kappa"], p["a0"], unpack(p), side)

    def jac(x, **p):
        d = transmission_jacobian(x, p["delta_21"], p["kappa"], p["a0"], unpack(p), side)
        out = {k: d[k] for k in ("delta_21", "kappa", "a0")}
        for k, dm in enumerate(d["mech"]):
            out[f"omega_m_{k}"], out[f"gamma_m_{k}"], out[f"g_{k}"] = dm
        return out

    kap = optical.params["kappa"]
    scales = {"delta_21": kap, "kappa": kap}
    bounds = {"kappa": (0, np.inf), "a0": (0, np.inf)}
    for k, f in enumerate(mech):
        scales[f"omega_m_{k}"] = scales[f"gamma_m_{k}"] = f.params["gamma_m"]
        bounds[f"gamma_m_{k}"] = bounds[f"g_{k}"] = (0, np.inf)
    x = TWO_PI * trace.freq
    full = np.ones(len(trace), dtype=bool)
    return nls_fit(model, x, trace.power, init, sigma=_trace_weights(trace, full), bounds=bounds,
                   jac=jac, scales=scales)


# --- Fano reflection --------------------------------------------------------

def fano_reflection(x, r_offres, s_prime_kappa_ext, phi, kappa, omega0):
    """Off-resonant level times |1 - S' e^{-i phi} k_ext1 / (k/2 - i D)|^2."""
    d = x - omega0
    return r_offres * np.abs(1 - s_prime_kappa_ext * np.exp(-1j * phi) / (kappa / 2 - 1j * d)) ** 2


FANO_NAMES = ("r_offres", "s_prime_kappa_ext", "phi", "kappa", "omega0")


def fit_fano_reflection(trace: SpectrumTrace, coupling="under", init=None) -> FitResult:
    """Fit the asymmetric cavity reflection dip.

    The product S' * kappa_ext1 is returned; the two factors are not separable.
    ``coupling`` selects the under- or over-coupled branch of the starting
    guess, which the dip depth alone cannot distinguish.
    """
    x = TWO_PI * trace.freq
    y = trace.power
    sig = _trace_weights(trace, np.ones(len(trace), dtype=bool))
    n = len(y)
    if init is None:
        edge = max(3, n // 10)
        roff = float(np.median(np.concatenate([y[:edge], y[-edge:]])))
        i = int(np.argmin(y))
        depth = roff - y[i]
        if depth <= 0:
            raise FitError("no reflection dip found")
        width = _half_max_width(x, roff - y, i, 0.5 * depth)
        kappa0 = max(width, 4 * (x[1] - x[0]))
        rho = max(y[i] / roff, 0.0)
        sk = kappa0 / 2 * (1 - np.sqrt(rho) if coupling == "under" else 1 + np.sqrt(rho))
        starts = [{"r_offres": roff, "s_prime_kappa_ext": sk, "phi": ph, "kappa": kappa0,
                   "omega0": x[i]} for ph in (0.0, 0.6, -0.6)]
    else:
        starts = [init]
    best = None
    err = None
    for st in starts:
        k0 = st["kappa"]
        try:
            fit = nls_fit(fano_reflection, x, y, st, sigma=sig,
                          bounds={"kappa": (0, np.inf), "r_offres": (0, np.inf)},
                          scales={"omega0": k0, "kappa": k0, "s_prime_kappa_ext": k0, "phi": 1.0})
        except FitError as e:
            err = e
            continue
        if best is None or fit.extras["cost"] < best.extras["cost"]:
            best = fit
    if best is None:
        raise err
    return best


# --- linear power scaling ---------------------------------------------------

def fit_power_scaling(points) -> FitResult:
    """Weighted straight line through (power, value, sigma) points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise FitError("power scaling needs at least three points")
    p, v = pts[:, 0], pts[:, 1]
    sig = pts[:, 2] if pts.shape[1] > 2 else np.ones_like(p)
    if np.any(sig <= 0):
        sig = np.ones_like(p)
    if np.ptp(p) == 0:
        raise FitError("degenerate abscissa: all powers are equal")
    w = 1 / sig**2
    X = np.column_stack([p, np.ones_like(p)])
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * v))
    res = v - X @ coef
    dof = len(p) - 2
    chi2_red = float(np.sum(w * res**2) / dof) if dof > 0 else 0.0
    cov = np.linalg.inv(A) * (chi2_red if dof > 0 else 1.0)
    vbar = np.sum(w * v) / np.sum(w)
    ss_tot = np.sum(w * (v - vbar) ** 2)
    r2 = 1 - np.sum(w * res**2) / ss_tot if ss_tot > 0 else 1.0
    return FitResult({"slope": coef[0], "intercept": coef[1]}, cov, chi2_red, True, 1,
                     extras={"r2": float(r2)})


def combine_drift(before, after, extra_variance=0.0):
    """Average two (value, sigma) estimates, adding half their difference as error."""
    (v1, s1), (v2, s2) = before, after
    mean = 0.5 * (v1 + v2)
    var = 0.25 * (s1**2 + s2**2) + (0.5 * (v2 - v1)) ** 2 + extra_variance
    return mean, float(np.sqrt(var))
