"""Misaligned cavity coupling and the Gaussian tilt laws used to find cold optima.

Tilts are in degrees of adjustment-screw rotation, measured from the optimum
stored in the model; 10 degrees of screw rotation is 32 microradians of lens tilt.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, FitError
from .fitting import FitResult, nls_fit

THETA0_DEG = 50.0
MICRORAD_PER_SCREW_DEG = 3.2


def screw_to_microrad(deg):
    return np.asarray(deg, dtype=float) * MICRORAD_PER_SCREW_DEG


def microrad_to_screw(urad):
    return np.asarray(urad, dtype=float) / MICRORAD_PER_SCREW_DEG


@dataclass(frozen=True)
class TiltState:
    theta_in: float = 0.0
    phi_in: float = 0.0
    theta_bm: float = 0.0
    phi_bm: float = 0.0
    theta_tr: float = 0.0
    phi_tr: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v):
                raise ConfigError(f"tilt {f.name} must be finite")
            object.__setattr__(self, f.name, v)

    def __sub__(self, other: "TiltState") -> "TiltState":
        return TiltState(*(getattr(self, f.name) - getattr(other, f.name) for f in fields(self)))

    def __add__(self, other: "TiltState") -> "TiltState":
        return TiltState(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __neg__(self) -> "TiltState":
        return TiltState(*(-getattr(self, f.name) for f in fields(self)))


@dataclass(frozen=True)
class AlignmentModel:
    A: float = 1.0
    B: float | None = None
    C: float | None = None
    D: float = 1.0
    E: float | None = None
    theta0: float = THETA0_DEG
    optima: TiltState = TiltState()
    r_max: float = 1.0
    t_max: float = 1.0

    def __post_init__(self):
        if not (self.A > 0 and self.D > 0 and self.theta0 > 0):
            raise ConfigError("A, D and theta0 must be positive")


def cavity_reflection_transmission(delta, kappa_ext1, kappa_ext2, kappa_int,
                                   s11_1=0.0, s12s21_1=1.0, s12_2_s21_1=1.0):
    """Reflection and transmission with mode-mismatched input and output optics.

    Light enters port 1 only and nothing leaving the cavity is reflected back
    into it.  ``s12s21_1`` is s12,1 * s21,1 and ``s12_2_s21_1`` is s12,2 * s21,1.
    """
    delta = np.asarray(delta, dtype=float)
    kappa = kappa_ext1 + kappa_ext2 + kappa_int
    if not kappa > 0:
        raise ConfigError("total linewidth must be positive")
    den = kappa / 2 - 1j * delta
    r = s12s21_1 * (den - kappa_ext1) / den + s11_1
    t2 = abs(s12_2_s21_1) ** 2 * kappa_ext1 * kappa_ext2 / ((kappa / 2) ** 2 + delta**2)
    return np.abs(r) ** 2, t2


def fano_parameters(kappa_ext1, s11_1, s12s21_1):
    """Off-resonant level, S' * kappa_ext1 and Fano phase of the same reflection."""
    total = s12s21_1 + s11_1
    if total == 0:
        raise ConfigError("off-resonant reflection vanishes; Fano form undefined")
    q = s12s21_1 / total
    return abs(total) ** 2, abs(q) * kappa_ext1, -float(np.angle(q))


def gaussian_overlap_factor(displacement, waist) -> float:
    """Normalized overlap of two equal-waist Gaussians displaced by (dx, dy)."""
    if not waist > 0:
        raise ConfigError("waist must be positive")
    dx, dy = displacement
    return float(np.exp(-(dx**2 + dy**2) / (2 * waist**2)))


def reflection_vs_input_tilt(tilts: TiltState, model: AlignmentModel):
    d = tilts - model.optima
    return model.r_max * np.exp(-model.A**2 * (d.theta_in**2 + d.phi_in**2) / (2 * model.theta0**2))


def transmission_vs_tilts(tilts: TiltState, model: AlignmentModel):
    if None in (model.B, model.C, model.E):
        raise ConfigError("the combined transmission law needs calibrated B, C and E")
    d = tilts - model.optima
    q = ((model.B * d.theta_in - model.C * d.theta_bm) ** 2
         + (model.B * d.phi_in - model.C * d.phi_bm) ** 2
         + (model.D * d.theta_tr - model.E * d.theta_bm) ** 2
         + (model.D * d.phi_tr - model.E * d.phi_bm) ** 2)
    return model.t_max * np.exp(-q / model.theta0**2)


def transmission_vs_output_tilt(tilts: TiltState, model: AlignmentModel):
    """Resonant transmission with input lens and back mirror at their optima."""
    d = tilts - model.optima
    return model.t_max * np.exp(-model.D**2 * (d.theta_tr**2 + d.phi_tr**2) / model.theta0**2)


class FitKind(str, enum.Enum):
    INPUT_A = "InputA"
    TRANSMISSION_D = "TransmissionD"
    COLD_OPTIMUM_INPUT = "ColdOptimumInput"
    COLD_OPTIMUM_TRANSMISSION = "ColdOptimumTransmission"


@dataclass
class AlignmentFit:
    model: AlignmentModel
    fit: FitResult
    shift: tuple


def _gauss2d(xy, amp, x0, y0, width, factor):
    x, y = xy
    return amp * np.exp(-width**2 * ((x - x0) ** 2 + (y - y0) ** 2) / factor)


def _check_geometry(x, y):
    pts = np.column_stack([x, y])
    pts = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(pts, tol=1e-9 * max(np.abs(pts).max(), 1.0)) < 2:
        raise ConfigError("tilt samples are collinear; the Gaussian centre is undetermined")


def _log_quadratic_start(x, y, v, width, factor):
    """Centre and amplitude from a linear fit of log(value) with the width fixed."""
    k = width**2 / factor
    ok = v > 0
    if ok.sum() < 3:
        return float(max(v.max(), 0.0)), float(x[np.argmax(v)]), float(y[np.argmax(v)])
    # log v + k (x^2 + y^2) = c + 2 k x0 x + 2 k y0 y
    lhs = np.log(v[ok]) + k * (x[ok] ** 2 + y[ok] ** 2)
    X = np.column_stack([np.ones(ok.sum()), 2 * k * x[ok], 2 * k * y[ok]])
    (c, x0, y0), *_ = np.linalg.lstsq(X, lhs, rcond=None)
    amp = np.exp(c + k * (x0**2 + y0**2))
    return float(amp), float(x0), float(y0)


def fit_alignment_gaussian(observations, which, model: AlignmentModel | None = None,
                           sigma=None) -> AlignmentFit:
    """Fit one of the Gaussian tilt laws to (TiltState, value) observations.

    InputA and TransmissionD calibrate the width (and centre) at room
    temperature; the cold-optimum fits hold the width at its calibrated value
    and return the centre shift relative to the model's current optimum.
    Transmission fits assume input lens and back mirror sit at their optima.
    """
    which = FitKind(which)
    model = AlignmentModel() if model is None else model
    obs = list(observations)
    cold = which in (FitKind.COLD_OPTIMUM_INPUT, FitKind.COLD_OPTIMUM_TRANSMISSION)
    need = 3 if cold else 5
    if len(obs) < need:
        raise ConfigError(f"{which.value} fit needs at least {need} observations")
    transmission = which in (FitKind.TRANSMISSION_D, FitKind.COLD_OPTIMUM_TRANSMISSION)
    if transmission:
        x = np.array([t.theta_tr for t, _ in obs])
        y = np.array([t.phi_tr for t, _ in obs])
        x_opt, y_opt = model.optima.theta_tr, model.optima.phi_tr
        width, factor = model.D, model.theta0**2
    else:
        x = np.array([t.theta_in for t, _ in obs])
        y = np.array([t.phi_in for t, _ in obs])
        x_opt, y_opt = model.optima.theta_in, model.optima.phi_in
        width, factor = model.A, 2 * model.theta0**2
    v = np.array([float(val) for _, val in obs])
    if not np.all(np.isfinite(v)):
        raise ConfigError("observed values must be finite")
    _check_geometry(x, y)
    amp0, x00, y00 = _log_quadratic_start(x, y, v, width, factor)
    init = {"amp": amp0, "x0": x00, "y0": y00, "width": width}
    fixed = ("width",) if cold else ()
    scale = model.theta0 / width
    fit = nls_fit(lambda xy, amp, x0, y0, width: _gauss2d(xy, amp, x0, y0, width, factor),
                  np.vstack([x, y]), v, init, sigma=sigma, fixed=fixed,
                  bounds={"amp": (0, np.inf), "width": (1e-9, np.inf)},
                  scales={"amp": max(abs(amp0), 1e-12), "x0": scale, "y0": scale,
                          "width": max(width, 1e-3)})
    p = fit.params
    shift = (float(p["x0"] - x_opt), float(p["y0"] - y_opt))
    if transmission:
        optima = replace(model.optima, theta_tr=p["x0"], phi_tr=p["y0"])
        new = replace(model, D=float(abs(p["width"])), t_max=float(p["amp"]), optima=optima)
    else:
        optima = replace(model.optima, theta_in=p["x0"], phi_in=p["y0"])
        new = replace(model, A=float(abs(p["width"])), r_max=float(p["amp"]), optima=optima)
    if not fit.converged:
        raise FitError("alignment fit did not converge")
    return AlignmentFit(new, fit, shift)


def synthetic_cooldowns(model: AlignmentModel, shift, which, offsets=None, noise=0.0, seed=0):
    """Observations from cooldowns at warm-optimum offsets, with the cold optimum shifted.

    ``offsets`` default to a five-point cross of +-30 screw degrees.
    """
    which = FitKind(which)
    offsets = [(0, 0), (30, 0), (-30, 0), (0, 30), (0, -30)] if offsets is None else offsets
    rng = np.random.default_rng(seed)
    transmission = which in (FitKind.TRANSMISSION_D, FitKind.COLD_OPTIMUM_TRANSMISSION)
    opt = model.optima
    if transmission:
        cold = replace(model, optima=replace(opt, theta_tr=opt.theta_tr + shift[0],
                                             phi_tr=opt.phi_tr + shift[1]))
    else:
        cold = replace(model, optima=replace(opt, theta_in=opt.theta_in + shift[0],
                                             phi_in=opt.phi_in + shift[1]))
    obs = []
    for dx, dy in offsets:
        if transmission:
            t = replace(opt, theta_tr=opt.theta_tr + dx, phi_tr=opt.phi_tr + dy)
            val = transmission_vs_output_tilt(t, cold)
        else:
            t = replace(opt, theta_in=opt.theta_in + dx, phi_in=opt.phi_in + dy)
            val = reflection_vs_input_tilt(t, cold)
        obs.append((t, float(val * (1 + noise * rng.standard_normal()))))
    return obs
