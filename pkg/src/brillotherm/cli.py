"""Command-line front end.

Every command reads an INI file (``--config``), writes into ``--out`` and is
deterministic for a given config and ``--seed``.  Files carry ordinary Hz;
conversion to angular units happens here.  Exit codes: 0 ok, 2 config error,
3 physics error, 4 fit error, 5 unphysical result (report still written).
"""
from __future__ import annotations

import argparse
import configparser
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .alignment import (AlignmentModel, FitKind, TiltState, fit_alignment_gaussian,
                        screw_to_microrad, synthetic_cooldowns)
from .cavity import (Layer, LayerStack, Mirror, find_displacement_insensitive_point,
                     free_spectral_range, max_gradient, mode_spacing_vs_length,
                     oscillation_period, reference_stack)
from .errors import (BrillothermError, ConfigError, FitError, PhysicsError,
                     UnphysicalResultError)
from .fitting import FitResult, fit_fano_reflection, fit_omit_staged
from .model import (DetectionChain, MechanicalMode, OpticalMode, PumpSetting, Side,
                    SystemParams)
from .noise import (DipRecord, calibrate_conversion, eom_beta_from_sideband_ratio,
                    laser_frequency_noise, line_amplitude, phase_noise_phonons,
                    sweep_dip_noise_spectrum, synthetic_dips, true_occupancy_from_inferred)
from .spectra import NoiseModel, esa_power_spectrum, omit_omia_transmission, synthesize_trace
from .thermal import (ThermalParams, parameter_grid, scan_regimes, synthetic_warmup,
                      warmup_sweep)
from .thermometry import CorrectionSet, analyze_pair

TWO_PI = 2 * np.pi

EXIT_OK, EXIT_CONFIG, EXIT_PHYSICS, EXIT_FIT, EXIT_UNPHYSICAL = 0, 2, 3, 4, 5


# --- config access ------------------------------------------------------------

class Section:
    """Typed getters over one INI section; missing required keys raise ConfigError."""

    def __init__(self, cfg: configparser.ConfigParser, name: str):
        self.name = name
        self.data = dict(cfg[name]) if cfg.has_section(name) else {}

    def __contains__(self, key):
        return key in self.data

    def _raw(self, key, default):
        if key in self.data:
            return self.data[key]
        if default is _REQUIRED:
            raise ConfigError(f"[{self.name}] missing key '{key}'")
        return default

    def float(self, key, default=None):
        v = self._raw(key, default)
        if v is None or isinstance(v, float):
            return v
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be a number, got {v!r}") from None

    def int(self, key, default=None):
        v = self._raw(key, default)
        if v is None or isinstance(v, int):
            return v
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be an integer, got {v!r}") from None

    def str(self, key, default=None):
        v = self._raw(key, default)
        return v if v is None else str(v).strip()

    def floats(self, key, default=None):
        v = self._raw(key, default)
        if v is None or isinstance(v, (list, tuple)):
            return None if v is None else [float(x) for x in v]
        try:
            return [float(x) for x in str(v).replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} must be a list of numbers") from None

    def bool(self, key, default=None):
        v = self._raw(key, default)
        if isinstance(v, bool) or v is None:
            return v
        s = str(v).strip().lower()
        if s in ("1", "yes", "true", "on"):
            return True
        if s in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} must be a boolean, got {v!r}")


_REQUIRED = object()


def load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        cfg.read(p)
    except configparser.Error as e:
        raise ConfigError(f"config file {p}: {e}") from None
    return cfg


def _resolve(base: Path | None, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() or base is None else base / p


# --- output helpers -----------------------------------------------------------

def write_table(out: Path, stem: str, header, columns, fmt: str) -> Path:
    if fmt == "json":
        obj = {h: [c if isinstance(c, str) else float(c) for c in col]
               for h, col in zip(header, columns)}
        return io.write_json(out / f"{stem}.json", obj)
    return io.write_csv(out / f"{stem}.csv", header, columns)


def fit_in_hz(fit: FitResult, angular=()) -> dict:
    """FitResult dictionary with the named angular parameters divided by 2 pi."""
    names = list(fit.params)
    s = np.array([1 / TWO_PI if n in angular else 1.0 for n in names])
    conv = FitResult({n: fit.params[n] * k for n, k in zip(names, s)},
                     np.asarray(fit.covariance) * np.outer(s, s), fit.chi2_reduced,
                     fit.converged, fit.n_iter)
    d = conv.to_dict()
    d["units"] = {n: ("hz" if n in angular else "1") for n in names}
    return d


# --- system description -----------------------------------------------------------

def system_from_config(cfg, need_detection=False) -> SystemParams:
    opt = Section(cfg, "optics")
    f_red = opt.float("red_frequency_hz", _REQUIRED)
    d21 = opt.float("delta_21_hz", _REQUIRED)
    modes = []
    for name, f0 in (("red", f_red), ("blue", f_red + d21)):
        modes.append(OpticalMode(TWO_PI * f0,
                                 TWO_PI * opt.float(f"{name}_kappa_ext1_hz", _REQUIRED),
                                 TWO_PI * opt.float(f"{name}_kappa_ext2_hz", _REQUIRED),
                                 TWO_PI * opt.float(f"{name}_kappa_int_hz", _REQUIRED)))
    mec = Section(cfg, "mechanics")
    om = mec.floats("frequency_hz", _REQUIRED)
    n = len(om)

    def per_mode(key, default=_REQUIRED):
        v = mec.floats(key, default)
        if v is None:
            return None
        if len(v) == 1:
            v = v * n
        if len(v) != n:
            raise ConfigError(f"[mechanics] {key} needs 1 or {n} values")
        return v

    gm, g0 = per_mode("linewidth_hz"), per_mode("g0_hz")
    nth = per_mode("n_th", [0.0])
    if n == 0:
        raise ConfigError("[mechanics] frequency_hz is empty")
    mechs = [MechanicalMode(TWO_PI * a, TWO_PI * b, TWO_PI * c, d) for a, b, c, d in zip(om, gm, g0, nth)]
    pmp = Section(cfg, "pump")
    pump = PumpSetting(Side.parse(pmp.str("side", _REQUIRED)), pmp.float("power_w", _REQUIRED))
    det = None
    if cfg.has_section("detection"):
        d = Section(cfg, "detection")
        det = DetectionChain(gain_G=d.float("gain", _REQUIRED), split_T=d.float("split_t", 0.5),
                             eta=d.float("eta", _REQUIRED), p_lo=d.float("p_lo_w", _REQUIRED),
                             delta_lo=TWO_PI * d.float("lo_offset_hz", _REQUIRED),
                             rbw=d.float("rbw_hz", _REQUIRED), load_R=d.float("load_ohm", 50.0))
    elif need_detection:
        raise ConfigError("missing [detection] section")
    return SystemParams(modes[0], modes[1], mechs, pump, det, TWO_PI * d21)


def _grid(sec: Section, prefix: str):
    lo, hi = sec.float(f"{prefix}_start_hz", _REQUIRED), sec.float(f"{prefix}_stop_hz", _REQUIRED)
    n = sec.int(f"{prefix}_points", _REQUIRED)
    if n < 2 or not hi > lo:
        raise ConfigError(f"[{sec.name}] {prefix} grid is empty or reversed")
    return np.linspace(lo, hi, n)


# --- commands -----------------------------------------------------------------

def cmd_simulate(args, cfg):
    sim = Section(cfg, "simulate")
    outputs = [s.strip() for s in sim.str("outputs", "transmission").split(",") if s.strip()]
    bad = set(outputs) - {"transmission", "esa"}
    if bad or not outputs:
        raise ConfigError(f"[simulate] outputs must list transmission and/or esa, got {outputs}")
    params = system_from_config(cfg, need_detection="esa" in outputs)
    seed = args.seed if args.seed is not None else sim.int("seed", 0)
    stamps = {"timestamp_start": sim.str("timestamp_start"), "timestamp_end": sim.str("timestamp_end")}
    written = []
    if "transmission" in outputs:
        f = _grid(sim, "probe")
        tr = omit_omia_transmission(params, TWO_PI * f, a0=sim.float("a0", 1.0))
        level = sim.float("transmission_noise", 0.0)
        if level > 0:
            tr = synthesize_trace(tr, NoiseModel(level, (), seed))
        tr = _stamp(tr, stamps)
        written.append(io.write_trace(args.out / "transmission.csv", tr))
    if "esa" in outputs:
        f = _grid(sim, "esa")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tr = esa_power_spectrum(params, TWO_PI * f, n_averages=sim.int("n_averages", 1))
        poly = tuple(sim.floats("baseline_poly_w", []))
        level = sim.float("esa_noise_w", 0.0)
        if level > 0 or poly:
            tr = synthesize_trace(tr, NoiseModel(level, poly, seed + 1))
        tr = _stamp(tr, stamps)
        written.append(io.write_trace(args.out / f"esa_{params.pump.side.value}.csv", tr))
    return written


def _stamp(trace, stamps):
    from dataclasses import replace
    return replace(trace, meta=replace(trace.meta, **{k: v for k, v in stamps.items() if v}))


OMIT_ANGULAR = ("delta_21", "kappa", "omega_m", "gamma_m", "g")
FANO_ANGULAR = ("s_prime_kappa_ext", "kappa", "omega0")


def cmd_fit(args, cfg):
    sec = Section(cfg, "fit")
    path = args.trace or sec.str("trace", _REQUIRED)
    trace = io.read_trace(_resolve(args.config_dir, path) if not args.trace else path)
    if args.unweighted or not sec.bool("weighted", True):
        trace = trace.with_power(trace.power, np.zeros_like(trace.power))
    model = args.model or sec.str("model", "omit")
    if model == "fano":
        fit = fit_fano_reflection(trace, coupling=sec.str("coupling", "under"))
        out = {"model": "fano", "fit": fit_in_hz(fit, FANO_ANGULAR)}
    elif model == "omit":
        side = sec.str("side") or trace.meta.pump_side
        if side is None:
            raise ConfigError("pump side unknown: tag the trace or set [fit] side")
        st = fit_omit_staged(trace, side, window_factor=sec.float("window_factor", 10.0),
                             backfit=sec.int("backfit", 3), joint=sec.bool("joint", True))
        out = {"model": "omit", "side": Side.parse(side).value,
               "optical": fit_in_hz(st.optical, OMIT_ANGULAR),
               "mechanical": [fit_in_hz(m, OMIT_ANGULAR) for m in st.mechanical],
               "windows_hz": [[float(a), float(b)] for a, b in st.windows]}
        if st.joint is not None:
            names = OMIT_ANGULAR + tuple(f"{n}_{k}" for k in range(len(st.mechanical))
                                         for n in ("omega_m", "gamma_m", "g"))
            out["joint"] = fit_in_hz(st.joint, names)
        fits = [st.optical, *st.mechanical] + ([st.joint] if st.joint is not None else [])
        if not all(f.converged for f in fits):
            io.write_json(args.out / "fit.json", out)
            raise FitError("staged fit did not converge")
    else:
        raise ConfigError(f"unknown fit model {model!r}")
    return [io.write_json(args.out / "fit.json", out)]


CORRECTION_KEYS = {
    "pump_power_w": ("pump_power", 1.0), "p_lo_w": ("p_lo", 1.0),
    "kappa_signal_hz": ("kappa_signal", TWO_PI), "delta_detune_hz": ("delta_detune", TWO_PI),
    "gamma_eff_hz": ("gamma_eff", TWO_PI), "kappa_ratio_ext1": ("kappa_ratio_ext1", 1.0),
    "kappa_ratio_ext2": ("kappa_ratio_ext2", 1.0), "kappa_pump_hz": ("kappa_pump", TWO_PI),
}


def corrections_from_dict(d, side) -> CorrectionSet:
    if not isinstance(d, dict):
        raise ConfigError(f"{side} corrections must be an object")
    kw = {}
    for key, (name, scale) in CORRECTION_KEYS.items():
        if key not in d:
            raise ConfigError(f"{side} corrections missing field '{key}'")
        v = d[key]
        val, sig = (v, 0.0) if not isinstance(v, (list, tuple, dict)) else \
            ((v["value"], v.get("sigma", 0.0)) if isinstance(v, dict) else (v[0], v[1] if len(v) > 1 else 0.0))
        try:
            kw[name] = (float(val) * scale, float(sig) * scale)
        except (TypeError, ValueError):
            raise ConfigError(f"{side} correction '{key}' is not numeric") from None
    return CorrectionSet(side, **kw)


def cmd_thermometry(args, cfg):
    sec = Section(cfg, "thermometry")
    base = args.config_dir

    def pick(flag, key):
        return Path(flag) if flag else _resolve(base, sec.str(key, _REQUIRED))

    tr_r = io.read_trace(pick(args.red, "red_trace"))
    tr_b = io.read_trace(pick(args.blue, "blue_trace"))
    corr = io.read_json(pick(args.corrections, "corrections"))
    if not isinstance(corr, dict) or "red" not in corr or "blue" not in corr:
        raise ConfigError("corrections file needs 'red' and 'blue' objects")
    cr, cb = corrections_from_dict(corr["red"], "red"), corrections_from_dict(corr["blue"], "blue")
    hw = sec.float("half_width_hz")
    centers = (sec.float("red_center_hz"), sec.float("blue_center_hz"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = analyze_pair(tr_r, tr_b, cr, cb, centers=centers, half_widths=(hw, hw),
                           exclusion_half_width_hz=sec.float("exclusion_half_width_hz"))
    rep.provenance["warnings"] = sorted({str(w.message) for w in caught})
    path = io.write_json(args.out / "occupancy.json", rep.to_dict())
    if not rep.valid:
        raise UnphysicalResultError(
            f"sideband asymmetry {rep.asymmetry.value:.6g} <= 1; report written with valid=false")
    return [path]


def cmd_thermal(args, cfg):
    sec = Section(cfg, "thermal")
    if "warmup" in sec:
        series = io.read_warmup(_resolve(args.config_dir, sec.str("warmup")))
    else:
        w = synthetic_warmup(sec.int("synthetic_points", 60))
        series = type(w)(w.times * 60.0, w.v_m, w.v_s)
    keys = ("r0", "r1", "r2", "b_sc", "b_mc")
    lists = {k: sec.floats(k, [0.0]) for k in keys}
    if any(len(v) == 0 for v in lists.values()):
        raise ConfigError("[thermal] parameter lists must not be empty")
    if all(len(v) == 1 for v in lists.values()):
        p = ThermalParams(*(lists[k][0] for k in keys))
        v_c = warmup_sweep(series, p)
        if args.format == "json":
            return [write_table(args.out, "warmup_crystal", io.WARMUP_HEADER + ("v_crystal_k",),
                                (series.times, series.v_m, series.v_s, v_c), "json")]
        return [io.write_warmup(args.out / "warmup_crystal.csv", series, v_c)]
    grid = parameter_grid(**lists)
    if not grid:
        raise ConfigError("[thermal] parameter grid is empty after removing invalid sets")
    pts = scan_regimes(series, grid, sec.float("plateau_k", 0.4))
    cols = [[getattr(pt.params, k) for pt in pts] for k in keys]
    cols += [[pt.rms_mount for pt in pts], [pt.rms_still for pt in pts],
             [pt.regime for pt in pts], ["yes" if pt.plateau_then_track else "no" for pt in pts]]
    header = keys + ("rms_mount_k", "rms_still_k", "regime", "plateau_then_track")
    table = write_table(args.out, "regimes", header, cols, args.format)
    counts = {r: sum(pt.regime == r for pt in pts) for r in ("mount", "still", "intermediate")}
    summary = {"n_sets": len(grid), "n_solved": len(pts), "regimes": counts,
               "plateau_then_track": sum(pt.plateau_then_track for pt in pts)}
    return [table, io.write_json(args.out / "regimes_summary.json", summary)]


def stack_from_config(sec: Section) -> LayerStack:
    if "elements" not in sec:
        return reference_stack(sec.float("total_length_m", 10.4e-3), sec.float("crystal_length_m", 5e-3),
                               sec.float("spacer_m", 0.2e-3), sec.float("crystal_index", 1.5346),
                               sec.float("mirror_reflectivity", 0.999),
                               sec.float("wavelength_m", 1550e-9))
    els = []
    for item in sec.str("elements").split(";"):
        parts = item.split()
        if not parts:
            continue
        try:
            if parts[0] == "mirror" and len(parts) in (2, 3):
                # the hard-reflection side faces the layers: right before any layer, left after
                side = "left" if any(isinstance(e, Layer) for e in els) else "right"
                els.append(Mirror.from_reflectivity(float(parts[1]),
                                                    float(parts[2]) if len(parts) == 3 else 0.0, side))
            elif parts[0] == "layer" and len(parts) == 3:
                els.append(Layer(float(parts[1]), float(parts[2])))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"[cavity] cannot parse stack element {item.strip()!r}") from None
    if not els:
        raise ConfigError("[cavity] stack has no elements")
    return LayerStack(tuple(els), sec.float("wavelength_m", 1550e-9))


def cmd_cavity(args, cfg):
    sec = Section(cfg, "cavity")
    stack = stack_from_config(sec)
    n = sec.int("n_points", 201)
    lo, hi = sec.float("delta_l_start_m", 0.0), sec.float("delta_l_stop_m", 3e-6)
    if n < 4 or not hi > lo:
        raise ConfigError("[cavity] length grid is empty or reversed")
    grid = np.linspace(lo, hi, n)
    layer = sec.int("layer_position")
    curves = mode_spacing_vs_length(stack, grid, sec.int("n_pairs", 1), sec.float("f_center_hz"),
                                    layer, jobs=args.jobs)
    target = sec.float("target_hz", 12.65e9)
    written = []
    summary = {"fsr_hz": free_spectral_range(stack), "pairs": []}
    for c in curves:
        written.append(write_table(args.out, f"spacing_pair{c.pair}", io.CURVE_HEADER,
                                   (c.delta_l, c.spacing), args.format))
        info = {"pair": c.pair, "spacing_min_hz": float(c.spacing.min()),
                "spacing_max_hz": float(c.spacing.max()),
                "max_gradient_hz_per_m": max_gradient(c)}
        try:
            info["period_m"] = oscillation_period(c)
        except PhysicsError:
            info["period_m"] = None
        try:
            ip = find_displacement_insensitive_point(c, target)
            info["insensitive_point"] = {"delta_l_m": ip.delta_l_star, "spacing_hz": ip.spacing_at_star,
                                         "gradient_residual_hz_per_m": ip.gradient_residual}
        except PhysicsError:
            info["insensitive_point"] = None
        summary["pairs"].append(info)
    written.append(io.write_json(args.out / "cavity_summary.json", summary))
    return written


def cmd_align(args, cfg):
    sec = Section(cfg, "align")
    which = FitKind(sec.str("which", FitKind.COLD_OPTIMUM_INPUT.value))
    opt = sec.floats("optima", [0.0] * 6)
    if len(opt) != 6:
        raise ConfigError("[align] optima needs six tilt values")
    model = AlignmentModel(A=sec.float("a", 1.0), B=sec.float("b"), C=sec.float("c"),
                           D=sec.float("d", 1.0), E=sec.float("e"),
                           theta0=sec.float("theta0_deg", 50.0), optima=TiltState(*opt))
    if "observations" in sec:
        groups = io.read_observations(_resolve(args.config_dir, sec.str("observations")))
        obs = groups.get(which.value)
        if not obs:
            raise ConfigError(f"observations contain no rows for {which.value}")
    else:
        shift = sec.floats("shift_deg", _REQUIRED)
        if len(shift) != 2:
            raise ConfigError("[align] shift_deg needs two values")
        seed = args.seed if args.seed is not None else sec.int("seed", 0)
        obs = synthetic_cooldowns(model, shift, which, noise=sec.float("noise", 0.0), seed=seed)
        io.write_observations(args.out / "observations.csv", {which.value: obs})
    res = fit_alignment_gaussian(obs, which, model)
    m = res.model
    out = {"which": which.value, "shift_deg": list(res.shift),
           "shift_microrad": [float(x) for x in screw_to_microrad(res.shift)],
           "A": m.A, "D": m.D, "r_max": m.r_max, "t_max": m.t_max,
           "fit": res.fit.to_dict()}
    return [io.write_json(args.out / "alignment.json", out)]


def cmd_noise(args, cfg):
    sec = Section(cfg, "noise")
    mode = sec.str("mode", "dips")
    seed = args.seed if args.seed is not None else sec.int("seed", 0)
    if mode == "dips":
        if "dips" in sec:
            times = io.read_dips(_resolve(args.config_dir, sec.str("dips")))
            rate = sec.float("sweep_rate_hz_per_s")
        else:
            amp, fmod = sec.float("modulation_amplitude_hz", 0.0), sec.float("modulation_hz", 50.0)
            times, rate = synthetic_dips(sec.int("n_periods", 4096), sec.float("sweep_frequency_hz", 2e3),
                                         sec.float("sweep_span_hz", 50e6),
                                         (lambda t: amp * np.sin(TWO_PI * fmod * t)) if amp else None,
                                         sec.float("white_rms_hz", 0.0), seed)
            io.write_dips(args.out / "dips.csv", times)
        rec = DipRecord(times, rate, sec.float("cavity_linewidth_hz"), sec.float("dip_width_s"))
        spec = sweep_dip_noise_spectrum(rec)
        written = [write_table(args.out, "cavity_psd", io.PSD_HEADER, (spec.freq, spec.psd), args.format)]
        summary = {"sample_rate_hz": spec.sample_rate, "rms_hz": spec.rms, "n_samples": int(spec.series.size)}
        if "line_hz" in sec:
            summary["line_amplitude_hz"] = line_amplitude(spec, sec.float("line_hz"))
        written.append(io.write_json(args.out / "noise_summary.json", summary))
        return written
    if mode == "laser":
        f_cal, p_cal = io.read_psd(_resolve(args.config_dir, sec.str("calibration_psd", _REQUIRED)))
        beta = sec.float("beta")
        if beta is None:
            beta = eom_beta_from_sideband_ratio(sec.float("sideband_ratio", _REQUIRED))
        A = calibrate_conversion(f_cal, p_cal, sec.float("tone_hz", _REQUIRED), beta)
        f, tot = io.read_psd(_resolve(args.config_dir, sec.str("total_psd", _REQUIRED)))
        f2, shot = io.read_psd(_resolve(args.config_dir, sec.str("shot_psd", _REQUIRED)))
        dark = None
        if "dark_psd" in sec:
            _, dark = io.read_psd(_resolve(args.config_dir, sec.str("dark_psd")))
        if not np.array_equal(f, f2):
            raise ConfigError("total and shot PSDs must share one frequency grid")
        res = laser_frequency_noise(f, tot, shot, dark, A, sec.float("band_center_hz"),
                                    sec.float("band_span_hz", 10e6),
                                    sec.bool("shot_includes_dark", True))
        # S_ww in rad^2/s^2/Hz; report frequency noise in Hz^2/Hz
        table = write_table(args.out, "laser_psd", io.PSD_HEADER, (res.freq, res.s_ww / TWO_PI**2),
                            args.format)
        summary = {"beta": beta, "conversion": A, "n_floored": res.n_floored,
                   "band": res.band_stats}
        return [table, io.write_json(args.out / "noise_summary.json", summary)]
    if mode == "occupancy":
        om = TWO_PI * sec.float("mechanical_frequency_hz", _REQUIRED)
        flux = sec.float("photon_flux_per_s", _REQUIRED)
        s_ww = sec.float("s_ww_rad2_per_s", _REQUIRED)
        C = sec.float("cooperativity", _REQUIRED)
        ratio = sec.float("kappa_ext2_over_kappa", 0.5)
        n_phon = phase_noise_phonons(s_ww, om, flux, C=C, kappa_ext2_over_kappa=ratio)
        n_phot = s_ww * flux / om**2
        out = {"n_phi_photon": n_phot, "n_phi_phonon": n_phon}
        if "inferred_occupancy" in sec:
            out["true_occupancy"] = float(true_occupancy_from_inferred(
                sec.float("inferred_occupancy"), n_phot, ratio, C))
        return [io.write_json(args.out / "noise_summary.json", out)]
    raise ConfigError(f"[noise] unknown mode {mode!r}")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "thermometry": cmd_thermometry,
            "thermal": cmd_thermal, "cavity": cmd_cavity, "align": cmd_align, "noise": cmd_noise}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for batch work")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of tabular outputs")
    ap = argparse.ArgumentParser(prog="brillotherm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="synthesize transmission and ESA traces")
    p = sub.add_parser("fit", parents=[common], help="staged OMIT/OMIA or Fano fit of a trace")
    p.add_argument("trace", nargs="?", help="trace CSV (overrides [fit] trace)")
    p.add_argument("--model", choices=("omit", "fano"))
    p.add_argument("--unweighted", action="store_true", help="ignore the sigma_w column")
    p = sub.add_parser("thermometry", parents=[common], help="occupancy from a red/blue pair")
    p.add_argument("--red")
    p.add_argument("--blue")
    p.add_argument("--corrections")
    sub.add_parser("thermal", parents=[common], help="crystal temperature during a warmup")
    sub.add_parser("cavity", parents=[common], help="mode spacing versus back-mirror position")
    sub.add_parser("align", parents=[common], help="Gaussian tilt fits")
    sub.add_parser("noise", parents=[common], help="laser and cavity frequency noise")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config)
        args.config_dir = Path(args.config).resolve().parent if args.config else None
        args.out = Path(args.out)
        args.out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[args.command](args, cfg):
            print(path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicsError as e:
        print(f"physics error: {e}", file=sys.stderr)
        return EXIT_PHYSICS
    except FitError as e:
        print(f"fit error: {e}", file=sys.stderr)
        return EXIT_FIT
    except UnphysicalResultError as e:
        print(f"unphysical result: {e}", file=sys.stderr)
        return EXIT_UNPHYSICAL
    except BrillothermError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PHYSICS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
