"""CSV and JSON readers and writers for every file the command line touches."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .alignment import TiltState
from .errors import ConfigError
from .fitting import FitResult
from .spectra import SpectrumTrace, TraceMeta
from .thermal import WarmupSeries

TRACE_HEADER = ("freq_hz", "power_w", "sigma_w")
WARMUP_HEADER = ("time_s", "v_mount_k", "v_still_k")
CURVE_HEADER = ("delta_l_m", "spacing_hz")
OBS_HEADER = ("theta_in_deg", "phi_in_deg", "theta_bm_deg", "phi_bm_deg", "theta_tr_deg",
              "phi_tr_deg", "value", "which")
PSD_HEADER = ("freq_hz", "psd")
DIP_HEADER = ("dip_time_s",)


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header, columns):
    """Write equal-length columns; floats keep full round-trip precision."""
    path = Path(path)
    rows = zip(*columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])
    return path


def read_csv(path, header, required=None):
    """Columns of a CSV file keyed by header name (numeric unless listed as text)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    got = [h.strip() for h in rows[0]]
    need = list(header if required is None else required)
    missing = [h for h in need if h not in got]
    if missing:
        raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
    out = {h: [] for h in got}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(got):
            raise ConfigError(f"{path}:{lineno}: expected {len(got)} fields, found {len(row)}")
        for h, c in zip(got, row):
            out[h].append(c.strip())
    return out


def _floats(path, col, values):
    try:
        return np.array([float(v) for v in values], dtype=float)
    except ValueError:
        raise ConfigError(f"{path}: non-numeric value in column {col}") from None


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


# --- traces -------------------------------------------------------------------

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def write_trace(path, trace: SpectrumTrace, extra=None):
    """Trace CSV plus a JSON sidecar with the metadata."""
    path = write_csv(path, TRACE_HEADER, (trace.freq, trace.power, trace.sigma))
    m = trace.meta
    meta = {"rbw_hz": m.rbw_hz, "pump_side": m.pump_side.value if m.pump_side else None,
            "n_averages": int(m.n_averages), "timestamp_start": m.timestamp_start,
            "timestamp_end": m.timestamp_end}
    meta.update(m.extra)
    if extra:
        meta.update(extra)
    write_json(sidecar_path(path), meta)
    return path


def read_trace(path) -> SpectrumTrace:
    cols = read_csv(path, TRACE_HEADER, required=("freq_hz", "power_w"))
    f = _floats(path, "freq_hz", cols["freq_hz"])
    p = _floats(path, "power_w", cols["power_w"])
    s = _floats(path, "sigma_w", cols["sigma_w"]) if "sigma_w" in cols else None
    if f.size == 0:
        raise ConfigError(f"{path}: trace has no data rows")
    side = Path(sidecar_path(path))
    meta = TraceMeta()
    if side.exists():
        d = read_json(side)
        known = ("rbw_hz", "pump_side", "n_averages", "timestamp_start", "timestamp_end")
        meta = TraceMeta(rbw_hz=d.get("rbw_hz"), pump_side=d.get("pump_side"),
                         n_averages=int(d.get("n_averages") or 1),
                         timestamp_start=d.get("timestamp_start"),
                         timestamp_end=d.get("timestamp_end"),
                         extra={k: v for k, v in d.items() if k not in known})
    return SpectrumTrace(f, p, s, meta)


# --- fit results and reports --------------------------------------------------

def write_fit(path, fit: FitResult, extra=None):
    d = fit.to_dict()
    if extra:
        d.update(extra)
    return write_json(path, d)


def read_fit(path) -> FitResult:
    d = read_json(path)
    try:
        return FitResult.from_dict(d)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"{path}: not a fit result ({e})") from None


# --- warmup -------------------------------------------------------------------

def read_warmup(path) -> WarmupSeries:
    cols = read_csv(path, WARMUP_HEADER)
    return WarmupSeries(*(_floats(path, h, cols[h]) for h in WARMUP_HEADER))


def write_warmup(path, series: WarmupSeries, v_crystal=None):
    header = WARMUP_HEADER + (("v_crystal_k",) if v_crystal is not None else ())
    cols = [series.times, series.v_m, series.v_s]
    if v_crystal is not None:
        cols.append(v_crystal)
    return write_csv(path, header, cols)


# --- cavity curves ------------------------------------------------------------

def write_curve(path, delta_l, spacing):
    return write_csv(path, CURVE_HEADER, (delta_l, spacing))


def read_curve(path):
    cols = read_csv(path, CURVE_HEADER)
    return _floats(path, "delta_l_m", cols["delta_l_m"]), _floats(path, "spacing_hz", cols["spacing_hz"])


# --- alignment observations -----------------------------------------------------

def read_observations(path):
    """Rows grouped by their ``which`` column: {which: [(TiltState, value), ...]}."""
    cols = read_csv(path, OBS_HEADER)
    nums = {h: _floats(path, h, cols[h]) for h in OBS_HEADER[:-1]}
    groups = {}
    for i, which in enumerate(cols["which"]):
        t = TiltState(*(nums[h][i] for h in OBS_HEADER[:6]))
        groups.setdefault(which, []).append((t, float(nums["value"][i])))
    return groups


def write_observations(path, groups):
    cols = [[] for _ in OBS_HEADER]
    for which, obs in groups.items():
        for t, v in obs:
            vals = (t.theta_in, t.phi_in, t.theta_bm, t.phi_bm, t.theta_tr, t.phi_tr, v)
            for c, x in zip(cols, vals):
                c.append(x)
            cols[-1].append(which)
    return write_csv(path, OBS_HEADER, cols)


# --- noise --------------------------------------------------------------------

def read_psd(path):
    cols = read_csv(path, PSD_HEADER)
    return _floats(path, "freq_hz", cols["freq_hz"]), _floats(path, "psd", cols["psd"])


def write_psd(path, freq, psd):
    return write_csv(path, PSD_HEADER, (freq, psd))


def read_dips(path):
    cols = read_csv(path, DIP_HEADER)
    return _floats(path, "dip_time_s", cols["dip_time_s"])


def write_dips(path, times):
    return write_csv(path, DIP_HEADER, (times,))
