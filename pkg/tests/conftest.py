import sys

import numpy as np
import pytest

from brillotherm.model import (HBAR, DetectionChain, MechanicalMode, OpticalMode, PumpSetting,
                               SystemParams, Side)

TWO_PI = 2 * np.pi
F_RED = 193.4e12
D21_HZ = 12.6553e9
KAPPA_HZ = 2.4e6
GAMMA_HZ = 54.5e3


def power_for_cooperativity(C, g0, mode: OpticalMode, kappa_signal, gamma_m):
    """Pump power that gives cooperativity C on a mode with vacuum coupling g0."""
    g2 = C * kappa_signal * gamma_m / 4
    n = g2 / g0**2
    return n * (mode.kappa / 2) ** 2 / mode.kappa_ext1 * HBAR * mode.omega


def make_system(side="red", C=0.1, g0_hz=(8.39,), offsets_hz=(0.0,), n_th=0.44, mech_detuning_hz=0.0,
                ratios_red=(0.3, 0.3, 0.4), ratios_blue=(0.3, 0.3, 0.4), detection=None,
                kappa_hz=KAPPA_HZ, gamma_hz=GAMMA_HZ):
    """Two-mode system whose largest-g0 mode reaches cooperativity C."""
    side = Side.parse(side)
    k = TWO_PI * kappa_hz
    red = OpticalMode(TWO_PI * F_RED, *(k * np.array(ratios_red)))
    blue = OpticalMode(TWO_PI * (F_RED + D21_HZ), *(k * np.array(ratios_blue)))
    mechs = [MechanicalMode(TWO_PI * (D21_HZ + mech_detuning_hz + off), TWO_PI * gamma_hz, TWO_PI * g0, n_th)
             for g0, off in zip(g0_hz, offsets_hz)]
    pump_mode, sig = (red, blue) if side is Side.RED else (blue, red)
    P = power_for_cooperativity(C, TWO_PI * max(g0_hz), pump_mode, sig.kappa, TWO_PI * gamma_hz)
    return SystemParams(red, blue, mechs, PumpSetting(side, P), detection, TWO_PI * D21_HZ)


def detection_chain(beat_hz=115e6):
    return DetectionChain(gain_G=1e3, split_T=0.5, eta=0.8, p_lo=1e-3,
                          delta_lo=TWO_PI * (D21_HZ - beat_hz), rbw=1e3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def esa_system(n_th, side, power_w, ratios_red=(0.35, 0.25, 0.4), ratios_blue=(0.3, 0.3, 0.4), beat_hz=115e6):
    """Thermometry setup with distinct red and blue couplings and a detuned mechanical mode."""
    red = OpticalMode(TWO_PI * F_RED, *(TWO_PI * 2.4e6 * np.array(ratios_red)))
    blue = OpticalMode(TWO_PI * (F_RED + D21_HZ), *(TWO_PI * 2.6e6 * np.array(ratios_blue)))
    mech = MechanicalMode(TWO_PI * (D21_HZ + 80e3), TWO_PI * GAMMA_HZ, TWO_PI * 8.39, n_th)
    return SystemParams(red, blue, [mech], PumpSetting(side, power_w), detection_chain(beat_hz),
                        TWO_PI * D21_HZ)


def exact_corrections(p):
    """CorrectionSet holding the generator's true values with zero uncertainty."""
    from brillotherm.model import resonant_backaction
    from brillotherm.thermometry import CorrectionSet
    ba = resonant_backaction(p, 0)
    r1 = p.mode_red.kappa_ext1 / p.mode_blue.kappa_ext1
    r2 = p.mode_red.kappa_ext2 / p.mode_blue.kappa_ext2
    return CorrectionSet(p.pump.side, p.pump.power_in, p.detection.p_lo, p.signal_mode.kappa,
                         ba.omega_eff - p.delta_21, ba.gamma_eff, r1, r2, p.pump_mode.kappa)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines after the run."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
