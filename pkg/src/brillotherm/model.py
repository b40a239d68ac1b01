"""Parameter types and closed-form input-output quantities.

The two optical modes are labelled red (lower frequency, ``a_1``) and blue
(higher frequency, ``a_2``).  A red pump drives the red mode and scatters
anti-Stokes light into the blue mode; a blue pump drives the blue mode and
scatters Stokes light into the red mode.  The mode that receives the
scattered light is called the signal mode.

All rates and frequencies are angular (rad/s).  Sideband frequencies ``omega``
are measured in the frame rotating at the pump frequency, so the signal mode
sits at ``+delta_21`` for a red pump and at ``-delta_21`` for a blue pump.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

from .errors import ConfigError, InstabilityError

HBAR = constants.hbar
KB = constants.k


class Side(str, enum.Enum):
    RED = "red"
    BLUE = "blue"

    @classmethod
    def parse(cls, value) -> "Side":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"pump side must be 'red' or 'blue', got {value!r}") from None

    @property
    def sign(self) -> int:
        """+1 for red (cooling), -1 for blue (amplifying)."""
        return 1 if self is Side.RED else -1


class MassConvention(str, enum.Enum):
    MAX = "max"
    RMS = "rms"


@dataclass(frozen=True)
class OpticalMode:
    omega: float
    kappa_ext1: float
    kappa_ext2: float
    kappa_int: float

    def __post_init__(self):
        rates = (self.kappa_ext1, self.kappa_ext2, self.kappa_int)
        if any(not np.isfinite(r) or r < 0 for r in rates):
            raise ConfigError("optical loss rates must be finite and non-negative")
        if self.kappa <= 0:
            raise ConfigError("total optical linewidth must be positive")

    @property
    def kappa(self) -> float:
        return self.kappa_ext1 + self.kappa_ext2 + self.kappa_int


@dataclass(frozen=True)
class MechanicalMode:
    omega_m: float
    gamma_m: float
    g0: float
    n_th: float = 0.0

    def __post_init__(self):
        if not self.omega_m > 0:
            raise ConfigError("mechanical frequency must be positive")
        if not self.gamma_m > 0:
            raise ConfigError("mechanical linewidth must be positive")
        if not self.n_th >= 0:
            raise ConfigError("thermal occupation must be non-negative")


@dataclass(frozen=True)
class PumpSetting:
    side: Side
    power_in: float
    detuning: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "side", Side.parse(self.side))
        if not self.power_in >= 0:
            raise ConfigError("pump power must be non-negative")


@dataclass(frozen=True)
class DetectionChain:
    """Balanced heterodyne detection constants.

    ``delta_lo`` is the angular offset between LO and pump, so the scattered
    light beats with the LO at ``delta_21 - delta_lo``.
    """
    gain_G: float
    split_T: float
    eta: float
    p_lo: float
    delta_lo: float
    rbw: float
    load_R: float = 50.0
    hbar: float = HBAR

    def __post_init__(self):
        if not 0 < self.split_T < 1:
            raise ConfigError("beam-splitter transmission must lie in (0, 1)")
        if not 0 < self.eta <= 1:
            raise ConfigError("collection efficiency must lie in (0, 1]")
        if not self.rbw > 0 or not self.load_R > 0:
            raise ConfigError("RBW and load resistance must be positive")

    @property
    def beta(self) -> float:
        """Conversion prefactor 2*pi*(RBW/R_L)*4*G^2*eta*T*(1-T)."""
        return (2 * np.pi * (self.rbw / self.load_R) * 4 * self.gain_G**2
                * self.eta * self.split_T * (1 - self.split_T))


@dataclass(frozen=True)
class SystemParams:
    mode_red: OpticalMode
    mode_blue: OpticalMode
    mechanics: tuple
    pump: PumpSetting
    detection: DetectionChain | None = None
    delta_21: float = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mechanics", tuple(self.mechanics))
        if self.delta_21 is None:
            object.__setattr__(self, "delta_21", self.mode_blue.omega - self.mode_red.omega)
        if not self.delta_21 > 0:
            raise ConfigError("delta_21 must be positive (blue mode above red mode)")
        ms = self.mechanics
        for i in range(len(ms)):
            for j in range(i + 1, len(ms)):
                sep = abs(ms[i].omega_m - ms[j].omega_m)
                if sep < 10 * max(ms[i].gamma_m, ms[j].gamma_m):
                    raise ConfigError(
                        f"mechanical modes {i} and {j} are not resolved (separation "
                        "must exceed 10 linewidths)")

    @property
    def pump_mode(self) -> OpticalMode:
        return self.mode_red if self.pump.side is Side.RED else self.mode_blue

    @property
    def signal_mode(self) -> OpticalMode:
        return self.mode_blue if self.pump.side is Side.RED else self.mode_red


@dataclass(frozen=True)
class ModeGeometry:
    waist_w0: float
    crystal_L: float
    density_rho: float
    mode_number_m: int = 1


def intracavity_photon_number(pump: PumpSetting, mode: OpticalMode, hbar: float = HBAR) -> float:
    """Mean intracavity photon number of the pumped mode."""
    kappa = mode.kappa
    if kappa <= 0:
        raise ConfigError("optical linewidth must be positive")
    flux = pump.power_in / (hbar * mode.omega)
    return mode.kappa_ext1 * flux / ((kappa / 2) ** 2 + pump.detuning**2)


def enhanced_coupling(g0, n):
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("photon number must be non-negative")
    out = g0 * np.sqrt(n)
    return float(out) if out.ndim == 0 else out


def cooperativity(g, kappa, gamma_m):
    return 4 * np.asarray(g) ** 2 / (kappa * gamma_m)


@dataclass(frozen=True)
class Backaction:
    delta_omega: float
    delta_gamma: float
    omega_eff: float
    gamma_eff: float


def backaction(g, kappa_signal, delta_21, omega, mech: MechanicalMode, side: Side,
               check=True) -> Backaction:
    """Optical spring and damping from the self-energy g^2/((w - D21) + i k/2).

    For a blue pump the caller evaluates at the mirrored frequency (``-omega``
    of the scattering frame); the sign of the correction is applied here.
    """
    if not kappa_signal > 0:
        raise ConfigError("signal-mode linewidth must be positive")
    side = Side.parse(side)
    x = np.asarray(omega, dtype=float) - delta_21
    den = x**2 + (kappa_signal / 2) ** 2
    d_omega = g**2 * x / den
    d_gamma = g**2 * kappa_signal / den
    s = side.sign
    omega_eff = mech.omega_m + s * d_omega
    gamma_eff = mech.gamma_m + s * d_gamma
    if check and np.any(gamma_eff <= 0):
        raise InstabilityError(
            "effective mechanical linewidth is not positive; the blue-pumped mode "
            "is beyond the parametric instability threshold")
    return Backaction(d_omega, d_gamma, omega_eff, gamma_eff)


def coupling_rates(params: SystemParams) -> np.ndarray:
    """Pump-enhanced coupling g_m for every mechanical mode."""
    hbar = params.detection.hbar if params.detection is not None else HBAR
    n = intracavity_photon_number(params.pump, params.pump_mode, hbar)
    return np.array([enhanced_coupling(m.g0, n) for m in params.mechanics])


def check_stability(params: SystemParams, g=None):
    """Raise if any blue-pumped mode has cooperativity at or above one."""
    if params.pump.side is Side.RED:
        return
    g = coupling_rates(params) if g is None else g
    kappa = params.signal_mode.kappa
    for k, (gm, mech) in enumerate(zip(g, params.mechanics)):
        if cooperativity(gm, kappa, mech.gamma_m) >= 1:
            raise InstabilityError(
                f"mechanical mode {k}: cooperativity {cooperativity(gm, kappa, mech.gamma_m):.4g} "
                "reaches the parametric instability threshold")


def resonant_backaction(params: SystemParams, mech_index: int, g=None) -> Backaction:
    """Backaction evaluated at the bare mechanical frequency of one mode."""
    g = coupling_rates(params) if g is None else g
    mech = params.mechanics[mech_index]
    return backaction(g[mech_index], params.signal_mode.kappa, params.delta_21,
                      mech.omega_m, mech, params.pump.side)


def scattering_s23_mag2(params: SystemParams, mech_index: int, omega):
    """|S23|^2 for one mechanical mode, with frequency-dependent backaction."""
    g = coupling_rates(params)
    check_stability(params, g)
    mech = params.mechanics[mech_index]
    sig = params.signal_mode
    s = params.pump.side.sign
    omega = np.asarray(omega, dtype=float)
    # blue-pump scattering is the mirror image: evaluate the self-energy at -omega
    w = s * omega
    ba = backaction(g[mech_index], sig.kappa, params.delta_21, w, mech, params.pump.side,
                    check=False)
    cav = g[mech_index] ** 2 * sig.kappa_ext2 / ((sig.kappa / 2) ** 2 + (w - params.delta_21) ** 2)
    mechl = mech.gamma_m / ((ba.gamma_eff / 2) ** 2 + (w - ba.omega_eff) ** 2)
    return cav * mechl


def _row_amplitudes(params: SystemParams, omega):
    g = coupling_rates(params)
    sig = params.signal_mode
    s = params.pump.side.sign
    omega = np.asarray(omega, dtype=float)
    chi_a = 1.0 / (sig.kappa / 2 - 1j * (omega - s * params.delta_21))
    chis = [1.0 / (m.gamma_m / 2 - 1j * (omega - s * m.omega_m)) for m in params.mechanics]
    loop = sum((gm**2 * chi for gm, chi in zip(g, chis)), np.zeros_like(chi_a))
    # dressed cavity factor 1 + E
    one_plus_e = 1.0 / (1.0 + s * chi_a * loop)
    d = np.sqrt(sig.kappa_ext2) * chi_a
    s21 = -np.sqrt(sig.kappa_ext1) * d * one_plus_e
    s22 = 1.0 - np.sqrt(sig.kappa_ext2) * d * one_plus_e
    s24 = -np.sqrt(sig.kappa_int) * d * one_plus_e
    s23 = [-1j * gm * np.sqrt(m.gamma_m) * d * chi * one_plus_e
           for gm, m, chi in zip(g, params.mechanics, chis)]
    return s21, s22, s23, s24


def scattering_row(params: SystemParams, omega):
    """|S21|^2, |S22|^2, |S23|^2 (summed over mechanical modes), |S24|^2."""
    check_stability(params)
    s21, s22, s23, s24 = _row_amplitudes(params, omega)
    s23_mag2 = sum((np.abs(x) ** 2 for x in s23), np.zeros_like(np.abs(s21)))
    return np.abs(s21) ** 2, np.abs(s22) ** 2, s23_mag2, np.abs(s24) ** 2


def blue_scattering_row(params: SystemParams, omega):
    if params.pump.side is not Side.BLUE:
        raise ConfigError("blue_scattering_row requires a blue pump")
    return scattering_row(params, omega)


def red_scattering_row(params: SystemParams, omega):
    if params.pump.side is not Side.RED:
        raise ConfigError("red_scattering_row requires a red pump")
    return scattering_row(params, omega)


def energy_conservation_residual(params: SystemParams, omega):
    """Row-sum residual; the mechanical channel enters with a minus sign for a blue pump."""
    a21, a22, a23, a24 = scattering_row(params, omega)
    return a21 + a22 + params.pump.side.sign * a23 + a24 - 1.0


def effective_mass(geom: ModeGeometry, convention=MassConvention.RMS) -> float:
    """Effective mass of a Gaussian HBAR mode for the max or RMS displacement convention."""
    convention = MassConvention(convention)
    base = geom.density_rho * np.pi * (geom.waist_w0 / np.sqrt(2)) ** 2 * geom.crystal_L
    return base / 4 if convention is MassConvention.MAX else 4 * base
