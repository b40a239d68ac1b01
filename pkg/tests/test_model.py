import numpy as np
import pytest
import sympy as sp
from scipy import integrate, optimize

from brillotherm.errors import ConfigError, InstabilityError
from brillotherm.model import (HBAR, MassConvention, MechanicalMode, ModeGeometry, OpticalMode,
                               PumpSetting, Side, SystemParams, backaction, coupling_rates,
                               cooperativity, effective_mass, energy_conservation_residual,
                               enhanced_coupling, intracavity_photon_number, red_scattering_row,
                               blue_scattering_row, resonant_backaction, scattering_row,
                               scattering_s23_mag2)

from conftest import GAMMA_HZ, KAPPA_HZ, TWO_PI, make_system


def linear_solve_row(params: SystemParams, omega):
    """|S2j|^2 from solving the frequency-domain Langevin equations directly."""
    sig = params.signal_mode
    s = params.pump.side.sign
    g = coupling_rates(params)
    n = len(params.mechanics)
    rows = []
    for w in np.atleast_1d(omega):
        M = np.zeros((n + 1, n + 1), dtype=complex)
        M[0, 0] = sig.kappa / 2 - 1j * (w - s * params.delta_21)
        for k, (gk, m) in enumerate(zip(g, params.mechanics)):
            M[0, k + 1] = 1j * gk
            M[k + 1, k + 1] = m.gamma_m / 2 - 1j * (w - s * m.omega_m)
            M[k + 1, 0] = 1j * gk * s
        # drive columns: port 1, port 2, each mechanical bath, internal loss
        B = np.zeros((n + 1, n + 3), dtype=complex)
        B[0, 0] = np.sqrt(sig.kappa_ext1)
        B[0, 1] = np.sqrt(sig.kappa_ext2)
        B[0, -1] = np.sqrt(sig.kappa_int)
        for k, m in enumerate(params.mechanics):
            B[k + 1, 2 + k] = np.sqrt(m.gamma_m)
        a = np.linalg.solve(M, B)[0]
        out = -np.sqrt(sig.kappa_ext2) * a
        out[1] += 1.0
        mag = np.abs(out) ** 2
        rows.append((mag[0], mag[1], mag[2:2 + n].sum(), mag[-1]))
    return np.array(rows).T


# --- photon number and coupling ----------------------------------------------------

def test_photon_number_zero_power_and_far_detuning():
    mode = OpticalMode(TWO_PI * 193e12, 1e6, 1e6, 1e6)
    assert intracavity_photon_number(PumpSetting("red", 0.0), mode) == 0
    far = intracavity_photon_number(PumpSetting("red", 1e-3, 1e15), mode)
    near = intracavity_photon_number(PumpSetting("red", 1e-3, 0.0), mode)
    assert far < 1e-12 * near


@pytest.mark.parametrize("detuning", [0.0, 3e6])
def test_photon_number_matches_langevin_relaxation(detuning):
    mode = OpticalMode(TWO_PI * 193.4e12, TWO_PI * 0.7e6, TWO_PI * 0.9e6, TWO_PI * 0.8e6)
    pump = PumpSetting("red", 5e-5, detuning)
    drive = np.sqrt(pump.power_in / (HBAR * mode.omega))
    k = mode.kappa

    # dimensionless time tau = kappa t
    def rhs(tau, y):
        a = y[0] + 1j * y[1]
        da = (-(0.5 - 1j * detuning / k) * a + np.sqrt(mode.kappa_ext1) * drive / k)
        return [da.real, da.imag]

    sol = integrate.solve_ivp(rhs, (0, 60), [0.0, 0.0], rtol=1e-11, atol=1e-6)
    a_end = sol.y[0, -1] + 1j * sol.y[1, -1]
    assert abs(a_end) ** 2 == pytest.approx(intracavity_photon_number(pump, mode), rel=1e-7)


def test_zero_linewidth_rejected():
    with pytest.raises(ConfigError):
        OpticalMode(1.0, 0.0, 0.0, 0.0)


def test_enhanced_coupling_square_root_law():
    g0 = TWO_PI * 8.39
    assert enhanced_coupling(g0, 0) == 0
    assert enhanced_coupling(g0, 1) == pytest.approx(g0)
    assert enhanced_coupling(g0, 4) == pytest.approx(2 * g0)


# --- backaction and cooperativity --------------------------------------------------

def test_backaction_without_coupling():
    mech = MechanicalMode(TWO_PI * 12.6e9, TWO_PI * 54.5e3, 1.0)
    ba = backaction(0.0, TWO_PI * 2.4e6, TWO_PI * 12.6e9, TWO_PI * 12.6e9, mech, Side.RED)
    assert (ba.delta_omega, ba.delta_gamma) == (0.0, 0.0)
    assert (ba.omega_eff, ba.gamma_eff) == (mech.omega_m, mech.gamma_m)


def test_backaction_on_resonance():
    mech = MechanicalMode(TWO_PI * 12.6e9, TWO_PI * 54.5e3, 1.0)
    g, kap, d21 = TWO_PI * 30e3, TWO_PI * 2.4e6, TWO_PI * 12.6e9
    ba = backaction(g, kap, d21, d21, mech, Side.RED)
    assert ba.delta_omega == 0
    assert ba.delta_gamma == pytest.approx(4 * g**2 / kap, rel=1e-14)


@pytest.mark.parametrize("side", ["red", "blue"])
def test_backaction_matches_complex_self_energy(side):
    mech = MechanicalMode(TWO_PI * 12.6e9, TWO_PI * 54.5e3, 1.0)
    g, kap, d21 = TWO_PI * 20e3, TWO_PI * 2.4e6, TWO_PI * 12.6e9
    w = d21 + TWO_PI * 0.77e6
    sigma = g**2 / ((w - d21) + 1j * kap / 2)
    ba = backaction(g, kap, d21, w, mech, side)
    s = 1 if side == "red" else -1
    assert ba.delta_omega == pytest.approx(sigma.real, rel=1e-12)
    assert ba.delta_gamma == pytest.approx(-2 * sigma.imag, rel=1e-12)
    assert ba.omega_eff == pytest.approx(mech.omega_m + s * sigma.real, rel=1e-15)
    assert ba.gamma_eff == pytest.approx(mech.gamma_m - s * 2 * sigma.imag, rel=1e-12)


def test_blue_instability_flagged():
    mech = MechanicalMode(TWO_PI * 12.6e9, TWO_PI * 54.5e3, 1.0)
    kap, gm = TWO_PI * 2.4e6, mech.gamma_m
    g = np.sqrt(1.01 * kap * gm / 4)
    with pytest.raises(InstabilityError):
        backaction(g, kap, mech.omega_m, mech.omega_m, mech, Side.BLUE)


def test_cooperativity_values():
    assert cooperativity(0.0, 1.0, 1.0) == 0
    kap, gm = TWO_PI * KAPPA_HZ, TWO_PI * GAMMA_HZ
    mech = MechanicalMode(TWO_PI * 12.6e9, gm, 1.0)
    g1 = np.sqrt(kap * gm / 4)
    assert cooperativity(g1, kap, gm) == pytest.approx(1.0)
    ba = backaction(g1, kap, mech.omega_m, mech.omega_m, mech, Side.RED)
    assert ba.gamma_eff == pytest.approx(2 * gm)
    g = np.sqrt(0.15 * kap * gm / 4)
    ba = backaction(g, kap, mech.omega_m, mech.omega_m, mech, Side.RED)
    assert ba.gamma_eff / TWO_PI == pytest.approx(62.675e3, rel=1e-12)


def test_resonant_backaction_is_one_plus_minus_c():
    for side, sign in (("red", 1), ("blue", -1)):
        p = make_system(side, C=0.6)
        ba = resonant_backaction(p, 0)
        assert ba.gamma_eff == pytest.approx((1 + sign * 0.6) * p.mechanics[0].gamma_m, rel=1e-10)


# --- scattering -------------------------------------------------------------------------

def test_s23_zero_without_coupling():
    p = make_system("red", C=0.0)
    w = np.linspace(p.delta_21 - 1e6, p.delta_21 + 1e6, 11)
    assert np.all(scattering_s23_mag2(p, 0, w) == 0)


@pytest.mark.parametrize("side", ["red", "blue"])
def test_s23_peak_location_and_height(side):
    p = make_system(side, C=0.4)
    s = p.pump.side.sign
    # closed form on a fine grid
    w = s * p.delta_21 + TWO_PI * np.linspace(-300e3, 300e3, 60001)
    vals = scattering_s23_mag2(p, 0, w)
    i = int(np.argmax(vals))
    assert w[i] == pytest.approx(s * p.delta_21, abs=TWO_PI * 20)
    # independent oracle: bounded maximization of the linear-solve |S23|^2
    res = optimize.minimize_scalar(lambda u: -linear_solve_row(p, s * p.delta_21 + u)[2][0],
                                   bounds=(-TWO_PI * 300e3, TWO_PI * 300e3), method="bounded",
                                   options={"xatol": 1e-3})
    assert vals[i] == pytest.approx(-res.fun, rel=1e-6)


@pytest.mark.parametrize("side", ["red", "blue"])
def test_row_matches_linear_solve(side):
    p = make_system(side, C=0.5, g0_hz=(4.02, 8.39, 7.75), offsets_hz=(-0.63e6, 0.0, 0.63e6),
                    ratios_red=(0.35, 0.25, 0.4), ratios_blue=(0.2, 0.45, 0.35))
    s = p.pump.side.sign
    w = s * p.delta_21 + TWO_PI * np.linspace(-2e6, 2e6, 41)
    ours = np.array(scattering_row(p, w))
    oracle = linear_solve_row(p, w)
    np.testing.assert_allclose(ours, oracle, rtol=1e-9, atol=1e-15)


@pytest.mark.parametrize("side", ["red", "blue"])
def test_single_mode_row_matches_closed_form_s23(side):
    p = make_system(side, C=0.7)
    s = p.pump.side.sign
    w = s * p.delta_21 + TWO_PI * np.linspace(-1e6, 1e6, 201)
    np.testing.assert_allclose(scattering_row(p, w)[2], scattering_s23_mag2(p, 0, w), rtol=1e-7)


def test_lossless_single_port_reflects_fully():
    k = TWO_PI * KAPPA_HZ
    red = OpticalMode(TWO_PI * 193.4e12, 0.0, k, 0.0)
    blue = OpticalMode(TWO_PI * 193.41e12, 0.3 * k, 0.3 * k, 0.4 * k)
    mech = MechanicalMode(TWO_PI * 10e9, TWO_PI * 50e3, 0.0)
    p = SystemParams(red, blue, [mech], PumpSetting("blue", 1e-4))
    r21, r22, r23, r24 = blue_scattering_row(p, np.array([-p.delta_21]))
    assert r22[0] == pytest.approx(1.0, abs=1e-15)
    assert r23[0] == 0


def test_row_side_guards():
    with pytest.raises(ConfigError):
        blue_scattering_row(make_system("red"), np.array([0.0]))
    with pytest.raises(ConfigError):
        red_scattering_row(make_system("blue"), np.array([0.0]))


def test_conservation_without_coupling():
    for side in ("red", "blue"):
        p = make_system(side, C=0.0)
        w = p.pump.side.sign * p.delta_21 + TWO_PI * np.linspace(-5e6, 5e6, 101)
        assert np.max(np.abs(energy_conservation_residual(p, w))) < 1e-14


def random_system(rng, side):
    k = TWO_PI * rng.uniform(0.5e6, 5e6)
    fr = rng.dirichlet([1, 1, 1])
    fb = rng.dirichlet([1, 1, 1])
    red = OpticalMode(TWO_PI * 193.4e12, *(k * fr))
    blue = OpticalMode(TWO_PI * 193.4e12 + TWO_PI * 12.6e9, *(k * rng.uniform(0.5, 2) * fb))
    n = rng.integers(1, 4)
    mechs = [MechanicalMode(TWO_PI * (12.6e9 + rng.uniform(-0.2e6, 0.2e6) + 1.5e6 * (j - 1)), TWO_PI * rng.uniform(20e3, 80e3),
                            TWO_PI * rng.uniform(1, 10)) for j in range(n)]
    p = SystemParams(red, blue, mechs, PumpSetting(side, 1e-6))
    # power scaled so the strongest mode stays below its instability threshold
    sig = p.signal_mode
    c1 = max(cooperativity(g, sig.kappa, m.gamma_m) for g, m in zip(coupling_rates(p), mechs))
    target = rng.uniform(0.01, 0.95 if side == "blue" else 5.0)
    return SystemParams(red, blue, mechs, PumpSetting(side, 1e-6 * target / c1))


@pytest.mark.parametrize("side", ["red", "blue"])
def test_conservation_random_draws(side):
    rng = np.random.default_rng(7 if side == "red" else 8)
    worst = 0.0
    for _ in range(300):
        p = random_system(rng, side)
        w = p.pump.side.sign * p.delta_21 + TWO_PI * rng.uniform(-4e6, 4e6, 16)
        worst = max(worst, float(np.max(np.abs(energy_conservation_residual(p, w)))))
    assert worst < 1e-9


def test_conservation_near_blue_threshold():
    p = make_system("blue", C=0.999)
    w = -p.delta_21 + TWO_PI * np.linspace(-200e3, 200e3, 4001)
    assert np.max(np.abs(energy_conservation_residual(p, w))) < 1e-9


def test_blue_row_unstable_raises():
    with pytest.raises(InstabilityError):
        scattering_row(make_system("blue", C=1.2), np.array([0.0]))


# --- effective mass -----------------------------------------------------------------

def symbolic_effective_mass():
    """Effective mass from equating the strain energy of the Gaussian mode with
    M Omega^2 x^2 / 2, with x either the peak or the RMS displacement over a
    cylinder of radius 2 a (a = w0 / sqrt 2)."""
    r, z, a, L, rho, S0, c = sp.symbols("r z a L rho S0 c", positive=True)
    m = sp.symbols("m", positive=True, integer=True)
    c33 = rho * c**2
    energy = c33 / 2 * S0**2 * sp.integrate(sp.sin(m * sp.pi * z / L) ** 2, (z, 0, L)) \
        * sp.integrate(2 * sp.pi * r * sp.exp(-2 * r**2 / a**2), (r, 0, sp.oo))
    omega = sp.pi * c * m / L
    x = sp.symbols("x", positive=True)
    mass = sp.simplify(2 * energy / (omega**2 * x**2))
    u0 = L * S0 / (m * sp.pi)
    R = 2 * a
    ms = sp.integrate(sp.cos(m * sp.pi * z / L) ** 2, (z, 0, L)) \
        * sp.integrate(2 * sp.pi * r * sp.exp(-2 * r**2 / a**2), (r, 0, R)) * u0**2 / (sp.pi * R**2 * L)
    x_rms = sp.sqrt(sp.simplify(ms))
    return sp.simplify(mass.subs(x, u0)), sp.simplify(mass.subs(x, x_rms)), (a, L, rho)


def test_effective_mass_against_symbolic_energy_balance():
    m_max, m_rms, (a, L, rho) = symbolic_effective_mass()
    geom = ModeGeometry(77e-6, 5e-3, 2650.0)
    vals = {a: geom.waist_w0 / np.sqrt(2), L: geom.crystal_L, rho: geom.density_rho}
    assert effective_mass(geom, MassConvention.MAX) == pytest.approx(float(m_max.subs(vals)), rel=1e-12)
    # the closed form drops the exp(-8) tail of the RMS cylinder
    assert effective_mass(geom, MassConvention.RMS) == pytest.approx(float(m_rms.subs(vals)), rel=5e-4)


def test_rms_displacement_by_quadrature():
    a, L = 77e-6 / np.sqrt(2), 5e-3
    R = 2 * a
    inner, _ = integrate.dblquad(lambda r, z: r * np.cos(np.pi * z / L) ** 2 * np.exp(-2 * r**2 / a**2),
                                 0, L, 0, R, epsabs=0, epsrel=1e-12)
    x_rms_over_max = np.sqrt(2 * np.pi * inner / (np.pi * R**2 * L))
    assert x_rms_over_max == pytest.approx(0.25, rel=5e-4)


def test_effective_mass_reference_values():
    geom = ModeGeometry(77e-6, 5e-3, 2650.0)
    assert effective_mass(geom, "rms") == pytest.approx(494e-9, rel=0.02)
    assert effective_mass(geom, "max") == pytest.approx(31e-9, rel=0.02)
    assert effective_mass(ModeGeometry(77e-6, 5e-3, 0.0)) == 0
