import numpy as np
import pytest
from scipy import optimize

from brillotherm.alignment import cavity_reflection_transmission, fano_parameters
from brillotherm.errors import ConfigError, ConvergenceError, FitError, NoFeatureError
from brillotherm.fitting import (FitResult, combine_drift, detect_features, fano_reflection,
                                 fit_fano_reflection, fit_mechanical_feature, fit_omit_staged,
                                 fit_optical_lorentzian, fit_power_scaling, lorentzian_jacobian,
                                 lorentzian_model, nls_fit, transmission_jacobian)
from brillotherm.model import coupling_rates, resonant_backaction
from brillotherm.spectra import NoiseModel, SpectrumTrace, omit_omia_transmission, synthesize_trace

from conftest import D21_HZ, KAPPA_HZ, TWO_PI, make_system

X = TWO_PI * np.linspace(-6e6, 6e6, 241)
TRUE = {"delta_21": TWO_PI * 0.3e6, "kappa": TWO_PI * 2.4e6, "a0": 0.9}
SCALES = {"delta_21": TRUE["kappa"], "kappa": TRUE["kappa"]}


def lorentz_fit(y, init, sigma=None, **kw):
    return nls_fit(lorentzian_model, X, y, init, sigma=sigma, jac=lorentzian_jacobian, scales=SCALES, **kw)


# --- generic least squares ----------------------------------------------------

def test_exact_init_recovers_exactly():
    y = lorentzian_model(X, **TRUE)
    fit = lorentz_fit(y, TRUE)
    for k, v in TRUE.items():
        assert fit.params[k] == pytest.approx(v, rel=1e-10)
    assert fit.converged


def test_perturbed_init_reaches_grid_refined_minimum(rng):
    y = lorentzian_model(X, **TRUE) + 0.01 * rng.standard_normal(X.size)

    def cost(v):
        return np.sum((y - lorentzian_model(X, *v)) ** 2)

    # oracle: coarse grid, then simplex refinement from the best grid point
    grid = [np.linspace(0.8, 1.2, 9) * TRUE[k] for k in ("delta_21", "kappa", "a0")]
    best = min(((a, b, c) for a in grid[0] for b in grid[1] for c in grid[2]), key=cost)
    ref = optimize.minimize(cost, best, method="Nelder-Mead",
                            options={"xatol": 1e-6, "fatol": 1e-16, "maxiter": 20000, "maxfev": 40000})
    for sgn in (-1, 1):
        init = {k: v * (1 + 0.2 * sgn) for k, v in TRUE.items()}
        fit = lorentz_fit(y, init)
        np.testing.assert_allclose([fit.params[k] for k in TRUE], ref.x, rtol=1e-6)


def test_covariance_matches_monte_carlo(rng):
    sig = 0.01
    clean = lorentzian_model(X, **TRUE)
    est, covs = [], []
    for _ in range(500):
        fit = lorentz_fit(clean + sig * rng.standard_normal(X.size), TRUE, sigma=np.full(X.size, sig))
        est.append([fit.params[k] for k in TRUE])
        covs.append(np.diag(fit.covariance))
    mc = np.std(est, axis=0, ddof=1)
    reported = np.sqrt(np.mean(covs, axis=0))
    np.testing.assert_allclose(reported, mc, rtol=0.15)


def test_normal_equations_at_optimum(rng):
    y = lorentzian_model(X, **TRUE) + 0.02 * rng.standard_normal(X.size)
    fit = lorentz_fit(y, TRUE)
    r = y - lorentzian_model(X, **fit.params)
    d = lorentzian_jacobian(X, **fit.params)
    for k in TRUE:
        col = d[k]
        assert abs(col @ r) <= 1e-8 * np.linalg.norm(col) * np.linalg.norm(r)


def test_analytic_jacobians_match_finite_differences(rng):
    def check(f, jac, p0, names):
        p0 = dict(p0)
        d = jac(**p0)
        for k in names:
            h = 1e-5 * max(abs(p0[k]), 1.0)
            up, dn = dict(p0), dict(p0)
            up[k] += h
            dn[k] -= h
            fd = (f(**up) - f(**dn)) / (2 * h)
            scale = np.max(np.abs(fd))
            np.testing.assert_allclose(d[k], fd, rtol=1e-6, atol=1e-6 * scale)

    pts = TWO_PI * rng.uniform(-5e6, 5e6, 100)
    check(lambda **p: lorentzian_model(pts, **p), lambda **p: lorentzian_jacobian(pts, **p),
          TRUE, TRUE.keys())
    mech = [(TWO_PI * 0.1e6, TWO_PI * 54.5e3, TWO_PI * 30e3), (TWO_PI * 0.8e6, TWO_PI * 50e3, TWO_PI * 20e3)]
    for side in ("red", "blue"):
        def f(delta_21, kappa, a0, om, gm, g):
            from brillotherm.spectra import transmission_lineshape
            return transmission_lineshape(pts, delta_21, kappa, a0, [mech[0], (om, gm, g)], side)

        def j(delta_21, kappa, a0, om, gm, g):
            d = transmission_jacobian(pts, delta_21, kappa, a0, [mech[0], (om, gm, g)], side)
            out = {k: d[k] for k in ("delta_21", "kappa", "a0")}
            out["om"], out["gm"], out["g"] = d["mech"][1]
            return out

        p0 = dict(TRUE, om=mech[1][0], gm=mech[1][1], g=mech[1][2])
        check(f, j, p0, p0.keys())


def test_unit_rescaling_invariance(rng):
    y = lorentzian_model(X, **TRUE) + 0.01 * rng.standard_normal(X.size)
    sig = np.full(X.size, 0.01)
    a = lorentz_fit(y, TRUE, sigma=sig)
    k = 1e3
    init = dict(TRUE, a0=TRUE["a0"] * np.sqrt(k))
    b = lorentz_fit(y * k, init, sigma=sig * k)
    # agreement to the stopping tolerance, far below the statistical error
    assert b.params["kappa"] == pytest.approx(a.params["kappa"], rel=1e-7)
    assert b.params["a0"] == pytest.approx(a.params["a0"] * np.sqrt(k), rel=1e-7)
    assert b.sigma("kappa") == pytest.approx(a.sigma("kappa"), rel=1e-6)
    assert b.sigma("a0") == pytest.approx(a.sigma("a0") * np.sqrt(k), rel=1e-6)


def test_iteration_limit_and_guards():
    y = lorentzian_model(X, **TRUE)
    init = {k: v * 1.3 for k, v in TRUE.items()}
    with pytest.raises(ConvergenceError) as exc:
        lorentz_fit(y, init, max_iter=1)
    assert exc.value.result is not None
    with pytest.raises(FitError):
        nls_fit(lorentzian_model, X[:2], y[:2], TRUE)
    with pytest.raises(ConfigError):
        lorentz_fit(y, TRUE, bounds={"kappa": (0, 1.0)})
    with pytest.raises(FitError):
        nls_fit(lambda x, a, b: a * np.ones_like(x), X, y, {"a": 1.0, "b": 2.0})


def test_fit_result_round_trip():
    fit = lorentz_fit(lorentzian_model(X, **TRUE), TRUE)
    back = FitResult.from_dict(fit.to_dict())
    assert back.params == fit.params
    np.testing.assert_array_equal(back.covariance, fit.covariance)


# --- OMIT / OMIA ---------------------------------------------------------------

def omit_trace(side="red", C=0.3, modes=3, n=8001, span=12e6, noise=0.0, seed=0):
    g0 = (4.02, 8.39, 7.75)[:modes]
    off = (-0.63e6, 0.0, 0.63e6)[:modes] if modes == 3 else (0.0,) * modes
    p = make_system(side, C=C, g0_hz=g0, offsets_hz=off)
    f = D21_HZ + np.linspace(-span, span, n)
    tr = omit_omia_transmission(p, TWO_PI * f)
    if noise:
        tr = synthesize_trace(tr, NoiseModel(noise, (), seed))
    return p, tr


def test_optical_fit_exact_lorentzian():
    p, tr = omit_trace(C=0.0, modes=1)
    fit = fit_optical_lorentzian(tr)
    assert fit.params["kappa"] == pytest.approx(p.signal_mode.kappa, rel=1e-9)
    assert fit.params["delta_21"] == pytest.approx(p.delta_21, rel=1e-12)


def test_optical_fit_three_modes_noiseless():
    p, tr = omit_trace()
    base = lorentzian_model(TWO_PI * tr.freq, p.delta_21, p.signal_mode.kappa, 1.0)
    feats = detect_features(tr, base, max_width_hz=KAPPA_HZ / 10)
    assert len(feats) == 3
    np.testing.assert_allclose([ft.center_hz for ft in feats], [m.omega_m / TWO_PI for m in p.mechanics],
                               atol=10e3)
    st = fit_omit_staged(tr)
    assert st.optical.params["kappa"] == pytest.approx(p.signal_mode.kappa, rel=1e-3)
    # without the back-fit passes the overlapping mechanical tails bias kappa
    assert st.first_pass[0].params["kappa"] != pytest.approx(p.signal_mode.kappa, rel=1e-3)


def test_optical_fit_noise_bias():
    ks = []
    for seed in range(30):
        p, tr = omit_trace(noise=0.01, seed=seed, n=4001)
        ks.append(fit_omit_staged(tr, backfit=1).optical.params["kappa"])
    assert np.mean(ks) == pytest.approx(p.signal_mode.kappa, rel=0.01)


def test_mechanical_fit_recovers_coupling():
    p, tr = omit_trace(C=0.3, modes=1, span=6e6)
    st = fit_omit_staged(tr)
    g = coupling_rates(p)[0]
    assert st.mechanical[0].params["g"] == pytest.approx(g, rel=5e-3)


def test_mechanical_fit_without_feature():
    p, tr = omit_trace(C=0.0, modes=1, span=6e6)
    tr = synthesize_trace(tr, NoiseModel(1e-3, (), 1))
    opt = fit_optical_lorentzian(tr)
    with pytest.raises(NoFeatureError):
        fit_mechanical_feature(tr, opt, (D21_HZ - 0.5e6, D21_HZ + 0.5e6), "red")


def test_omia_gain_regime_linewidth():
    C = 0.9
    p, tr = omit_trace("blue", C=C, modes=1, span=6e6, n=12001)
    st = fit_omit_staged(tr)
    m = st.mechanical[0].params
    kap = st.optical.params["kappa"]
    gamma_eff = m["gamma_m"] - 4 * m["g"] ** 2 / kap
    assert gamma_eff == pytest.approx((1 - C) * p.mechanics[0].gamma_m, rel=0.02)
    assert gamma_eff == pytest.approx(resonant_backaction(p, 0).gamma_eff, rel=0.02)


@pytest.mark.parametrize("side", ["red", "blue"])
def test_staged_fit_reproduces_generator(side):
    p, tr = omit_trace(side, C=0.3 if side == "red" else 0.2)
    st = fit_omit_staged(tr)
    g = coupling_rates(p)
    assert st.optical.params["kappa"] == pytest.approx(p.signal_mode.kappa, rel=5e-3)
    assert st.optical.params["delta_21"] == pytest.approx(p.delta_21, rel=5e-3)
    for k, fit in enumerate(st.mechanical):
        assert fit.params["omega_m"] == pytest.approx(p.mechanics[k].omega_m, rel=5e-3)
        assert fit.params["gamma_m"] == pytest.approx(p.mechanics[k].gamma_m, rel=5e-3)
        assert fit.params["g"] == pytest.approx(g[k], rel=5e-3)


# --- Fano reflection ---------------------------------------------------------------

def physical_reflection(phi, kappa_ext1=TWO_PI * 0.8e6, kappa_ext2=TWO_PI * 0.5e6, kappa_int=TWO_PI * 1.1e6,
                        center_hz=30e6, n=3001):
    """Reflection of a misaligned cavity with the direct path chosen to give phase ``phi``."""
    P = 0.85 * np.exp(0.4j)
    q = 0.9 * np.exp(-1j * phi)
    s11 = P / q - P
    kap = kappa_ext1 + kappa_ext2 + kappa_int
    f = center_hz + np.linspace(-12, 12, n) * kap / TWO_PI
    r2, _ = cavity_reflection_transmission(TWO_PI * (f - center_hz), kappa_ext1, kappa_ext2, kappa_int,
                                           s11, P)
    return SpectrumTrace(f, r2), fano_parameters(kappa_ext1, s11, P), kap


def test_fano_symmetric_depth():
    k, ke = 2.0, 0.6
    val = fano_reflection(np.array([5.0]), 1.0, ke, 0.0, k, 5.0)[0]
    assert val == pytest.approx((1 - ke / (k / 2)) ** 2, rel=1e-15)


def test_fano_flat_without_coupling():
    x = np.linspace(-10, 10, 11)
    np.testing.assert_array_equal(fano_reflection(x, 0.7, 0.0, 0.3, 2.0, 0.0), np.full(11, 0.7))


def test_fano_asymmetric_round_trip():
    tr, (r_off, sk, phi), kap = physical_reflection(0.3)
    fit = fit_fano_reflection(tr)
    p = fit.params
    assert p["r_offres"] == pytest.approx(r_off, rel=1e-3)
    assert p["s_prime_kappa_ext"] == pytest.approx(sk, rel=1e-3)
    assert p["phi"] == pytest.approx(phi, rel=1e-3)
    assert p["kappa"] == pytest.approx(kap, rel=1e-3)
    assert p["omega0"] / TWO_PI == pytest.approx(30e6, abs=1e-3 * kap / TWO_PI)


# --- power scaling -----------------------------------------------------------------------

def test_power_scaling_exact_line():
    pts = [(p, 3.0 * p + 2.0, 0.1) for p in (1.0, 2.0, 3.0, 5.0)]
    fit = fit_power_scaling(pts)
    assert fit.params["slope"] == pytest.approx(3.0, rel=1e-14)
    assert fit.params["intercept"] == pytest.approx(2.0, rel=1e-14)
    assert fit.extras["r2"] == pytest.approx(1.0)
    with pytest.raises(FitError):
        fit_power_scaling([(1.0, 1.0, 1.0)] * 3)
    with pytest.raises(FitError):
        fit_power_scaling([(1.0, 1.0, 1.0)] * 2)


def test_power_scaling_end_to_end():
    gammas, coops = [], []
    powers = []
    for C in (0.1, 0.2, 0.3, 0.4, 0.5):
        p, tr = omit_trace("red", C=C, modes=1, span=6e6, noise=1e-4, seed=int(C * 10))
        st = fit_omit_staged(tr)
        m = st.mechanical[0]
        kap = st.optical.params["kappa"]
        c_fit = 4 * m.params["g"] ** 2 / (kap * m.params["gamma_m"])
        powers.append(p.pump.power_in)
        coops.append((c_fit, 4 * 2 * m.params["g"] * m.sigma("g") / (kap * m.params["gamma_m"])))
        gammas.append((m.params["gamma_m"] * (1 + c_fit), m.sigma("gamma_m") * (1 + c_fit)))
    cf = fit_power_scaling([(P, c, s) for P, (c, s) in zip(powers, coops)])
    gf = fit_power_scaling([(P, g, s) for P, (g, s) in zip(powers, gammas)])
    assert cf.extras["r2"] > 0.999 and gf.extras["r2"] > 0.999
    assert abs(cf.params["intercept"]) <= 2 * cf.sigma("intercept") + 1e-6
    assert gf.params["intercept"] == pytest.approx(TWO_PI * 54.5e3, rel=0.01)


def test_combine_drift():
    mean, sig = combine_drift((1.0, 0.1), (1.2, 0.1))
    assert mean == pytest.approx(1.1)
    assert sig == pytest.approx(np.sqrt(0.005 + 0.01))
