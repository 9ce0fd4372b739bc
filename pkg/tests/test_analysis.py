import numpy as np
import pytest
from dataclasses import replace

from conftest import default_models, quick_config, silent_models, two_state_generator
from switchns.analysis import (
    SystemSetup,
    BumpTestFunction,
    chain_test_report,
    continuity_study,
    energy_residual,
    eps_cauchy_study,
    estimate_moments,
    generator_apply,
    gronwall_bounds,
    martingale_test,
    mphi_series,
    refinement_study,
    run_moment_ensemble,
)
from switchns.integrator import InitialSpec, SimConfig, integrate_path
from switchns.nonlinear import MollifierTable, mollifier_multiplier
from switchns.regime import GeneratorMatrix
from switchns.spectral import SpectralField, build_modes, h_inner, h_norm


def frozen_gamma():
    return GeneratorMatrix(np.zeros((2, 2)))


def make_setup(modes, noisy=True, gamma=None, **cfg_kw):
    diffusion, jump = (default_models if noisy else silent_models)(modes)
    cfg = quick_config(k_max=modes.k_max, **cfg_kw)
    return SystemSetup(
        config=cfg,
        diffusion=diffusion,
        jump=jump,
        gamma=gamma if gamma is not None else two_state_generator(),
        master_seed=555,
    )


# -- a priori bounds --------------------------------------------------------


def test_bounds_collapse_without_noise():
    b = gronwall_bounds(nu=1.0, horizon=1.0, growth_k=0.0, n_states=2,
                        e_u0_sq=0.25, e_u0_cubed=0.125, int_f_sq=0.0, int_f_cubed=0.0)
    assert b.c_t == 0.25
    assert b.c1 == 0.25
    assert b.c2 == 0.5
    assert b.c3 == 2.0 * 0.125


def test_bounds_zero_data():
    b = gronwall_bounds(nu=1.0, horizon=1.0, growth_k=0.0, n_states=2,
                        e_u0_sq=0.0, e_u0_cubed=0.0, int_f_sq=0.0, int_f_cubed=0.0)
    assert b.c_t == b.c1 == b.c2 == b.c3 == 0.0


def test_bounds_discrete_gronwall_oracle():
    # independent re-derivation: iterate the integral recursion on a fine grid
    nu, horizon, k, m = 1.0, 1.0, 0.8, 2
    e2, f2 = 0.3, 0.2
    b = gronwall_bounds(nu=nu, horizon=horizon, growth_k=k, n_states=m, e_u0_sq=e2,
                        e_u0_cubed=None, int_f_sq=f2, int_f_cubed=None)
    c_t = e2 + f2 / nu + 2 * k * horizon * (1 + m**2)
    steps = 200_000
    dt = horizon / steps
    y = c_t
    acc = 0.0
    for _ in range(steps):
        acc += y * dt
        y = c_t + 2 * k * acc
    # the recursion converges to the sharp Gronwall value C_T e^{2KT}
    assert y <= c_t * np.exp(2 * k * horizon) * (1 + 5 * k * dt)
    plugback = c_t + 2 * k * acc
    assert plugback <= b.c1
    # the published constant is the crude majorization of the same recursion
    crude = c_t * (1 + 2 * k * horizon * np.exp(2 * k * horizon))
    assert abs(b.c1 - crude) < 1e-12 * crude


def test_bounds_monotone_in_every_argument():
    base = dict(nu=1.0, horizon=1.0, growth_k=0.5, n_states=2,
                e_u0_sq=0.3, e_u0_cubed=0.2, int_f_sq=0.1, int_f_cubed=0.05)
    b0 = gronwall_bounds(**base)
    for key, bigger in [("growth_k", 0.9), ("horizon", 1.5), ("e_u0_sq", 0.5),
                        ("int_f_sq", 0.4), ("e_u0_cubed", 0.5), ("int_f_cubed", 0.4)]:
        b1 = gronwall_bounds(**{**base, key: bigger})
        assert b1.c1 >= b0.c1 - 1e-12
        assert b1.c2 >= b0.c2 - 1e-12
        assert b1.c3 >= b0.c3 - 1e-12


# -- moment estimation ------------------------------------------------------


def test_moments_zero_dynamics(modes1):
    setup = make_setup(modes1, noisy=False, gamma=frozen_gamma(),
                       initial=InitialSpec(kind="zero"))
    report = run_moment_ensemble(setup, 120)
    assert report.e_sup_h2 == 0.0 and report.nu_int_v2 == 0.0
    assert report.passed


def test_moments_deterministic_single_mode(modes1):
    setup = make_setup(modes1, noisy=False, gamma=frozen_gamma(),
                       initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5))
    report = run_moment_ensemble(setup, 120)
    # E sup |u|^2 = |u0|^2 (monotone decay)
    assert abs(report.e_sup_h2 - 0.25) < 1e-12
    # nu int ||u||^2 over the decayed trajectory, continuous closed form
    closed = 0.25 * (1.0 - np.exp(-2.0)) / 2.0
    assert abs(report.nu_int_v2 - closed) < 4e-4  # O(dt) discretization
    assert report.passed


def test_moments_sup_dominates_final(modes1):
    setup = make_setup(modes1)
    report = run_moment_ensemble(setup, 150)
    assert report.e_sup_h2 >= report.e_final_h2
    assert report.blow_ups == 0


def test_moments_min_paths_guard(modes1):
    setup = make_setup(modes1)
    with pytest.raises(ValueError, match="paths"):
        run_moment_ensemble(setup, 20)


def test_moments_blow_up_fails_report(modes1):
    setup = make_setup(modes1)
    records = []
    real = setup.realization(0)
    from switchns.integrator import build_context
    ctx = build_context(setup.config, setup.diffusion, setup.jump)
    for p in range(120):
        records.append(integrate_path(setup.config, setup.diffusion, setup.jump,
                                      setup.realization(p), context=ctx))
    report = estimate_moments(records, 1.0, setup.bounds(), blow_ups=1)
    assert not report.passed


# -- energy balance ---------------------------------------------------------


def test_energy_residual_zero_path(modes1):
    setup = make_setup(modes1, noisy=False, gamma=frozen_gamma(),
                       initial=InitialSpec(kind="zero"), record_fields=True)
    real = setup.realization(0)
    rec = integrate_path(setup.config, setup.diffusion, setup.jump, real)
    res = energy_residual(rec, real, setup.diffusion, setup.jump, setup.config)
    assert np.all(res == 0.0)


def test_energy_residual_requires_fields(modes1):
    setup = make_setup(modes1)
    real = setup.realization(0)
    rec = integrate_path(setup.config, setup.diffusion, setup.jump, real)
    with pytest.raises(ValueError, match="too coarse"):
        energy_residual(rec, real, setup.diffusion, setup.jump, setup.config)


def _det_residual_max(modes, dt):
    diffusion, jump = silent_models(modes)
    cfg = quick_config(k_max=modes.k_max, dt=dt, record_fields=True,
                       initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5))
    setup = SystemSetup(config=cfg, diffusion=diffusion, jump=jump,
                        gamma=frozen_gamma(), master_seed=1)
    real = setup.realization(0, master_dt=dt)
    rec = integrate_path(cfg, diffusion, jump, real)
    res = energy_residual(rec, real, diffusion, jump, cfg)
    return float(np.max(np.abs(res)))


def test_energy_residual_first_order_in_dt(modes1):
    errs = [_det_residual_max(modes1, dt) for dt in (4e-3, 2e-3, 1e-3)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_energy_residual_blind_to_advection(modes1):
    # the advective work term is exactly zero: dropping it from the
    # reconstruction of one and the same record must not move the residual
    diffusion, jump = silent_models(modes1)
    cfg = quick_config(k_max=1, record_fields=True,
                       initial=InitialSpec(kind="random_sphere", amplitude=0.6))
    setup = SystemSetup(config=cfg, diffusion=diffusion, jump=jump,
                        gamma=frozen_gamma(), master_seed=3)
    real = setup.realization(0)
    rec = integrate_path(cfg, diffusion, jump, real)
    res_on = energy_residual(rec, real, diffusion, jump, cfg)
    res_off = energy_residual(rec, real, diffusion, jump,
                              replace(cfg, nonlinearity=False))
    assert np.max(np.abs(res_on - res_off)) < 1e-12


def test_energy_residual_ensemble_mean_small(modes1):
    setup = make_setup(modes1, record_fields=True)
    n = 200
    from switchns.integrator import build_context
    ctx = build_context(setup.config, setup.diffusion, setup.jump)
    finals = np.empty(n)
    for p in range(n):
        real = setup.realization(p)
        rec = integrate_path(setup.config, setup.diffusion, setup.jump, real, context=ctx)
        finals[p] = energy_residual(rec, real, setup.diffusion, setup.jump, setup.config)[-1]
    se = finals.std(ddof=1) / np.sqrt(n)
    assert abs(finals.mean()) <= 4.0 * se


# -- generator and martingale statistic -------------------------------------


def phi_default():
    return BumpTestFunction(support_radius=1.0, weights=np.array([1.0, 0.7]))


def test_generator_constant_phi_keeps_only_chain_term(modes1):
    diffusion, jump = default_models(modes1)
    cfg = quick_config()
    gamma = two_state_generator()
    phi = BumpTestFunction(support_radius=1e6, weights=np.array([1.0, 2.0]))
    rng = np.random.default_rng(30)
    u = SpectralField(modes1, 1e-3 * (rng.standard_normal(26) + 1j * rng.standard_normal(26)))
    rho = modes1.unit_field(0, 1.0)
    # with a gigantic support the bump is flat to ~(x/R)^2; derivatives vanish
    val = generator_apply(phi, rho, u, 1, 0.0, cfg, diffusion, jump, gamma)
    x = h_inner(u, rho)
    chain = sum(gamma.gamma[0, j] * phi.value(x, j + 1) for j in range(2))
    assert abs(val - chain) < 1e-12


def test_generator_deterministic_drift_oracle(modes1):
    # chain frozen, noise off: generator reduces to phi' <drift, rho>
    diffusion, jump = silent_models(modes1)
    cfg = quick_config()
    gamma = frozen_gamma()
    phi = phi_default()
    rng = np.random.default_rng(31)
    u = SpectralField(modes1, 0.3 * (rng.standard_normal(26) + 1j * rng.standard_normal(26)))
    rho = modes1.unit_field(0, 1.0)
    val = generator_apply(phi, rho, u, 1, 0.0, cfg, diffusion, jump, gamma)
    from switchns.nonlinear import B_mollified_apply
    from switchns.spectral import stokes_apply
    drift = (
        -cfg.viscosity * h_inner(stokes_apply(u), rho)
        - h_inner(B_mollified_apply(MollifierTable(cfg.epsilon), u), rho)
    )
    x = h_inner(u, rho)
    expected = phi.d1(x, 1) * drift
    assert abs(val - expected) < 1e-12 * max(1.0, abs(expected))


def test_generator_jump_bracket_taylor_cancellation(modes1):
    # the first-order Taylor term cancels by construction: what remains of
    # the bracket is (1/2) phi'' (g beta)^2 E z^2 up to O(beta^4 / R^4)
    diffusion, jump = default_models(modes1)
    cfg = quick_config()
    gamma = two_state_generator()
    phi = BumpTestFunction(support_radius=50.0, weights=np.array([1.0, 1.0]))
    u = modes1.unit_field(0, 1e-3)
    rho = modes1.unit_field(0, 1.0)
    val_with = generator_apply(phi, rho, u, 1, 0.0, cfg, diffusion, jump, gamma)
    no_jump = replace_jump_rate(jump, 0.0)
    val_without = generator_apply(phi, rho, u, 1, 0.0, cfg, diffusion, no_jump, gamma)
    bracket = val_with - val_without
    x = h_inner(u, rho)
    beta = h_inner(
        SpectralField(modes1, jump.zeta.coefficients + jump.c * u.coefficients), rho
    )
    taylor2 = jump.rate * 0.5 * phi.d2(x, 1) * (jump.g[0] * beta) ** 2
    # remainder is the quartic Taylor term with E z^4 = 3
    phi4_origin = 144.0 / phi.support_radius**4
    taylor4 = jump.rate * (phi4_origin / 24.0) * (jump.g[0] * beta) ** 4 * 3.0
    assert abs(bracket - taylor2) <= 1.5 * abs(taylor4)
    assert abs(bracket - taylor2 - taylor4) < 1e-12


def replace_jump_rate(jump, rate):
    from switchns.noise import JumpModel

    return JumpModel(rate=rate, g=jump.g, zeta=jump.zeta, c=jump.c,
                     mark_mean=jump.mark_mean)


def test_mphi_series_basics(modes1):
    setup = make_setup(modes1, record_fields=True)
    real = setup.realization(0)
    rec = integrate_path(setup.config, setup.diffusion, setup.jump, real)
    m = mphi_series(phi_default(), modes1.unit_field(0, 1.0), rec, setup.config,
                    setup.diffusion, setup.jump, setup.gamma)
    assert m[0] == 0.0
    assert np.all(np.isfinite(m))


def test_mphi_constant_phi_frozen_chain_is_zero(modes1):
    setup = make_setup(modes1, gamma=frozen_gamma(), record_fields=True)
    real = setup.realization(1)
    rec = integrate_path(setup.config, setup.diffusion, setup.jump, real)
    flat = BumpTestFunction(support_radius=1e9, weights=np.array([1.0, 1.0]))
    m = mphi_series(flat, modes1.unit_field(0, 1.0), rec, setup.config,
                    setup.diffusion, setup.jump, frozen_gamma())
    assert np.max(np.abs(m)) < 1e-10


def test_mphi_deterministic_first_order(modes1):
    sups = []
    for dt in (4e-3, 2e-3, 1e-3):
        diffusion, jump = silent_models(modes1)
        cfg = quick_config(dt=dt, record_fields=True,
                           initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5))
        setup = SystemSetup(config=cfg, diffusion=diffusion, jump=jump,
                            gamma=frozen_gamma(), master_seed=7)
        real = setup.realization(0, master_dt=dt)
        rec = integrate_path(cfg, diffusion, jump, real)
        m = mphi_series(phi_default(), modes1.unit_field(0, 1.0), rec, cfg,
                        diffusion, jump, frozen_gamma())
        sups.append(np.max(np.abs(m)))
    orders = np.log2(np.array(sups[:-1]) / np.array(sups[1:]))
    assert np.all(orders >= 0.9)


def test_mphi_pure_chain_martingale(modes1):
    # u frozen at zero: M reduces to the chain martingale and stays unbiased
    diffusion, jump = silent_models(modes1)
    cfg = quick_config(initial=InitialSpec(kind="zero"), record_fields=True)
    setup = SystemSetup(config=cfg, diffusion=diffusion, jump=jump,
                        gamma=two_state_generator(), master_seed=8)
    phi = BumpTestFunction(support_radius=1.0, weights=np.array([0.9, 0.4]))
    rho = modes1.unit_field(0, 1.0)
    n = 400
    finals = np.empty(n)
    for p in range(n):
        real = setup.realization(p)
        rec = integrate_path(cfg, diffusion, jump, real)
        m = mphi_series(phi, rho, rec, cfg, diffusion, jump, setup.gamma)
        finals[p] = m[-1]
    se = finals.std(ddof=1) / np.sqrt(n)
    assert abs(finals.mean()) <= 3.0 * se


def test_martingale_test_deterministic_inconclusive(modes1):
    setup = make_setup(modes1, noisy=False, gamma=frozen_gamma(),
                       initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.4))
    report = martingale_test(setup, phi_default(), modes1.unit_field(0, 1.0),
                             [(0.2, 0.5)], 50, families=("energy",))
    assert all(r.inconclusive for r in report.rows)
    assert report.passed


def test_martingale_test_stochastic_with_control(modes1):
    setup = make_setup(modes1)
    report = martingale_test(setup, phi_default(), modes1.unit_field(0, 1.0),
                             [(0.2, 0.5), (0.5, 1.0)], 400)
    assert report.n_paths == 400
    assert all(np.isfinite(r.z) for r in report.rows)
    assert report.passed
    assert report.control_tripped


# -- chain report ------------------------------------------------------------


def test_chain_report_small_scale():
    report = chain_test_report(two_state_generator(), 1, 10.0, 600, master_seed=99)
    assert report.rate_pass and report.ks_pass and report.occupation_pass
    assert report.simulators_agree


# -- coupled studies ---------------------------------------------------------


def test_continuity_zero_delta_exactly_zero(modes1):
    setup = make_setup(modes1)
    rows = continuity_study(setup, [0.0], 3)
    assert rows[0].value == 0.0


def test_continuity_quadratic_scaling_deterministic(modes1):
    setup = make_setup(modes1, noisy=False, gamma=frozen_gamma(),
                       initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5))
    rows = continuity_study(setup, [0.2, 0.1, 0.05], 1)
    vals = [r.value for r in rows]
    for i in range(len(vals) - 1):
        ratio = vals[i] / vals[i + 1]
        assert 2.0 <= ratio <= 8.0


def test_continuity_monotone_with_noise(modes1):
    setup = make_setup(modes1)
    rows = continuity_study(setup, [0.2, 0.1, 0.05], 60)
    vals = [r.value for r in rows]
    assert vals[0] > vals[1] > vals[2]


def test_eps_study_linear_dynamics_closed_form(modes1):
    # advection off, additive noise, no events: the smoothing width enters
    # only through the mollified initial data, and the difference propagates
    # deterministically by the resolvent product
    diffusion, jump = default_models(modes1)
    from switchns.noise import DiffusionModel, JumpModel
    n = modes1.dimension
    additive = DiffusionModel(spectrum=diffusion.spectrum, s=diffusion.s,
                              a=diffusion.a, b=np.zeros(n))
    no_jump = JumpModel(rate=0.0, g=np.zeros(2), zeta=jump.zeta, c=0.0)
    cfg = quick_config(nonlinearity=False,
                       initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5))
    setup = SystemSetup(config=cfg, diffusion=additive, jump=no_jump,
                        gamma=frozen_gamma(), master_seed=11)
    eps_hi, eps_lo = 0.4, 0.2
    rows = eps_cauchy_study(setup, [eps_hi, eps_lo], 3)
    w0 = abs(mollifier_multiplier(eps_hi, (0, 0, 1)) -
             mollifier_multiplier(eps_lo, (0, 0, 1))) * 0.5
    steps = np.arange(1001, dtype=float)
    w_traj = w0 * (1.0 + 1e-3) ** -steps
    closed = np.sqrt(np.trapezoid(w_traj**2, dx=1e-3))
    assert abs(rows[0].value - closed) < 1e-10


def test_eps_study_huge_width_matches_linear_run(modes1):
    # with the smoothing multiplier ~ 0 the advection term drops out
    diffusion, jump = default_models(modes1)
    cfg_nl = quick_config(epsilon=200.0, record_fields=True,
                          initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5))
    cfg_lin = replace(cfg_nl, nonlinearity=False, epsilon=0.0)
    setup = SystemSetup(config=cfg_nl, diffusion=diffusion, jump=jump,
                        gamma=two_state_generator(), master_seed=12)
    real = setup.realization(0)
    rec_a = integrate_path(cfg_nl, diffusion, jump, real)
    rec_b = integrate_path(cfg_lin, diffusion, jump, real)
    diff = np.sum(np.abs(rec_a.fields - rec_b.fields) ** 2, axis=1)
    assert np.max(diff) < 1e-6


def test_eps_study_decreasing(modes1):
    setup = make_setup(modes1)
    rows = eps_cauchy_study(setup, [0.4, 0.2, 0.1, 0.05], 40)
    vals = [r.value for r in rows]
    assert vals[0] > vals[1] > vals[2]


def test_refinement_full_dimension_zero_distance(modes1):
    setup = make_setup(modes1)
    n = modes1.dimension
    out = refinement_study(setup, "n", [n, n], 3)
    assert out["distances"][0].value == 0.0


def test_refinement_dt_first_order_deterministic(modes1):
    setup = make_setup(modes1, noisy=False, gamma=frozen_gamma(),
                       initial=InitialSpec(kind="random_gaussian", amplitude=0.5))
    out = refinement_study(setup, "dt", [4e-3, 2e-3, 1e-3], 1)
    d = [r.value for r in out["distances"]]
    order = np.log2(d[0] / d[1])
    assert order >= 0.9


def test_refinement_increment_proxy_monotone(modes1):
    setup = make_setup(modes1)
    out = refinement_study(setup, "dt", [2e-3, 1e-3], 60,
                           proxy_deltas=(0.2, 0.1, 0.05, 0.025))
    vals = [r.value for r in out["increment_proxy"]]
    assert all(vals[i] > vals[i + 1] for i in range(len(vals) - 1))
