import numpy as np
import pytest

from conftest import default_models, random_field, two_state_generator
from switchns.noise import (
    GAUSS_ABS_MOMENTS,
    CovarianceSpectrum,
    DiffusionModel,
    JumpModel,
    compensator_mean,
    hypotheses_audit,
    jump_eval,
    jump_moments,
    make_noise_realization,
    sample_wiener_increment,
    sigma_apply,
    sigma_lq_norm,
)
from switchns.spectral import SpectralField, h_norm


def test_spectrum_validation_and_trace(modes1):
    spec = CovarianceSpectrum.power_profile(modes1, 2.0)
    n = modes1.dimension
    assert spec.q[0] == 1.0 and abs(spec.q[-1] - n**-2.0) < 1e-15
    assert abs(spec.trace - np.sum(np.arange(1, n + 1, dtype=float) ** -2)) < 1e-14
    with pytest.raises(ValueError):
        CovarianceSpectrum(np.array([1.0, -0.1]))


def test_wiener_increment_zero_spectrum(modes1):
    spec = CovarianceSpectrum(np.zeros(modes1.dimension))
    dw = sample_wiener_increment(spec, 0.01, np.random.default_rng(0))
    assert np.all(dw == 0.0)


def test_wiener_increment_variance(modes1):
    spec = CovarianceSpectrum.power_profile(modes1, 2.0)
    rng = np.random.default_rng(1)
    n_samples, dt = 100_000, 0.01
    draws = np.array([sample_wiener_increment(spec, dt, rng)[0] for _ in range(n_samples)])
    var = draws.var(ddof=1)
    se = np.sqrt(2.0 / (n_samples - 1)) * dt  # SE of the variance of N(0, dt)
    assert abs(var - dt) <= 3.0 * se


def test_wiener_additivity(modes1):
    # summed increments over [0, t] have variance q * t
    spec = CovarianceSpectrum.power_profile(modes1, 2.0)
    rng = np.random.default_rng(2)
    t, steps, n_samples = 0.5, 10, 20_000
    totals = np.empty(n_samples)
    for i in range(n_samples):
        totals[i] = sum(
            sample_wiener_increment(spec, t / steps, rng)[0] for _ in range(steps)
        )
    var = totals.var(ddof=1)
    se = np.sqrt(2.0 / (n_samples - 1)) * t
    assert abs(var - t) <= 3.0 * se


def test_sigma_apply_pure_amplitude(modes1):
    diffusion, _ = default_models(modes1)
    n = modes1.dimension
    model = DiffusionModel(
        spectrum=diffusion.spectrum, s=np.array([0.7, 1.3]), a=np.ones(n), b=np.zeros(n)
    )
    dw = np.random.default_rng(3).standard_normal(n)
    u = random_field(modes1, np.random.default_rng(4))
    out = sigma_apply(model, 0.0, u, 2, dw)
    assert np.allclose(out.coefficients, 1.3 * dw)
    zero_u = modes1.zero_field()
    out0 = sigma_apply(model, 0.0, zero_u, 1, dw)
    assert np.allclose(out0.coefficients, 0.7 * dw)


def test_sigma_apply_linear_in_increment(modes1):
    diffusion, _ = default_models(modes1)
    rng = np.random.default_rng(5)
    u = random_field(modes1, rng)
    d1 = rng.standard_normal(modes1.dimension)
    d2 = rng.standard_normal(modes1.dimension)
    a = sigma_apply(diffusion, 0.0, u, 1, d1 + 2.0 * d2)
    b = sigma_apply(diffusion, 0.0, u, 1, d1) + 2.0 * sigma_apply(diffusion, 0.0, u, 1, d2)
    assert np.max(np.abs(a.coefficients - b.coefficients)) < 1e-12


def test_sigma_apply_unknown_state(modes1):
    diffusion, _ = default_models(modes1)
    with pytest.raises(ValueError, match="unknown regime"):
        sigma_apply(diffusion, 0.0, modes1.zero_field(), 3, np.zeros(modes1.dimension))


def test_lq_norm_closed_form_and_oracle(modes1):
    diffusion, _ = default_models(modes1)
    n = modes1.dimension
    rng = np.random.default_rng(6)
    # b == 0: value is |s_i| * sqrt(sum q a^2)
    model = DiffusionModel(
        spectrum=diffusion.spectrum, s=np.array([0.7, 1.3]), a=np.ones(n), b=np.zeros(n)
    )
    u = random_field(modes1, rng)
    expect = 1.3 * np.sqrt(np.sum(model.spectrum.q))
    assert abs(sigma_lq_norm(model, 0.0, u, 2) - expect) < 1e-12
    # a == 0 and u == 0 gives zero
    model0 = DiffusionModel(
        spectrum=diffusion.spectrum, s=np.array([0.7, 1.3]), a=np.zeros(n), b=np.ones(n)
    )
    assert sigma_lq_norm(model0, 0.0, modes1.zero_field(), 1) == 0.0
    # Frobenius oracle: sum of squared images of the scaled basis
    frob = 0.0
    for entry in range(n):
        basis = np.zeros(n)
        basis[entry] = np.sqrt(diffusion.spectrum.q[entry])
        img = sigma_apply(diffusion, 0.0, u, 1, basis)
        frob += h_norm(img) ** 2
    assert abs(sigma_lq_norm(diffusion, 0.0, u, 1) ** 2 - frob) < 1e-12 * max(frob, 1.0)


def test_jump_eval_cases(modes1):
    _, jump = default_models(modes1)
    u = random_field(modes1, np.random.default_rng(7))
    assert h_norm(jump_eval(jump, 0.0, u, 1, 0.0)) == 0.0
    nocouple = JumpModel(rate=2.0, g=jump.g, zeta=jump.zeta, c=0.0)
    out = jump_eval(nocouple, 0.0, u, 2, 1.7)
    assert abs(h_norm(out) - abs(0.3 * 1.7)) < 1e-12
    # additivity in u at fixed mark
    v = random_field(modes1, np.random.default_rng(8))
    lhs = jump_eval(jump, 0.0, u + v, 1, 0.9)
    rhs = jump_eval(jump, 0.0, u, 1, 0.9) + jump_eval(jump, 0.0, v, 1, 0.9)
    zeta_extra = 0.15 * 0.9 * jump.zeta.coefficients  # zeta counted once per call
    assert np.max(np.abs(lhs.coefficients + zeta_extra - rhs.coefficients)) < 1e-12


def test_jump_moments_closed_forms(modes1):
    _, jump = default_models(modes1)
    u = modes1.zero_field()
    nocouple = JumpModel(rate=2.0, g=jump.g, zeta=jump.zeta, c=0.0)
    assert abs(jump_moments(nocouple, 0.0, u, 2, 2) - 2.0 * 0.3**2) < 1e-14
    expect3 = 2.0 * 0.3**3 * 2.0 * np.sqrt(2.0 / np.pi)
    assert abs(jump_moments(nocouple, 0.0, u, 2, 3) - expect3) < 1e-14
    assert abs(GAUSS_ABS_MOMENTS[1] - np.sqrt(2 / np.pi)) < 1e-15


def test_compensator_mean_zero_for_centered_marks(modes1):
    _, jump = default_models(modes1)
    rng = np.random.default_rng(9)
    for i in (1, 2):
        u = random_field(modes1, rng)
        assert h_norm(compensator_mean(jump, 0.3, u, i)) == 0.0


def test_gaussian_moment_montecarlo_oracle():
    rng = np.random.default_rng(10)
    z = rng.standard_normal(200_000)
    for p in (1, 2, 3):
        emp = np.mean(np.abs(z) ** p)
        se = np.std(np.abs(z) ** p, ddof=1) / np.sqrt(z.size)
        assert abs(emp - GAUSS_ABS_MOMENTS[p]) <= 4.0 * se


def test_audit_passes_for_builtin_families(modes1):
    diffusion, jump = default_models(modes1)
    report = hypotheses_audit(diffusion, jump, modes1, sample_count=2000, seed=1)
    assert report.passed
    for p in (2, 3):
        assert report.k_sigma_hat[p] <= 1.05 * report.k_sigma_bound[p]
    for p in (1, 2, 3):
        assert report.k_jump_hat[p] <= 1.05 * report.k_jump_bound[p]


def test_audit_zero_models_and_uncoupled_jump(modes1):
    n = modes1.dimension
    spec = CovarianceSpectrum.power_profile(modes1)
    diffusion = DiffusionModel(spectrum=spec, s=np.zeros(2), a=np.zeros(n), b=np.zeros(n))
    jump = JumpModel(rate=2.0, g=np.array([0.1, 0.2]), zeta=modes1.unit_field(0, 1.0), c=0.0)
    report = hypotheses_audit(diffusion, jump, modes1, sample_count=1000, seed=2)
    assert report.l_sigma_hat == 0.0
    assert report.l_jump_hat == 0.0  # G independent of u when c = 0
    assert report.passed


def test_audit_sample_count_guard(modes1):
    diffusion, jump = default_models(modes1)
    with pytest.raises(ValueError):
        hypotheses_audit(diffusion, jump, modes1, sample_count=10)


def _quick_realization(modes, seed, master_dt=0.1, horizon=1.0, rate=2.0):
    spec = CovarianceSpectrum.power_profile(modes, 2.0)
    jump = JumpModel(
        rate=rate, g=np.array([0.15, 0.3]), zeta=modes.unit_field(0, 1.0), c=0.2
    )
    return make_noise_realization(
        modes, spec, jump, two_state_generator(), 1, master_dt, horizon, seed
    )


def test_realization_replay_determinism(modes1):
    a = _quick_realization(modes1, (42, 0))
    b = _quick_realization(modes1, (42, 0))
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.wiener_prefix, b.wiener_prefix)
    assert np.array_equal(a.jump_marks, b.jump_marks)
    assert np.array_equal(a.chain.switch_times, b.chain.switch_times)
    c = _quick_realization(modes1, (42, 1))
    assert not np.array_equal(a.wiener_prefix, c.wiener_prefix)


def test_realization_partition_contains_events(modes1):
    real = _quick_realization(modes1, (7, 3), rate=5.0)
    for t in real.jump_times:
        assert real.times[real.position_of(t)] == t
    for t in real.chain.switch_times:
        assert real.times[real.position_of(t)] == t
    assert real.times[0] == 0.0 and real.times[-1] == 1.0
    # increments over merged cells have the right variance structure
    dts = np.diff(real.times)
    assert np.all(dts > 0)


def test_jump_counts_poisson(modes1):
    lam, horizon, n_paths = 3.0, 1.0, 10_000
    counts = np.empty(n_paths)
    for p in range(n_paths):
        real = _quick_realization(modes1, (11, p), rate=lam)
        counts[p] = real.jump_times.size
    mean, var = counts.mean(), counts.var(ddof=1)
    se_mean = counts.std(ddof=1) / np.sqrt(n_paths)
    assert abs(mean - lam * horizon) <= 3.0 * se_mean
    se_var = np.sqrt(2.0 / (n_paths - 1)) * counts.var(ddof=1)  # rough gaussian SE
    assert abs(var - lam * horizon) <= 4.0 * se_var


def test_stream_independence(modes1):
    # empirical cross-correlations of the three streams vanish
    n_paths = 10_000
    w_end = np.empty(n_paths)
    n_jumps = np.empty(n_paths)
    n_switch = np.empty(n_paths)
    for p in range(n_paths):
        real = _quick_realization(modes1, (13, p))
        w_end[p] = real.wiener_prefix[-1, 0]
        n_jumps[p] = real.jump_times.size
        n_switch[p] = real.chain.switch_times.size
    for a, b in ((w_end, n_jumps), (w_end, n_switch), (n_jumps, n_switch)):
        r = np.corrcoef(a, b)[0, 1]
        assert abs(r) <= 3.0 / np.sqrt(n_paths)
