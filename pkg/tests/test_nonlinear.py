import numpy as np
import pytest

from conftest import random_field
from switchns.nonlinear import (
    B_apply,
    B_mollified_apply,
    MollifierTable,
    b_form,
    mollifier_multiplier,
)
from switchns.spectral import SpectralField, h_inner, h_norm, to_physical, v_norm


def bump_transform_3d_oracle(xi, nodes=90):
    """Independent check: tensor Gauss-Legendre quadrature over the cube."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W2 = np.outer(w, w)
    num = den = 0.0
    for iz in range(nodes):
        r2 = X**2 + Y**2 + x[iz] ** 2
        f = np.where(r2 < 1.0, np.exp(1.0 / np.where(r2 < 1.0, r2 - 1.0, -1.0)), 0.0)
        num += np.sum(W2 * f * np.cos(xi[0] * X + xi[1] * Y + xi[2] * x[iz])) * w[iz]
        den += np.sum(W2 * f) * w[iz]
    return num / den


def test_multiplier_identity_at_zero_width():
    assert mollifier_multiplier(0.0, (1, 0, 0)) == 1.0
    assert mollifier_multiplier(0.0, (5, 5, 5)) == 1.0


def test_multiplier_negative_width_rejected():
    with pytest.raises(ValueError):
        mollifier_multiplier(-0.1, (1, 0, 0))


def test_multiplier_bounded_by_one():
    rng = np.random.default_rng(10)
    for _ in range(1000):
        eps = float(rng.uniform(0.0, 3.0))
        k = rng.integers(-6, 7, size=3)
        if not k.any():
            continue
        assert abs(mollifier_multiplier(eps, k)) <= 1.0 + 1e-12


def test_multiplier_matches_3d_quadrature():
    for eps, k in [(1.0, (1, 0, 0)), (0.5, (2, 0, 0)), (1 / np.sqrt(2), (1, 1, 0))]:
        oracle = bump_transform_3d_oracle(eps * np.asarray(k, dtype=float))
        assert abs(mollifier_multiplier(eps, k) - oracle) < 1e-6


def test_multiplier_radial(modes2):
    # depends on k only through |k|
    a = mollifier_multiplier(0.7, (2, 1, 0))
    b = mollifier_multiplier(0.7, (0, 1, 2))
    c = mollifier_multiplier(0.7, (-1, 2, 0))
    assert a == b == c


def test_table_contraction_and_consistency(modes2):
    rng = np.random.default_rng(11)
    for _ in range(20):
        u = random_field(modes2, rng)
        prev = None
        for eps in (0.4, 0.2, 0.1, 0.05):
            table = MollifierTable(eps)
            assert h_norm(table.apply(u)) <= h_norm(u) + 1e-14
            drift = h_norm(table.apply(u) - u)
            if prev is not None:
                assert drift < prev
            prev = drift


def test_b_vanishes_on_repeated_argument(modes2):
    rng = np.random.default_rng(12)
    for _ in range(100):
        u, v = random_field(modes2, rng), random_field(modes2, rng)
        scale = v_norm(u) * v_norm(v) ** 2
        assert abs(b_form(u, v, v)) <= 1e-12 * scale


def test_b_skew_symmetric(modes2):
    rng = np.random.default_rng(13)
    for _ in range(100):
        u, v, w = (random_field(modes2, rng) for _ in range(3))
        scale = max(abs(b_form(u, v, w)), abs(b_form(u, w, v)), 1e-30)
        assert abs(b_form(u, v, w) + b_form(u, w, v)) <= 1e-12 * scale


def test_b_trilinear(modes1):
    rng = np.random.default_rng(14)
    u, v, w, x = (random_field(modes1, rng) for _ in range(4))
    ref = b_form(u, v, w)
    assert abs(b_form(2.0 * u, v, w) - 2.0 * ref) < 1e-11 * abs(ref)
    assert abs(b_form(u + x, v, w) - ref - b_form(x, v, w)) < 1e-11 * (
        abs(ref) + abs(b_form(x, v, w)) + 1.0
    )


def eval_gradient_physical(f, n_pts):
    """Test oracle: d_i f_j on the grid by plane-wave differentiation."""
    x = 2 * np.pi * np.arange(n_pts) / n_pts
    grid = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
    amps = f.vector_amplitudes()
    kv = f.mode_set.wavevectors.astype(float)
    phases = grid @ kv.T
    out = np.zeros((n_pts, n_pts, n_pts, 3, 3))
    for i in range(3):
        out[..., i, :] = 2 * np.real(np.exp(1j * phases) @ (1j * kv[:, i : i + 1] * amps))
    return out


def test_b_matches_physical_quadrature(modes1):
    # two-mode concrete fields against direct grid quadrature of (u.grad v).w
    u = modes1.unit_field(0, 0.7 + 0.2j)
    u = u + modes1.unit_field(5, -0.3 + 0.9j)
    v = modes1.unit_field(3, 0.1 - 0.5j)
    v = v + modes1.unit_field(8, 1.1 + 0.4j)
    w = modes1.unit_field(2, 0.8 + 0.0j)
    w = w + modes1.unit_field(11, -0.2 - 0.6j)
    n_pts = 8
    up = to_physical(u, n_pts)
    wv = to_physical(w, n_pts)
    grad_v = eval_gradient_physical(v, n_pts)
    integrand = np.einsum("...i,...ij,...j->...", up, grad_v, wv)
    quad = integrand.mean() / 2.0
    assert abs(b_form(u, v, w) - quad) < 1e-10


def test_pairing_consistency(modes2):
    rng = np.random.default_rng(15)
    for _ in range(20):
        u, v, w = (random_field(modes2, rng) for _ in range(3))
        lhs = h_inner(B_apply(u, v), w)
        rhs = b_form(u, v, w)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1.0)


def test_B_on_single_plane_wave_and_zero(modes1):
    u = modes1.unit_field(4, 1.3 - 0.2j)
    assert h_norm(B_apply(u, u)) < 1e-14
    z = modes1.zero_field()
    v = modes1.unit_field(1, 1.0)
    assert h_norm(B_apply(z, v)) == 0.0


def test_mollified_zero_width_bitwise(modes2):
    rng = np.random.default_rng(16)
    u = random_field(modes2, rng)
    raw = B_apply(u, u)
    smoothed = B_mollified_apply(MollifierTable(0.0), u)
    assert np.array_equal(raw.coefficients, smoothed.coefficients)


def test_mollified_energy_neutral(modes2):
    rng = np.random.default_rng(17)
    table = MollifierTable(0.25)
    for _ in range(50):
        u = random_field(modes2, rng)
        val = h_inner(B_mollified_apply(table, u), u)
        assert abs(val) <= 1e-12 * v_norm(u) * h_norm(u) ** 2


def test_mollified_matches_b_form_with_table(modes2):
    rng = np.random.default_rng(18)
    table = MollifierTable(0.3)
    u, w = random_field(modes2, rng), random_field(modes2, rng)
    lhs = h_inner(B_mollified_apply(table, u), w)
    rhs = b_form(u, u, w, table=table)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), 1.0)


def test_smoothed_advection_bound_measured(modes2):
    # |b(k_eps u, v, u)| <= C_eps ||u|| |u| ||v|| with C_eps measured
    rng = np.random.default_rng(19)
    table = MollifierTable(0.2)
    ratios = []
    for _ in range(100):
        u, v = random_field(modes2, rng), random_field(modes2, rng)
        val = abs(b_form(u, v, u, table=table))
        ratios.append(val / (v_norm(u) * h_norm(u) * v_norm(v)))
    c_hat = max(ratios)
    assert np.isfinite(c_hat) and c_hat > 0.0
    for r in ratios:
        assert r <= c_hat * (1.0 + 1e-12)
