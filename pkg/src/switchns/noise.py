"""Noise models: trace-class Wiener forcing, compound-Poisson jumps, audit.

The Wiener process carries one real Brownian coordinate per basis entry with
variance q_l per unit time, q summable by construction (default q_l = l^-2 by
entry order), so the covariance operator is trace-class with trace sum(q).

The diffusion coefficient acts entry-diagonally: applied to a noise increment
it scales entry l by s_i * (a_l + b_l * u_l), which is genuinely
multiplicative, switches with the regime i, and has a closed-form
Hilbert-Schmidt norm against the covariance.  The jump coefficient is
G(t, u, i, z) = g_i * z * (zeta + c*u) with standard Gaussian marks z and
finite total intensity, so all absolute moments of the jump integrals are
available in closed form through Gaussian absolute moments.

Both families satisfy the growth and Lipschitz bounds with constants
computable from their parameters; ``hypotheses_audit`` measures the empirical
suprema and compares them against those constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regime import (
    ChainPath,
    GeneratorMatrix,
    build_interval_table,
    simulate_chain_gillespie,
    simulate_chain_prm,
)
from .spectral import ModeSet, SpectralField, h_norm

__all__ = [
    "CovarianceSpectrum",
    "DiffusionModel",
    "JumpModel",
    "NoiseRealization",
    "sample_wiener_increment",
    "sigma_apply",
    "sigma_lq_norm",
    "jump_eval",
    "jump_moments",
    "compensator_mean",
    "hypotheses_audit",
    "make_noise_realization",
    "path_seed_sequence",
]

# absolute moments E|z|^p of a standard Gaussian, p = 1, 2, 3
GAUSS_ABS_MOMENTS = {
    1: float(np.sqrt(2.0 / np.pi)),
    2: 1.0,
    3: float(2.0 * np.sqrt(2.0 / np.pi)),
}


@dataclass(frozen=True)
class CovarianceSpectrum:
    """Eigenvalues of the noise covariance in the spectral basis."""

    q: np.ndarray  # (n,) nonnegative

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or (q.size and q.min() < 0):
            raise ValueError("covariance spectrum must be a nonnegative vector")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def trace(self) -> float:
        return float(self.q.sum())

    @classmethod
    def power_profile(cls, mode_set: ModeSet, exponent: float = 2.0) -> "CovarianceSpectrum":
        idx = np.arange(1, mode_set.dimension + 1, dtype=float)
        return cls(idx**-exponent)


@dataclass(frozen=True)
class DiffusionModel:
    """Entry-diagonal multiplicative diffusion coefficient with regime gains."""

    spectrum: CovarianceSpectrum
    s: np.ndarray  # (m,) regime amplitudes
    a: np.ndarray  # (n,) affine offsets
    b: np.ndarray  # (n,) multiplicative slopes

    def __post_init__(self) -> None:
        for name in ("s", "a", "b"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.a.shape != self.spectrum.q.shape or self.b.shape != self.spectrum.q.shape:
            raise ValueError("a/b profiles must match the covariance spectrum length")

    @property
    def n_states(self) -> int:
        return self.s.shape[0]

    def growth_constant(self, p: int) -> float:
        """Closed-form K with ||sigma(u, i)||^p_LQ <= K (1 + |u|^p)."""
        q = self.spectrum.q
        k2 = 2.0 * float(np.max(self.s**2)) * max(
            float(np.sum(q * self.a**2)),
            float(np.max(q * self.b**2)) if q.size else 0.0,
        )
        if p == 2:
            return k2
        if p == 3:
            return float(np.sqrt(2.0) * k2**1.5)
        raise ValueError("growth constant defined for p in {2, 3}")

    def lipschitz_constant(self) -> float:
        q = self.spectrum.q
        return float(np.max(self.s**2) * np.max(q * self.b**2))


@dataclass(frozen=True)
class JumpModel:
    """Finite-intensity jumps g_i * z * (zeta + c*u), standard Gaussian marks."""

    rate: float  # total intensity
    g: np.ndarray  # (m,) regime gains
    zeta: SpectralField  # unit-H-norm direction
    c: float  # state coupling
    mark_mean: float = 0.0  # E z, zero for the built-in centered marks

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError("jump rate must be >= 0")
        g = np.asarray(self.g, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        if self.rate > 0 and abs(h_norm(self.zeta) - 1.0) > 1e-9:
            raise ValueError("jump direction field must have unit H-norm")

    @property
    def n_states(self) -> int:
        return self.g.shape[0]

    def growth_constant(self, p: int) -> float:
        """Closed-form K with int |G|^p d(intensity) <= K (1 + |u|^p)."""
        if p not in GAUSS_ABS_MOMENTS:
            raise ValueError("growth constant defined for p in {1, 2, 3}")
        gmax = float(np.max(np.abs(self.g))) if self.g.size else 0.0
        return (
            self.rate
            * gmax**p
            * GAUSS_ABS_MOMENTS[p]
            * 2.0 ** (p - 1)
            * max(1.0, abs(self.c) ** p)
        )

    def lipschitz_constant(self) -> float:
        gmax = float(np.max(np.abs(self.g))) if self.g.size else 0.0
        return self.rate * gmax**2 * self.c**2


def sample_wiener_increment(
    spectrum: CovarianceSpectrum, dt: float, rng: np.random.Generator
) -> np.ndarray:
    """One increment: independent N(0, q_l * dt) per entry."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return rng.standard_normal(spectrum.q.shape[0]) * np.sqrt(spectrum.q * dt)


def _check_state(model, i: int) -> None:
    if not 1 <= i <= model.n_states:
        raise ValueError(f"unknown regime state {i}; model has {model.n_states}")


def sigma_apply(
    model: DiffusionModel, t: float, u: SpectralField, i: int, dw: np.ndarray
) -> SpectralField:
    """Diffusion coefficient applied to a noise increment vector."""
    _check_state(model, i)
    coeff = model.s[i - 1] * (model.a + model.b * u.coefficients) * dw
    return SpectralField(u.mode_set, coeff)


def sigma_lq_norm(model: DiffusionModel, t: float, u: SpectralField, i: int) -> float:
    """Hilbert-Schmidt norm of sigma composed with the covariance square root."""
    _check_state(model, i)
    q = model.spectrum.q
    amp2 = np.abs(model.a + model.b * u.coefficients) ** 2
    return float(np.sqrt(model.s[i - 1] ** 2 * np.sum(q * amp2)))


def jump_eval(model: JumpModel, t: float, u: SpectralField, i: int, z: float) -> SpectralField:
    _check_state(model, i)
    return SpectralField(
        u.mode_set,
        model.g[i - 1] * z * (model.zeta.coefficients + model.c * u.coefficients),
    )


def jump_moments(model: JumpModel, t: float, u: SpectralField, i: int, p: int) -> float:
    """int |G(t, u, i, z)|^p over the intensity measure, in closed form."""
    _check_state(model, i)
    if p not in GAUSS_ABS_MOMENTS:
        raise ValueError("p must be 1, 2 or 3")
    direction = SpectralField(
        u.mode_set, model.zeta.coefficients + model.c * u.coefficients
    )
    return (
        model.rate
        * abs(model.g[i - 1]) ** p
        * GAUSS_ABS_MOMENTS[p]
        * h_norm(direction) ** p
    )


def compensator_mean(model: JumpModel, t: float, u: SpectralField, i: int) -> SpectralField:
    """Mean jump drift int G d(intensity); zero for centered marks."""
    _check_state(model, i)
    coeff = (
        model.rate
        * model.g[i - 1]
        * model.mark_mean
        * (model.zeta.coefficients + model.c * u.coefficients)
    )
    return SpectralField(u.mode_set, coeff)


@dataclass
class AuditReport:
    k_sigma_hat: dict  # p -> empirical supremum of the growth ratio
    k_sigma_bound: dict
    l_sigma_hat: float
    l_sigma_bound: float
    k_jump_hat: dict
    k_jump_bound: dict
    l_jump_hat: float
    l_jump_bound: float
    passed: bool
    slack: float

    def as_dict(self) -> dict:
        return {
            "sigma_growth_hat": {str(p): v for p, v in self.k_sigma_hat.items()},
            "sigma_growth_bound": {str(p): v for p, v in self.k_sigma_bound.items()},
            "sigma_lipschitz_hat": self.l_sigma_hat,
            "sigma_lipschitz_bound": self.l_sigma_bound,
            "jump_growth_hat": {str(p): v for p, v in self.k_jump_hat.items()},
            "jump_growth_bound": {str(p): v for p, v in self.k_jump_bound.items()},
            "jump_lipschitz_hat": self.l_jump_hat,
            "jump_lipschitz_bound": self.l_jump_bound,
            "passed": self.passed,
            "slack": self.slack,
        }


def _random_field_in_ball(
    mode_set: ModeSet, radius: float, rng: np.random.Generator
) -> SpectralField:
    g = rng.standard_normal(mode_set.dimension) + 1j * rng.standard_normal(
        mode_set.dimension
    )
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return mode_set.zero_field()
    return SpectralField(mode_set, g / norm * rng.uniform(0.0, radius))


def hypotheses_audit(
    diffusion: DiffusionModel,
    jump: JumpModel,
    mode_set: ModeSet,
    sample_count: int = 10_000,
    radius: float = 10.0,
    seed: int = 0,
    slack: float = 0.05,
) -> AuditReport:
    """Empirical check that the built-in families obey their stated bounds.

    Samples random (u, v, i) with |u| up to the given radius and measures the
    suprema of the four growth/Lipschitz ratios; each must stay within the
    slack factor of its closed-form constant.
    """
    if sample_count < 1_000:
        raise ValueError("sample_count must be >= 1000")
    rng = np.random.default_rng(seed)
    k_sig = {2: 0.0, 3: 0.0}
    k_jmp = {1: 0.0, 2: 0.0, 3: 0.0}
    l_sig = 0.0
    l_jmp = 0.0
    m = diffusion.n_states
    for _ in range(sample_count):
        u = _random_field_in_ball(mode_set, radius, rng)
        v = _random_field_in_ball(mode_set, radius, rng)
        i = int(rng.integers(1, m + 1))
        t = float(rng.uniform(0.0, 1.0))
        hu = h_norm(u)
        s2 = sigma_lq_norm(diffusion, t, u, i) ** 2
        for p in (2, 3):
            k_sig[p] = max(k_sig[p], s2 ** (p / 2) / (1.0 + hu**p))
        for p in (1, 2, 3):
            k_jmp[p] = max(k_jmp[p], jump_moments(jump, t, u, i, p) / (1.0 + hu**p))
        duv = h_norm(u - v)
        if duv > 1e-12:
            ds = (sigma_lq_norm_diff(diffusion, t, u, v, i) / duv) ** 2
            l_sig = max(l_sig, ds)
            dj = jump_lq_diff_sq(jump, t, u, v, i) / duv**2
            l_jmp = max(l_jmp, dj)
    k_sig_bound = {p: diffusion.growth_constant(p) for p in (2, 3)}
    k_jmp_bound = {p: jump.growth_constant(p) for p in (1, 2, 3)}
    l_sig_bound = diffusion.lipschitz_constant()
    l_jmp_bound = jump.lipschitz_constant()
    tol = 1.0 + slack
    passed = (
        all(k_sig[p] <= tol * k_sig_bound[p] + 1e-30 for p in (2, 3))
        and all(k_jmp[p] <= tol * k_jmp_bound[p] + 1e-30 for p in (1, 2, 3))
        and l_sig <= tol * l_sig_bound + 1e-30
        and l_jmp <= tol * l_jmp_bound + 1e-30
    )
    return AuditReport(
        k_sigma_hat=k_sig,
        k_sigma_bound=k_sig_bound,
        l_sigma_hat=l_sig,
        l_sigma_bound=l_sig_bound,
        k_jump_hat=k_jmp,
        k_jump_bound=k_jmp_bound,
        l_jump_hat=l_jmp,
        l_jump_bound=l_jmp_bound,
        passed=passed,
        slack=slack,
    )


def sigma_lq_norm_diff(
    model: DiffusionModel, t: float, u: SpectralField, v: SpectralField, i: int
) -> float:
    """||sigma(u, i) - sigma(v, i)||_LQ for the entry-diagonal family."""
    _check_state(model, i)
    q = model.spectrum.q
    amp2 = np.abs(model.b * (u.coefficients - v.coefficients)) ** 2
    return float(np.sqrt(model.s[i - 1] ** 2 * np.sum(q * amp2)))


def jump_lq_diff_sq(
    model: JumpModel, t: float, u: SpectralField, v: SpectralField, i: int
) -> float:
    """int |G(t,u,i,z) - G(t,v,i,z)|^2 over the intensity measure."""
    _check_state(model, i)
    diff = h_norm(u - v)
    return model.rate * model.g[i - 1] ** 2 * GAUSS_ABS_MOMENTS[2] * (model.c * diff) ** 2


def path_seed_sequence(master_seed: int, path_index: int, *extra) -> np.random.SeedSequence:
    """Stable derivation of per-path/per-stream seeds from the master seed."""
    return np.random.SeedSequence(entropy=(int(master_seed), int(path_index), *map(int, extra)))


@dataclass
class NoiseRealization:
    """Replayable noise streams for one path on a refined time partition.

    The partition contains every master grid point plus every jump and
    switch time, so Wiener increments over any solver cell are exact prefix
    differences and jump-adapted stepping needs no Brownian bridging.
    Identical (seed, grid, horizon, models) reproduce identical streams.
    """

    seed_key: tuple
    master_dt: float
    horizon: float
    times: np.ndarray  # (P,) refined partition, times[0] = 0, times[-1] = T
    master_positions: np.ndarray  # indices of master grid points within times
    wiener_prefix: np.ndarray  # (P, n) prefix sums; increment = diff of rows
    jump_times: np.ndarray
    jump_marks: np.ndarray
    chain: ChainPath
    initial_seed: np.random.SeedSequence  # stream for random initial data

    def increments_between(self, pos_a: int, pos_b: int) -> np.ndarray:
        return self.wiener_prefix[pos_b] - self.wiener_prefix[pos_a]

    def position_of(self, t: float) -> int:
        pos = int(np.searchsorted(self.times, t))
        if pos >= self.times.size or self.times[pos] != t:
            raise ValueError(f"time {t} is not on the realization partition")
        return pos


def make_noise_realization(
    mode_set: ModeSet,
    spectrum: CovarianceSpectrum,
    jump_model: JumpModel,
    gamma: GeneratorMatrix,
    r0: int,
    master_dt: float,
    horizon: float,
    seed_key: tuple,
    chain_method: str = "gillespie",
) -> NoiseRealization:
    """Draw the three independent streams and lay them on one partition.

    Chain, jump and Wiener streams use disjoint children of the seed key, so
    they are independent by construction and each can be replayed alone.
    """
    n_steps = int(round(horizon / master_dt))
    if abs(n_steps * master_dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be an integer multiple of master_dt")
    ss = np.random.SeedSequence(entropy=tuple(int(x) for x in seed_key))
    chain_ss, jump_ss, wiener_ss, init_ss = ss.spawn(4)

    rng_chain = np.random.default_rng(chain_ss)
    if chain_method == "gillespie":
        chain = simulate_chain_gillespie(gamma, r0, horizon, rng_chain)
    elif chain_method == "prm":
        chain = simulate_chain_prm(build_interval_table(gamma), r0, horizon, rng_chain)
    else:
        raise ValueError(f"unknown chain method {chain_method!r}")

    rng_jump = np.random.default_rng(jump_ss)
    n_jumps = int(rng_jump.poisson(jump_model.rate * horizon)) if jump_model.rate > 0 else 0
    jump_times = np.sort(rng_jump.uniform(0.0, horizon, size=n_jumps))
    jump_marks = rng_jump.standard_normal(n_jumps)

    master = np.arange(n_steps + 1) * master_dt
    master[-1] = horizon
    times = np.unique(np.concatenate([master, jump_times, chain.switch_times]))
    master_positions = np.searchsorted(times, master)

    rng_w = np.random.default_rng(wiener_ss)
    n = spectrum.q.shape[0]
    dts = np.diff(times)
    increments = rng_w.standard_normal((dts.size, n)) * np.sqrt(
        spectrum.q[None, :] * dts[:, None]
    )
    prefix = np.zeros((times.size, n))
    np.cumsum(increments, axis=0, out=prefix[1:])

    return NoiseRealization(
        seed_key=tuple(seed_key),
        master_dt=master_dt,
        horizon=horizon,
        times=times,
        master_positions=master_positions,
        wiener_prefix=prefix,
        jump_times=jump_times,
        jump_marks=jump_marks,
        chain=chain,
        initial_seed=init_ss,
    )
