"""Advective nonlinearity and its smoothed regularization.

The trilinear form b(u, v, w) = integral of (u . grad v) . w is evaluated
exactly through the convolution sum over stored modes (no quadrature error
for trigonometric polynomials).  The regularization replaces the advecting
velocity by its convolution with the rescaled standard bump; on the torus
this is exactly a radial Fourier multiplier, which preserves the
divergence-free structure and reality of the field.

The bump transform has no closed form; it is computed as a radial integral
    F(r) = 4*pi*C * int_0^1 exp(1/(s^2-1)) s^2 sinc(r s) ds,
normalized so F(0) = 1, by adaptive panel-doubling Gauss-Legendre
quadrature, and cached per integer |k|^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .spectral import ModeSet, SpectralField, _check_same

__all__ = [
    "MollifierTable",
    "mollifier_multiplier",
    "ConvolutionPlan",
    "convolution_plan",
    "b_form",
    "B_apply",
    "B_mollified_apply",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


class QuadratureError(RuntimeError):
    pass


def _panel_quadrature(f, n_panels: int) -> float:
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    half = 0.5 / n_panels
    centers = 0.5 * (edges[:-1] + edges[1:])
    xs = centers[:, None] + half * _GL_NODES[None, :]
    return float(np.sum(f(xs) * _GL_WEIGHTS[None, :]) * half)


def _adaptive_quadrature(f, tol: float) -> float:
    prev = _panel_quadrature(f, 2)
    panels = 4
    while panels <= 4096:
        cur = _panel_quadrature(f, panels)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
        panels *= 2
    raise QuadratureError(f"radial quadrature did not reach tolerance {tol:g}")


def _bump_profile(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(1.0 / (s[inside] ** 2 - 1.0))
    return out


def _sinc(x: np.ndarray) -> np.ndarray:
    # sin(x)/x with the removable singularity filled in
    return np.sinc(x / np.pi)


@lru_cache(maxsize=1)
def _bump_mass(tol: float = 1e-12) -> float:
    return _adaptive_quadrature(lambda s: _bump_profile(s) * s**2, tol)


def mollifier_multiplier(epsilon: float, k, tol: float = 1e-10) -> float:
    """Fourier multiplier of the rescaled bump at wavevector k.

    epsilon = 0 returns exactly 1.  The value depends on k only through |k|
    and satisfies |m| <= 1 with m -> 1 as epsilon*|k| -> 0.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0.0:
        return 1.0
    r = float(epsilon) * float(np.linalg.norm(np.asarray(k, dtype=float)))
    return _radial_transform(r, tol)


def _radial_transform(r: float, tol: float) -> float:
    if r == 0.0:
        return 1.0
    val = _adaptive_quadrature(
        lambda s: _bump_profile(s) * s**2 * _sinc(r * s), tol
    )
    return val / _bump_mass()


@dataclass
class MollifierTable:
    """Cached smoothing multipliers for one value of the width parameter."""

    epsilon: float
    tol: float = 1e-10
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def multiplier_for_k_squared(self, k_squared: int) -> float:
        if self.epsilon == 0.0:
            return 1.0
        key = int(k_squared)
        if key not in self._cache:
            r = self.epsilon * float(np.sqrt(k_squared))
            self._cache[key] = _radial_transform(r, self.tol)
        return self._cache[key]

    def multipliers_full(self, mode_set: ModeSet) -> np.ndarray:
        """Multiplier per full-lattice wavevector index (+k block then -k)."""
        k2 = mode_set.k_squared
        vals = np.array(
            [self.multiplier_for_k_squared(int(s)) for s in k2], dtype=float
        )
        return np.concatenate([vals, vals])

    def apply(self, u: SpectralField) -> SpectralField:
        """Smooth a field: multiply each entry by its radial multiplier."""
        mult = self.multipliers_full(u.mode_set)[: u.mode_set.n_wave]
        return SpectralField(u.mode_set, u.coefficients * np.repeat(mult, 2))


@dataclass(frozen=True)
class ConvolutionPlan:
    """Precomputed pair-interaction table for the quadratic term.

    Full-lattice indexing: index w < n_wave is the canonical wavevector w,
    index n_wave + w its negative.  ``pairs`` lists every (a, b) whose
    wavevectors sum to a canonical target, with ``targets`` the canonical
    index of the sum.
    """

    kvec_full: np.ndarray  # (2*n_wave, 3) float64
    pa: np.ndarray
    pb: np.ndarray
    targets: np.ndarray
    ones: np.ndarray  # unit multiplier vector, reused for the raw term


@lru_cache(maxsize=8)
def _plan_for_kmax(k_max: int) -> ConvolutionPlan:
    from .spectral import build_modes

    ms = build_modes(k_max)
    kv = ms.wavevectors
    nf = ms.n_wave
    kfull = np.concatenate([kv, -kv], axis=0)
    index = {tuple(k): w for w, k in enumerate(kv)}
    pa, pb, tk = [], [], []
    for a in range(2 * nf):
        ka = kfull[a]
        for b in range(2 * nf):
            s = ka + kfull[b]
            t = index.get((s[0], s[1], s[2]))
            if t is not None:
                pa.append(a)
                pb.append(b)
                tk.append(t)
    order = np.lexsort((np.array(pb), np.array(pa), np.array(tk)))
    return ConvolutionPlan(
        kvec_full=kfull.astype(float),
        pa=np.array(pa, dtype=np.int64)[order],
        pb=np.array(pb, dtype=np.int64)[order],
        targets=np.array(tk, dtype=np.int64)[order],
        ones=np.ones(2 * nf),
    )


def convolution_plan(mode_set: ModeSet) -> ConvolutionPlan:
    return _plan_for_kmax(mode_set.k_max)


def b_form(
    u: SpectralField,
    v: SpectralField,
    w: SpectralField,
    table: MollifierTable | None = None,
) -> float:
    """Trilinear advection form, exactly evaluated; smooths u when given a table."""
    _check_same(u, v)
    _check_same(u, w)
    ms = u.mode_set
    plan = convolution_plan(ms)
    mult = table.multipliers_full(ms) if table is not None else plan.ones
    bc = _kernels.conv_general(
        u.coefficients,
        v.coefficients,
        mult,
        ms.polarizations[:, 0],
        ms.polarizations[:, 1],
        plan.kvec_full,
        plan.pa,
        plan.pb,
        plan.targets,
        ms.dimension,
    )
    return float(np.real(np.vdot(w.coefficients, bc)))


def B_apply(u: SpectralField, v: SpectralField) -> SpectralField:
    """Leray-projected advection term; <B(u, v), w> = b(u, v, w) on the span."""
    _check_same(u, v)
    ms = u.mode_set
    plan = convolution_plan(ms)
    bc = _kernels.conv_general(
        u.coefficients,
        v.coefficients,
        plan.ones,
        ms.polarizations[:, 0],
        ms.polarizations[:, 1],
        plan.kvec_full,
        plan.pa,
        plan.pb,
        plan.targets,
        ms.dimension,
    )
    return SpectralField(ms, bc)


def B_mollified_apply(table: MollifierTable, u: SpectralField) -> SpectralField:
    """Quadratic term with the advecting slot smoothed: B(k_eps u, u)."""
    ms = u.mode_set
    plan = convolution_plan(ms)
    bc = _kernels.nonlinear_coefficients(
        u.coefficients,
        table.multipliers_full(ms),
        ms.polarizations[:, 0],
        ms.polarizations[:, 1],
        plan.kvec_full,
        plan.pa,
        plan.pb,
        plan.targets,
        ms.dimension,
    )
    return SpectralField(ms, bc)
