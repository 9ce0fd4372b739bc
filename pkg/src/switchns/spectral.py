"""Truncated divergence-free Fourier representation on the periodic torus.

Velocity fields live on the torus [0, 2*pi)^3 with zero spatial mean.  A field
is stored as one complex coefficient per (wavevector, polarization) entry,
where only one representative of each +/-k pair is kept (the conjugate mode is
implied by reality of the physical field).  The Stokes operator is diagonal in
this basis with eigenvalue |k|^2.

Normalization: a single entry with unit coefficient has H-norm exactly 1,
i.e.  |u|_H^2 = sum_l |c_l|^2  and  ||u||_V^2 = sum_l |k_l|^2 |c_l|^2.
In terms of the physical field this means (u, v)_H = (2(2*pi)^3)^{-1} * the
plain L^2 inner product, which is the convention used everywhere in this
package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModeSet",
    "SpectralField",
    "build_modes",
    "stokes_apply",
    "h_norm",
    "v_norm",
    "h_inner",
    "project",
    "to_physical",
]


def _canonical(k: tuple[int, int, int]) -> bool:
    """A wavevector is canonical iff its first nonzero component is positive."""
    for c in k:
        if c != 0:
            return c > 0
    return False


def _polarization_pair(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two orthonormal real vectors spanning the plane orthogonal to k."""
    khat = k / np.linalg.norm(k)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(khat @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(khat, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(khat, e1)
    e2 /= np.linalg.norm(e2)
    return e1, e2


@dataclass(frozen=True)
class ModeSet:
    """Ordered truncated basis of divergence-free Fourier modes.

    ``wavevectors`` holds the canonical representatives (first nonzero
    component positive), ordered lexicographically by (|k|^2, k).  Entry
    2*w stores polarization 0 of wavevector w, entry 2*w+1 polarization 1,
    so the entry ordering is lexicographic by (|k|^2, k, p) and the
    eigenvalue-ordered projections are unambiguous.
    """

    k_max: int
    wavevectors: np.ndarray  # (n_wave, 3) int
    polarizations: np.ndarray  # (n_wave, 2, 3) float, rows orthonormal, _|_ k

    def __post_init__(self) -> None:
        self.wavevectors.setflags(write=False)
        self.polarizations.setflags(write=False)

    @property
    def n_wave(self) -> int:
        return self.wavevectors.shape[0]

    @property
    def dimension(self) -> int:
        return 2 * self.n_wave

    @property
    def k_squared(self) -> np.ndarray:
        """|k|^2 per wavevector."""
        return np.sum(self.wavevectors**2, axis=1)

    @property
    def k_squared_entries(self) -> np.ndarray:
        """|k|^2 per entry (each wavevector contributes two entries)."""
        return np.repeat(self.k_squared, 2).astype(float)

    def zero_field(self) -> "SpectralField":
        return SpectralField(self, np.zeros(self.dimension, dtype=complex))

    def unit_field(self, entry: int, amplitude: complex = 1.0) -> "SpectralField":
        c = np.zeros(self.dimension, dtype=complex)
        c[entry] = amplitude
        return SpectralField(self, c)


@dataclass
class SpectralField:
    """Divergence-free velocity field: one complex coefficient per entry."""

    mode_set: ModeSet
    coefficients: np.ndarray  # (dimension,) complex

    def __post_init__(self) -> None:
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape != (self.mode_set.dimension,):
            raise ValueError(
                f"coefficient vector has shape {c.shape}, "
                f"expected ({self.mode_set.dimension},)"
            )
        self.coefficients = c

    def copy(self) -> "SpectralField":
        return SpectralField(self.mode_set, self.coefficients.copy())

    def vector_amplitudes(self) -> np.ndarray:
        """Complex 3-vector amplitude per canonical wavevector."""
        ms = self.mode_set
        pairs = self.coefficients.reshape(ms.n_wave, 2)
        return (
            pairs[:, 0, None] * ms.polarizations[:, 0]
            + pairs[:, 1, None] * ms.polarizations[:, 1]
        )

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.mode_set, self.coefficients + other.coefficients)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.mode_set, self.coefficients - other.coefficients)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.mode_set, self.coefficients * scalar)

    __rmul__ = __mul__


def _check_same(u: SpectralField, v: SpectralField) -> None:
    if u.mode_set is not v.mode_set and not np.array_equal(
        u.mode_set.wavevectors, v.mode_set.wavevectors
    ):
        raise ValueError("fields live on different mode sets")


def build_modes(k_max: int) -> ModeSet:
    """All canonical wavevectors with |k|_inf <= k_max, two polarizations each.

    Raises ValueError on k_max < 1 (empty basis).
    """
    if k_max < 1:
        raise ValueError("empty basis: k_max must be >= 1")
    ks = []
    rng = range(-k_max, k_max + 1)
    for kx in rng:
        for ky in rng:
            for kz in rng:
                k = (kx, ky, kz)
                if k != (0, 0, 0) and _canonical(k):
                    ks.append(k)
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2 + k[2] ** 2, k))
    wavevectors = np.array(ks, dtype=int)
    pol = np.empty((len(ks), 2, 3))
    for w, k in enumerate(wavevectors):
        pol[w, 0], pol[w, 1] = _polarization_pair(k.astype(float))
    return ModeSet(k_max=k_max, wavevectors=wavevectors, polarizations=pol)


def stokes_apply(u: SpectralField) -> SpectralField:
    """Stokes operator: multiply each entry by its eigenvalue |k|^2."""
    return SpectralField(
        u.mode_set, u.coefficients * u.mode_set.k_squared_entries
    )


def h_norm(u: SpectralField) -> float:
    return float(np.linalg.norm(u.coefficients))


def v_norm(u: SpectralField) -> float:
    k2 = u.mode_set.k_squared_entries
    return float(np.sqrt(np.sum(k2 * np.abs(u.coefficients) ** 2)))


def h_inner(u: SpectralField, v: SpectralField) -> float:
    """Real H inner product; h_inner(u, u) == h_norm(u)**2."""
    _check_same(u, v)
    return float(np.real(np.vdot(v.coefficients, u.coefficients)))


def project(u: SpectralField, n: int) -> SpectralField:
    """Orthogonal projection onto the span of the first n entries."""
    dim = u.mode_set.dimension
    if not 1 <= n <= dim:
        raise ValueError(f"projection level {n} out of range 1..{dim}")
    c = u.coefficients.copy()
    c[n:] = 0.0
    return SpectralField(u.mode_set, c)


def to_physical(u: SpectralField, grid_points: int) -> np.ndarray:
    """Sample the real velocity field on a uniform grid.

    Returns an array of shape (grid_points, grid_points, grid_points, 3)
    with x varying along the first axis.  Requires grid_points >= 2*k_max+1
    so that quadratic quantities are alias-free on the grid.
    """
    ms = u.mode_set
    if grid_points < 2 * ms.k_max + 1:
        raise ValueError(
            f"aliasing: grid_points={grid_points} < 2*k_max+1={2 * ms.k_max + 1}"
        )
    x = 2.0 * np.pi * np.arange(grid_points) / grid_points
    grid = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)  # (N,N,N,3)
    phases = grid @ ms.wavevectors.T.astype(float)  # (N,N,N,n_wave)
    amps = u.vector_amplitudes()  # (n_wave, 3)
    return 2.0 * np.real(np.exp(1j * phases) @ amps)


def physical_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Grid quadrature of the H inner product from physical samples.

    Matches ``h_inner`` exactly (to rounding) when both fields are sampled
    alias-free, because (u, v)_H = (2(2*pi)^3)^{-1} * integral of u.v.
    """
    n_pts = a.shape[0] * a.shape[1] * a.shape[2]
    return float(np.sum(a * b) / (2.0 * n_pts))
