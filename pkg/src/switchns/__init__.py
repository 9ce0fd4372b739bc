"""Spectral Galerkin simulator and verification harness for 3D stochastic
Navier-Stokes dynamics with Markov-switching noise on the periodic torus."""

__version__ = "0.1.0"

from .spectral import (  # noqa: F401
    ModeSet,
    SpectralField,
    build_modes,
    h_inner,
    h_norm,
    project,
    stokes_apply,
    to_physical,
    v_norm,
)
