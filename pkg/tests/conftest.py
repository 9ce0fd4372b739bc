import numpy as np
import pytest

from switchns.integrator import InitialSpec, SimConfig
from switchns.noise import CovarianceSpectrum, DiffusionModel, JumpModel
from switchns.regime import GeneratorMatrix
from switchns.spectral import SpectralField, build_modes


@pytest.fixture(scope="session")
def modes1():
    return build_modes(1)


@pytest.fixture(scope="session")
def modes2():
    return build_modes(2)


def random_field(mode_set, rng, scale=1.0):
    n = mode_set.dimension
    c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return SpectralField(mode_set, scale * c)


def two_state_generator():
    return GeneratorMatrix(np.array([[-1.0, 1.0], [2.0, -2.0]]))


def default_models(mode_set):
    """The shipped default noise family on the given mode set."""
    n = mode_set.dimension
    spectrum = CovarianceSpectrum.power_profile(mode_set, 2.0)
    diffusion = DiffusionModel(
        spectrum=spectrum,
        s=np.array([0.25, 0.5]),
        a=np.ones(n),
        b=np.full(n, 0.2),
    )
    jump = JumpModel(
        rate=2.0,
        g=np.array([0.15, 0.3]),
        zeta=mode_set.unit_field(0, 1.0),
        c=0.2,
    )
    return diffusion, jump


def silent_models(mode_set):
    """Noise families that are identically zero (deterministic dynamics)."""
    n = mode_set.dimension
    spectrum = CovarianceSpectrum.power_profile(mode_set, 2.0)
    diffusion = DiffusionModel(
        spectrum=spectrum, s=np.zeros(2), a=np.ones(n), b=np.zeros(n)
    )
    jump = JumpModel(
        rate=0.0, g=np.zeros(2), zeta=mode_set.unit_field(0, 1.0), c=0.0
    )
    return diffusion, jump


def quick_config(**kw):
    defaults = dict(
        k_max=1,
        dt=1e-3,
        horizon=1.0,
        epsilon=0.1,
        initial=InitialSpec(kind="random_sphere", amplitude=0.2),
    )
    defaults.update(kw)
    return SimConfig(**defaults)
