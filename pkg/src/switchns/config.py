"""Configuration file parsing, validation and canonicalization.

The file is YAML with a fixed, documented key set (see README).  Every
downstream invariant is checked here at parse time with errors naming the
offending key.  A parsed configuration can be re-serialized canonically
(defaults filled in, keys sorted) and re-parsed to an equal object, and the
canonical bytes are what the run manifest hashes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .analysis import SystemSetup, BumpTestFunction
from .integrator import ForcingSpec, InitialSpec, SimConfig
from .noise import CovarianceSpectrum, DiffusionModel, JumpModel
from .regime import GeneratorMatrix
from .spectral import build_modes

__all__ = ["RunConfiguration", "parse_config", "parse_config_dict", "ConfigError"]


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "k_max", "viscosity", "epsilon", "dt", "horizon", "galerkin_n",
    "nonlinearity", "sample_stride", "master_seed", "paths",
    "forcing", "initial", "noise", "chain", "studies",
}
_FORCING_KEYS = {"kind", "entry", "amplitude", "frequency"}
_INITIAL_KEYS = {"kind", "entry", "amplitude", "decay"}
_NOISE_KEYS = {
    "q_exponent", "sigma_states", "a_value", "a_decay", "b_value", "b_decay",
    "jump_rate", "jump_gains", "jump_coupling", "zeta_entry",
}
_CHAIN_KEYS = {"generator", "initial_state", "method"}
_STUDY_KEYS = {
    "martingale", "continuity", "eps_study", "refine", "chain_test",
    "audit", "energy", "moments",
}

_DEFAULTS = {
    "k_max": 2,
    "viscosity": 1.0,
    "epsilon": 0.1,
    "dt": 1e-3,
    "horizon": 1.0,
    "galerkin_n": None,
    "nonlinearity": True,
    "sample_stride": 1,
    "master_seed": 12345,
    "paths": 1000,
    "forcing": {"kind": "zero", "entry": 0, "amplitude": 0.0, "frequency": 1.0},
    "initial": {"kind": "random_sphere", "entry": 0, "amplitude": 0.2, "decay": 1.0},
    "noise": {
        "q_exponent": 2.0,
        "sigma_states": [0.25, 0.5],
        "a_value": 1.0,
        "a_decay": 0.0,
        "b_value": 0.2,
        "b_decay": 0.0,
        "jump_rate": 2.0,
        "jump_gains": [0.15, 0.3],
        "jump_coupling": 0.2,
        "zeta_entry": 0,
    },
    "chain": {
        "generator": [[-1.0, 1.0], [2.0, -2.0]],
        "initial_state": 1,
        "method": "gillespie",
    },
    "studies": {
        "martingale": {
            "k_max": 1,
            "paths": 10000,
            "pairs": [[0.2, 0.5], [0.3, 0.8], [0.5, 1.0]],
            "phi_radius": 1.0,
            "phi_weights": [1.0, 0.7],
            "rho_entry": 0,
        },
        "continuity": {"deltas": [0.2, 0.1, 0.05, 0.025], "paths": 1000, "entry": 0},
        "eps_study": {"levels": [0.4, 0.2, 0.1, 0.05], "paths": 1000},
        "refine": {
            "axis": "dt",
            "levels": [0.004, 0.002, 0.001],
            "paths": 1000,
            "proxy_t0": 0.5,
            "proxy_deltas": [0.2, 0.1, 0.05, 0.025],
        },
        "chain_test": {"paths": 10000, "horizon": 10.0},
        "audit": {"samples": 10000, "radius": 10.0},
        "energy": {"paths": 1000, "det_dts": [0.004, 0.002, 0.001]},
        "moments": {"paths": 1000},
    },
}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")


def _merged(defaults, given, where: str):
    if given is None:
        return json.loads(json.dumps(defaults))
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be a mapping")
    out = json.loads(json.dumps(defaults))
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merged(out[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def _positive(value, key: str) -> float:
    v = float(value)
    if v <= 0:
        raise ConfigError(f"{key} must be positive")
    return v


def _nonneg(value, key: str) -> float:
    v = float(value)
    if v < 0:
        raise ConfigError(f"{key} must be >= 0")
    return v


@dataclass
class RunConfiguration:
    """Validated configuration: the base system plus per-study parameters."""

    canonical: dict  # defaults filled in; the hashed object
    setup: SystemSetup
    studies: dict

    @property
    def paths(self) -> int:
        return int(self.canonical["paths"])

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical, sort_keys=True).encode()
        ).hexdigest()

    def canonical_yaml(self) -> str:
        return yaml.safe_dump(self.canonical, sort_keys=True)

    def derived_setup(self, **overrides) -> SystemSetup:
        """Setup with a different scale (e.g. the martingale study's k_max)."""
        allowed = {"k_max", "paths"}
        bad = set(overrides) - allowed
        if bad:
            raise ConfigError(f"unsupported setup override {sorted(bad)[0]!r}")
        raw = json.loads(json.dumps(self.canonical))
        raw.update({k: v for k, v in overrides.items() if k != "paths"})
        raw.pop("studies", None)
        return _build_setup(_merged(_DEFAULTS, raw, "config"))


def parse_config(path: str, seed_override: int | None = None,
                 paths_override: int | None = None) -> RunConfiguration:
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file: {exc}") from exc
    if raw is None:
        raw = {}
    return parse_config_dict(raw, seed_override, paths_override)


def parse_config_dict(raw: dict, seed_override: int | None = None,
                      paths_override: int | None = None) -> RunConfiguration:
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    _check_keys(raw, _TOP_KEYS, "config")
    merged = _merged(_DEFAULTS, raw, "config")
    if seed_override is not None:
        merged["master_seed"] = int(seed_override)
    if paths_override is not None:
        merged["paths"] = int(paths_override)
    _check_keys(merged["forcing"], _FORCING_KEYS, "forcing")
    _check_keys(merged["initial"], _INITIAL_KEYS, "initial")
    _check_keys(merged["noise"], _NOISE_KEYS, "noise")
    _check_keys(merged["chain"], _CHAIN_KEYS, "chain")
    _check_keys(merged["studies"], _STUDY_KEYS, "studies")
    setup = _build_setup(merged)
    return RunConfiguration(canonical=merged, setup=setup, studies=merged["studies"])


def _build_setup(merged: dict) -> SystemSetup:
    k_max = int(merged["k_max"])
    if k_max < 1:
        raise ConfigError("k_max must be >= 1 (empty basis)")
    try:
        forcing = ForcingSpec(
            kind=str(merged["forcing"]["kind"]),
            entry=int(merged["forcing"]["entry"]),
            amplitude=float(merged["forcing"]["amplitude"]),
            frequency=float(merged["forcing"]["frequency"]),
        )
        initial = InitialSpec(
            kind=str(merged["initial"]["kind"]),
            entry=int(merged["initial"]["entry"]),
            amplitude=float(merged["initial"]["amplitude"]),
            decay=float(merged["initial"]["decay"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    galerkin_n = merged["galerkin_n"]
    try:
        config = SimConfig(
            k_max=k_max,
            viscosity=_positive(merged["viscosity"], "viscosity"),
            epsilon=_nonneg(merged["epsilon"], "epsilon"),
            dt=_positive(merged["dt"], "dt"),
            horizon=_positive(merged["horizon"], "horizon"),
            galerkin_n=None if galerkin_n is None else int(galerkin_n),
            nonlinearity=bool(merged["nonlinearity"]),
            sample_stride=int(merged["sample_stride"]),
            forcing=forcing,
            initial=initial,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    ms = build_modes(k_max)
    n = ms.dimension
    noise = merged["noise"]
    idx = np.arange(1, n + 1, dtype=float)
    q = CovarianceSpectrum(idx ** -_nonneg(noise["q_exponent"], "noise.q_exponent"))
    a_prof = float(noise["a_value"]) * idx ** -float(noise["a_decay"])
    b_prof = float(noise["b_value"]) * idx ** -float(noise["b_decay"])
    sigma_states = np.asarray(noise["sigma_states"], dtype=float)
    jump_gains = np.asarray(noise["jump_gains"], dtype=float)
    chain = merged["chain"]
    try:
        gamma = GeneratorMatrix(np.asarray(chain["generator"], dtype=float))
    except ValueError as exc:
        raise ConfigError(f"chain.generator: {exc}") from exc
    if sigma_states.shape[0] != gamma.m:
        raise ConfigError("noise.sigma_states length must equal the chain state count")
    if jump_gains.shape[0] != gamma.m:
        raise ConfigError("noise.jump_gains length must equal the chain state count")
    r0 = int(chain["initial_state"])
    if not 1 <= r0 <= gamma.m:
        raise ConfigError("chain.initial_state out of range")
    method = str(chain["method"])
    if method not in ("gillespie", "prm"):
        raise ConfigError("chain.method must be 'gillespie' or 'prm'")
    zeta_entry = int(noise["zeta_entry"])
    if not 0 <= zeta_entry < n:
        raise ConfigError("noise.zeta_entry out of range for this k_max")
    diffusion = DiffusionModel(spectrum=q, s=sigma_states, a=a_prof, b=b_prof)
    jump = JumpModel(
        rate=_nonneg(noise["jump_rate"], "noise.jump_rate"),
        g=jump_gains,
        zeta=ms.unit_field(zeta_entry, 1.0),
        c=float(noise["jump_coupling"]),
    )
    return SystemSetup(
        config=config,
        diffusion=diffusion,
        jump=jump,
        gamma=gamma,
        r0=r0,
        chain_method=method,
        master_seed=int(merged["master_seed"]),
    )


def phi_from_study(study: dict) -> BumpTestFunction:
    return BumpTestFunction(
        support_radius=float(study["phi_radius"]),
        weights=np.asarray(study["phi_weights"], dtype=float),
    )
