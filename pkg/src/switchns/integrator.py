"""Event-adapted semi-implicit time integration of the truncated system.

One step between events applies the resolvent of the viscous term to an
explicit update: with A diagonal (eigenvalue |k|^2 per entry),

    u+ = (I + nu*dt*A)^{-1} [ u + dt*(-B_eps(u) + f(t) - mean jump drift)
                              + sigma(t, u, i) dW ]

which is unconditionally stable in the linear part.  Jump and switch times
are inserted into the grid exactly (the noise realization's partition already
contains them), preserving left-limit semantics: at an event time the switch
is applied first, then the jump using the pre-jump field, then the continuous
step resumes.  Blow-up is raised, never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .nonlinear import MollifierTable, convolution_plan
from .noise import (
    DiffusionModel,
    JumpModel,
    NoiseRealization,
    compensator_mean,
    jump_eval,
    sigma_apply,
)
from .spectral import ModeSet, SpectralField, build_modes, project

__all__ = [
    "ForcingSpec",
    "InitialSpec",
    "SimConfig",
    "SolverState",
    "PathRecord",
    "BlowUpError",
    "step_between_events",
    "apply_jump",
    "apply_switch",
    "integrate_path",
    "integrate_coupled",
    "CoupledResult",
]

_FORCING_KINDS = {"zero": _kernels.F_NONE, "constant_mode": _kernels.F_CONSTANT,
                  "sinusoidal_mode": _kernels.F_SINUSOID}


class BlowUpError(RuntimeError):
    def __init__(self, time: float, seed_key=None):
        super().__init__(f"blow-up at t={time:.6g} (path {seed_key})")
        self.time = time
        self.seed_key = seed_key


@dataclass(frozen=True)
class ForcingSpec:
    """External body force: zero, constant single-mode, or sinusoidal single-mode."""

    kind: str = "zero"
    entry: int = 0
    amplitude: float = 0.0
    frequency: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _FORCING_KINDS:
            raise ValueError(f"unknown forcing kind {self.kind!r}")

    def field_at(self, t: float, mode_set: ModeSet) -> SpectralField:
        f = mode_set.zero_field()
        if self.kind == "constant_mode":
            f.coefficients[self.entry] = self.amplitude
        elif self.kind == "sinusoidal_mode":
            f.coefficients[self.entry] = self.amplitude * np.sin(
                2.0 * np.pi * self.frequency * t
            )
        return f

    def dual_norm_integrals(self, horizon: float, mode_set: ModeSet) -> tuple[float, float]:
        """(int ||f||_{V'}^2 dt, int ||f||_{V'}^3 dt) over [0, horizon]."""
        if self.kind == "zero" or self.amplitude == 0.0:
            return 0.0, 0.0
        kmag = float(np.sqrt(mode_set.k_squared_entries[self.entry]))
        base = abs(self.amplitude) / kmag
        if self.kind == "constant_mode":
            return base**2 * horizon, base**3 * horizon
        # sinusoidal: quadratic part closed form, cubic by fine quadrature
        w = 2.0 * np.pi * self.frequency
        i2 = horizon / 2.0 - np.sin(2.0 * w * horizon) / (4.0 * w)
        ts = np.linspace(0.0, horizon, 20001)
        i3 = float(np.trapezoid(np.abs(np.sin(w * ts)) ** 3, ts))
        return base**2 * i2, base**3 * i3


@dataclass(frozen=True)
class InitialSpec:
    """Initial velocity: zero, a single deterministic mode, or seeded random.

    ``random_sphere`` draws a uniformly random direction with fixed H-norm,
    so every moment of the initial energy is exact by construction.
    ``random_gaussian`` draws independent complex Gaussians with a power-law
    profile; its third moment is bounded via the Lyapunov inequality.
    """

    kind: str = "zero"
    entry: int = 0
    amplitude: float = 0.0
    decay: float = 1.0  # per-entry profile exponent for the Gaussian draw

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "single_mode", "random_sphere", "random_gaussian"):
            raise ValueError(f"unknown initial condition kind {self.kind!r}")

    def sample(self, mode_set: ModeSet, rng: np.random.Generator | None) -> SpectralField:
        if self.kind == "zero":
            return mode_set.zero_field()
        if self.kind == "single_mode":
            return mode_set.unit_field(self.entry, self.amplitude)
        if rng is None:
            raise ValueError("random initial data requires a generator")
        n = mode_set.dimension
        if self.kind == "random_sphere":
            g = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            return SpectralField(mode_set, self.amplitude * g / np.linalg.norm(g))
        profile = np.arange(1, n + 1, dtype=float) ** -self.decay
        profile /= np.linalg.norm(profile)
        g = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        return SpectralField(mode_set, self.amplitude * profile * g)

    def moment_bounds(self, mode_set: ModeSet) -> tuple[float, float]:
        """(E|u0|^2 exactly, upper bound on E|u0|^3)."""
        if self.kind == "zero":
            return 0.0, 0.0
        a = abs(self.amplitude)
        if self.kind in ("single_mode", "random_sphere"):
            return a**2, a**3
        # Gaussian profile: E|u0|^2 = a^2; E|u0|^3 <= (E|u0|^4)^{3/4}
        n = mode_set.dimension
        profile = np.arange(1, n + 1, dtype=float) ** -self.decay
        v = profile**2 / np.sum(profile**2)  # weights of unit-mean chi squares
        e2 = a**2
        e4 = a**4 * (1.0 + float(np.sum(v**2)))
        return e2, e4**0.75


@dataclass(frozen=True)
class SimConfig:
    """Everything that defines one deterministic solver run (given noise)."""

    k_max: int = 2
    viscosity: float = 1.0
    epsilon: float = 0.1
    dt: float = 1e-3
    horizon: float = 1.0
    galerkin_n: int | None = None  # None = full dimension of the mode set
    nonlinearity: bool = True
    forcing: ForcingSpec = ForcingSpec()
    initial: InitialSpec = InitialSpec()
    sample_stride: int = 1
    record_fields: bool = False

    def __post_init__(self) -> None:
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one step")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")

    def n_active(self, mode_set: ModeSet) -> int:
        n = self.galerkin_n if self.galerkin_n is not None else mode_set.dimension
        if not 1 <= n <= mode_set.dimension:
            raise ValueError(
                f"galerkin_n={n} out of range 1..{mode_set.dimension}"
            )
        return n


@dataclass
class SolverState:
    t: float
    u: SpectralField
    regime: int


@dataclass
class PathRecord:
    """Sampled trajectory of one path.

    Rows are the solver boundaries in order; an event time contributes two
    rows (pre-event, post-event) at the same timestamp, so trapezoid rules
    over the rows respect left limits automatically.  ``partition_idx`` maps
    each row back into the noise realization's partition so stochastic
    integrals can be reconstructed exactly.
    """

    times: np.ndarray
    h_norm_sq: np.ndarray
    v_norm_sq: np.ndarray
    regime: np.ndarray
    n_jumps: np.ndarray
    partition_idx: np.ndarray
    fields: np.ndarray | None
    final_regime: int
    final_coefficients: np.ndarray
    seed_key: tuple
    sample_stride: int = 1

    @property
    def h_norm_cubed(self) -> np.ndarray:
        return self.h_norm_sq**1.5

    def event_rows(self) -> np.ndarray:
        """Indices r such that row r is the post-event duplicate of row r-1."""
        same_t = np.flatnonzero(np.diff(self.times) == 0.0) + 1
        return same_t

    def strided_rows(self) -> np.ndarray:
        """Row indices kept for emission: every stride-th boundary plus events."""
        keep = np.zeros(self.times.size, dtype=bool)
        keep[:: self.sample_stride] = True
        keep[self.event_rows()] = True
        keep[-1] = True
        return np.flatnonzero(keep)


@dataclass
class _Context:
    """Precomputed arrays shared by every step of one configuration."""

    mode_set: ModeSet
    n_active: int
    e1: np.ndarray
    e2: np.ndarray
    k2e: np.ndarray
    mult_adv: np.ndarray
    plan_kvec: np.ndarray
    plan_pa: np.ndarray
    plan_pb: np.ndarray
    plan_tk: np.ndarray
    zeta_proj: np.ndarray
    f_kind: int
    f_entry: int
    f_amp: float
    f_freq: float


def build_context(
    config: SimConfig,
    diffusion: DiffusionModel,
    jump: JumpModel,
    mode_set: ModeSet | None = None,
) -> _Context:
    ms = mode_set if mode_set is not None else build_modes(config.k_max)
    n_active = config.n_active(ms)
    if diffusion.spectrum.q.shape[0] != ms.dimension:
        raise ValueError("covariance spectrum length does not match the mode set")
    plan = convolution_plan(ms)
    table = MollifierTable(config.epsilon)
    zeta = project(
        SpectralField(ms, jump.zeta.coefficients.copy()), n_active
    ).coefficients
    return _Context(
        mode_set=ms,
        n_active=n_active,
        e1=np.ascontiguousarray(ms.polarizations[:, 0]),
        e2=np.ascontiguousarray(ms.polarizations[:, 1]),
        k2e=ms.k_squared_entries,
        mult_adv=table.multipliers_full(ms),
        plan_kvec=plan.kvec_full,
        plan_pa=plan.pa,
        plan_pb=plan.pb,
        plan_tk=plan.targets,
        zeta_proj=zeta,
        f_kind=_FORCING_KINDS[config.forcing.kind],
        f_entry=config.forcing.entry,
        f_amp=config.forcing.amplitude,
        f_freq=config.forcing.frequency,
    )


def step_between_events(
    state: SolverState,
    dt_eff: float,
    dw: np.ndarray,
    config: SimConfig,
    diffusion: DiffusionModel,
    jump: JumpModel,
    context: _Context | None = None,
) -> SolverState:
    """One semi-implicit step on an event-free interval (reference form)."""
    if dt_eff <= 0:
        raise ValueError("dt_eff must be positive")
    ctx = context if context is not None else build_context(config, diffusion, jump)
    ms = ctx.mode_set
    u = state.u
    drift = np.zeros(ms.dimension, dtype=complex)
    if config.nonlinearity:
        drift -= _kernels.nonlinear_coefficients(
            u.coefficients,
            ctx.mult_adv,
            ctx.e1,
            ctx.e2,
            ctx.plan_kvec,
            ctx.plan_pa,
            ctx.plan_pb,
            ctx.plan_tk,
            ctx.n_active,
        )
    drift += config.forcing.field_at(state.t, ms).coefficients
    drift -= compensator_mean(jump, state.t, u, state.regime).coefficients
    sig = sigma_apply(diffusion, state.t, u, state.regime, dw).coefficients
    num = u.coefficients + dt_eff * drift + sig
    new = num / (1.0 + config.viscosity * ctx.k2e * dt_eff)
    new[ctx.n_active :] = 0.0
    if not np.all(np.isfinite(new)):
        raise BlowUpError(state.t + dt_eff)
    return SolverState(state.t + dt_eff, SpectralField(ms, new), state.regime)


def apply_jump(state: SolverState, z: float, jump: JumpModel) -> SolverState:
    """Add the jump increment built from the pre-jump field and regime."""
    g = jump_eval(jump, state.t, state.u, state.regime, z)
    return SolverState(state.t, state.u + g, state.regime)


def apply_switch(state: SolverState, new_regime: int) -> SolverState:
    return SolverState(state.t, state.u.copy(), new_regime)


def _build_schedule(config: SimConfig, realization: NoiseRealization):
    """Boundary positions (into the realization partition) plus event tables."""
    if realization.horizon < config.horizon - 1e-12:
        raise ValueError("realization horizon shorter than the run horizon")
    ratio = config.dt / realization.master_dt
    m_ratio = int(round(ratio))
    if abs(ratio - m_ratio) > 1e-9 or m_ratio < 1:
        raise ValueError("realization grid must divide the solver step")
    n_steps = int(round(config.horizon / config.dt))
    if abs(n_steps * config.dt - config.horizon) > 1e-9 * max(1.0, config.horizon):
        raise ValueError("horizon must be an integer multiple of dt")
    last_master = n_steps * m_ratio
    if last_master >= realization.master_positions.size:
        raise ValueError("realization grid too short for this horizon")
    base = realization.master_positions[0 : last_master + 1 : m_ratio]
    t_end = realization.times[base[-1]]

    switches = [
        (realization.position_of(t), int(s))
        for t, s in zip(
            realization.chain.switch_times, realization.chain.switch_states
        )
        if t <= t_end
    ]
    jumps = [
        (realization.position_of(t), float(z))
        for t, z in zip(realization.jump_times, realization.jump_marks)
        if t <= t_end
    ]
    ev_pos = np.array(sorted({p for p, _ in switches} | {p for p, _ in jumps}), dtype=np.int64)
    all_pos = np.unique(np.concatenate([base, ev_pos])) if ev_pos.size else base.astype(np.int64)

    # per-boundary event lists, switches before jumps at equal timestamps
    by_boundary: dict[int, list] = {}
    for p, s in switches:
        by_boundary.setdefault(p, []).append((0, s, 0.0))
    for p, z in jumps:
        by_boundary.setdefault(p, []).append((1, 0, z))
    n_b = all_pos.size
    ev_ptr = np.zeros(n_b + 1, dtype=np.int64)
    kinds, ivals, zvals = [], [], []
    pos_to_b = {int(p): b for b, p in enumerate(all_pos)}
    for p in sorted(by_boundary):
        evs = sorted(by_boundary[p], key=lambda e: e[0])
        b = pos_to_b[p]
        ev_ptr[b + 1] += len(evs)
        for kind, ival, zval in evs:
            kinds.append(kind)
            ivals.append(ival)
            zvals.append(zval)
    np.cumsum(ev_ptr, out=ev_ptr)
    return (
        all_pos,
        realization.times[all_pos],
        ev_ptr,
        np.array(kinds, dtype=np.int64),
        np.array(ivals, dtype=np.int64),
        np.array(zvals, dtype=float),
    )


def initial_field(
    config: SimConfig,
    realization: NoiseRealization,
    mode_set: ModeSet,
) -> SpectralField:
    """Initial data for a run, projected to the Galerkin level.

    Random kinds draw from the realization's dedicated stream, so coupled
    runs sharing a realization regenerate the same base initial field.
    """
    rng = (
        np.random.default_rng(realization.initial_seed)
        if config.initial.kind in ("random_sphere", "random_gaussian")
        else None
    )
    u0 = config.initial.sample(mode_set, rng)
    return project(u0, config.n_active(mode_set))


def integrate_path(
    config: SimConfig,
    diffusion: DiffusionModel,
    jump: JumpModel,
    realization: NoiseRealization,
    context: _Context | None = None,
    u0_override: SpectralField | None = None,
) -> PathRecord:
    """Event-adapted sweep over one path; deterministic given its inputs."""
    ctx = context if context is not None else build_context(config, diffusion, jump)
    ms = ctx.mode_set
    all_pos, bnd_t, ev_ptr, ev_kind, ev_ival, ev_zval = _build_schedule(
        config, realization
    )
    seg_dw = (
        realization.wiener_prefix[all_pos[1:]] - realization.wiener_prefix[all_pos[:-1]]
    )
    u0 = u0_override if u0_override is not None else initial_field(config, realization, ms)
    u = u0.coefficients.astype(complex).copy()
    u[ctx.n_active :] = 0.0

    n_boundaries = all_pos.size
    n_event_boundaries = int(np.count_nonzero(np.diff(ev_ptr)))
    r_max = n_boundaries + n_event_boundaries
    rec_t = np.empty(r_max)
    rec_h2 = np.empty(r_max)
    rec_v2 = np.empty(r_max)
    rec_regime = np.empty(r_max, dtype=np.int64)
    rec_njumps = np.empty(r_max, dtype=np.int64)
    rec_pidx = np.empty(r_max, dtype=np.int64)
    rec_fields = np.empty(
        (r_max if config.record_fields else 0, ms.dimension), dtype=complex
    )

    status, blow_t, n_rows, final_regime, _ = _kernels.run_path(
        u,
        realization.chain.initial_state,
        ctx.n_active,
        ctx.e1,
        ctx.e2,
        ctx.k2e,
        config.nonlinearity,
        ctx.mult_adv,
        ctx.plan_kvec,
        ctx.plan_pa,
        ctx.plan_pb,
        ctx.plan_tk,
        config.viscosity,
        ctx.f_kind,
        ctx.f_entry,
        ctx.f_amp,
        ctx.f_freq,
        diffusion.s,
        diffusion.a,
        diffusion.b,
        jump.g,
        ctx.zeta_proj,
        jump.c,
        jump.rate,
        jump.mark_mean,
        bnd_t,
        all_pos,
        seg_dw,
        ev_ptr,
        ev_kind,
        ev_ival,
        ev_zval,
        rec_t,
        rec_h2,
        rec_v2,
        rec_regime,
        rec_njumps,
        rec_pidx,
        rec_fields,
        config.record_fields,
    )
    if status != 0:
        raise BlowUpError(blow_t, realization.seed_key)
    return PathRecord(
        times=rec_t[:n_rows],
        h_norm_sq=rec_h2[:n_rows],
        v_norm_sq=rec_v2[:n_rows],
        regime=rec_regime[:n_rows],
        n_jumps=rec_njumps[:n_rows],
        partition_idx=rec_pidx[:n_rows],
        fields=rec_fields[:n_rows] if config.record_fields else None,
        final_regime=final_regime,
        final_coefficients=u.copy(),
        seed_key=realization.seed_key,
        sample_stride=config.sample_stride,
    )


_COUPLING_WHITELIST = {"initial", "epsilon", "galerkin_n", "dt"}


@dataclass
class CoupledResult:
    record_a: PathRecord
    record_b: PathRecord
    times: np.ndarray  # common post-event sample times
    diff_h_sq: np.ndarray  # |uA - uB|_H^2 on the common grid


def _post_rows(record: PathRecord) -> np.ndarray:
    """Last row index per partition position (post-event states)."""
    last = {}
    for r, p in enumerate(record.partition_idx):
        last[int(p)] = r
    return np.array([last[p] for p in sorted(last)], dtype=int)


def integrate_coupled(
    config_a: SimConfig,
    config_b: SimConfig,
    diffusion: DiffusionModel,
    jump: JumpModel,
    realization: NoiseRealization,
    u0_a: SpectralField | None = None,
    u0_b: SpectralField | None = None,
) -> CoupledResult:
    """Two runs on one noise realization, differing only in whitelisted fields.

    Returns both records plus the squared H-norm of the difference sampled on
    the common (coarser) grid, post-event values at event times.
    """
    diffs = {
        name
        for name in config_a.__dataclass_fields__
        if getattr(config_a, name) != getattr(config_b, name)
        and name != "record_fields"
    }
    illegal = diffs - _COUPLING_WHITELIST
    if illegal:
        raise ValueError(f"coupled configs may not differ in {sorted(illegal)}")
    ca = replace(config_a, record_fields=True)
    cb = replace(config_b, record_fields=True)
    rec_a = integrate_path(ca, diffusion, jump, realization, u0_override=u0_a)
    rec_b = integrate_path(cb, diffusion, jump, realization, u0_override=u0_b)

    rows_a = _post_rows(rec_a)
    rows_b = _post_rows(rec_b)
    pos_a = rec_a.partition_idx[rows_a]
    pos_b = rec_b.partition_idx[rows_b]
    common, ia, ib = np.intersect1d(pos_a, pos_b, return_indices=True)
    fa = rec_a.fields[rows_a[ia]]
    fb = rec_b.fields[rows_b[ib]]
    diff = np.sum(np.abs(fa - fb) ** 2, axis=1)
    return CoupledResult(
        record_a=rec_a,
        record_b=rec_b,
        times=realization.times[common],
        diff_h_sq=diff,
    )
