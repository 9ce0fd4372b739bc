"""Verification harness: moment bounds, energy balance, martingale tests,
continuity and convergence studies.

The statistical gates throughout are 3-standard-error acceptance bands at
the path counts fixed by the study; time integrals along sampled paths use
the trapezoid rule on the solver grid (duplicate rows at event times make
left limits explicit, and contribute zero width).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .integrator import (
    BlowUpError,
    PathRecord,
    SimConfig,
    build_context,
    initial_field,
    integrate_path,
)
from .nonlinear import MollifierTable
from .noise import (
    DiffusionModel,
    JumpModel,
    NoiseRealization,
    make_noise_realization,
)
from .regime import GeneratorMatrix
from .spectral import ModeSet, SpectralField, build_modes, h_inner, project

__all__ = [
    "SystemSetup",
    "BumpTestFunction",
    "GronwallBounds",
    "gronwall_bounds",
    "MomentReport",
    "estimate_moments",
    "run_moment_ensemble",
    "energy_residual",
    "generator_apply",
    "mphi_series",
    "MartingaleReport",
    "martingale_test",
    "continuity_study",
    "eps_cauchy_study",
    "refinement_study",
]

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(21)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()  # expectation against N(0, 1)


@dataclass(frozen=True)
class SystemSetup:
    """One complete system: solver config, noise models, switching chain."""

    config: SimConfig
    diffusion: DiffusionModel
    jump: JumpModel
    gamma: GeneratorMatrix
    r0: int = 1
    chain_method: str = "gillespie"
    master_seed: int = 12345

    def mode_set(self) -> ModeSet:
        return build_modes(self.config.k_max)

    def realization(
        self,
        path_index: int,
        master_dt: float | None = None,
        horizon: float | None = None,
    ) -> NoiseRealization:
        return make_noise_realization(
            self.mode_set(),
            self.diffusion.spectrum,
            self.jump,
            self.gamma,
            self.r0,
            master_dt if master_dt is not None else self.config.dt,
            horizon if horizon is not None else self.config.horizon,
            (self.master_seed, path_index),
            chain_method=self.chain_method,
        )

    def growth_constant(self) -> float:
        """Single K serving both the diffusion and jump growth bounds."""
        return max(
            self.diffusion.growth_constant(2),
            self.diffusion.growth_constant(3),
            self.jump.growth_constant(1),
            self.jump.growth_constant(2),
            self.jump.growth_constant(3),
        )

    def bounds(self) -> "GronwallBounds":
        ms = self.mode_set()
        e2, e3 = self.config.initial.moment_bounds(ms)
        f2, f3 = self.config.forcing.dual_norm_integrals(self.config.horizon, ms)
        return gronwall_bounds(
            nu=self.config.viscosity,
            horizon=self.config.horizon,
            growth_k=self.growth_constant(),
            n_states=self.gamma.m,
            e_u0_sq=e2,
            e_u0_cubed=e3,
            int_f_sq=f2,
            int_f_cubed=f3,
        )


# ---------------------------------------------------------------------------
# a priori bounds


@dataclass
class GronwallBounds:
    """Explicit constants bounding the second and third moment functionals."""

    c_t: float
    c1: float  # bounds E|u(t)|^2 + nu E int ||u||^2 for every t
    c2: float  # bounds E sup |u|^2 + nu E int ||u||^2
    c3: float  # bounds E sup |u|^3 + 2 nu E int |u| ||u||^2
    m3: float  # intermediate sup-free third moment bound

    def as_dict(self) -> dict:
        return {"c_t": self.c_t, "c1": self.c1, "c2": self.c2, "c3": self.c3}


def gronwall_bounds(
    nu: float,
    horizon: float,
    growth_k: float,
    n_states: int,
    e_u0_sq: float,
    e_u0_cubed: float | None = None,
    int_f_sq: float = 0.0,
    int_f_cubed: float | None = None,
) -> GronwallBounds:
    """Moment bounds assembled from the growth constant by Gronwall's lemma.

    The base constant carries the factor 2KT(1 + m^2) with m the chain state
    count; the supremum bounds inherit the fixed Davis-inequality split
    constants (the 50K term in the quadratic bound, the (13 + 8 sqrt(T))K
    rate in the cubic one).
    """
    k = growth_k
    t = horizon
    m = n_states
    c_t = e_u0_sq + int_f_sq / nu + 2.0 * k * t * (1.0 + m**2)
    c1 = c_t * (1.0 + 2.0 * k * t * np.exp(2.0 * k * t))
    c2 = 2.0 * (e_u0_sq + int_f_sq / nu + 50.0 * k * c1 / nu + 50.0 * k * t)
    if e_u0_cubed is None or int_f_cubed is None:
        return GronwallBounds(c_t=c_t, c1=c1, c2=c2, c3=float("nan"), m3=float("nan"))
    int_u2 = c1 / nu  # E int |u|^2 <= E int ||u||^2 <= C1/nu  (|k|^2 >= 1)
    int_u1 = np.sqrt(t) * np.sqrt(c1 / nu)
    base3 = e_u0_cubed + int_f_cubed / nu**2 + k * t + 6.0 * k * int_u2 + 6.0 * k * int_u1
    m3 = base3 * np.exp(13.0 * k * t)
    rhs_b = (
        e_u0_cubed
        + int_f_cubed / nu**2
        + (13.0 + 8.0 * np.sqrt(t)) * k * t * m3
        + 3.0 * k * (1.0 + m) * int_u2
        + 6.0 * k * int_u1
        + (8.0 * np.sqrt(t) + 1.0) * k * t
    )
    return GronwallBounds(c_t=c_t, c1=c1, c2=c2, c3=2.0 * rhs_b, m3=m3)


# ---------------------------------------------------------------------------
# Monte Carlo moment estimation


def _trapz(values: np.ndarray, times: np.ndarray) -> float:
    return float(np.trapezoid(values, times))


@dataclass
class MomentReport:
    n_paths: int
    blow_ups: int
    e_sup_h2: float
    se_sup_h2: float
    nu_int_v2: float
    se_nu_int_v2: float
    e_final_h2: float
    e_sup_h3: float
    se_sup_h3: float
    int_h_v2: float
    se_int_h_v2: float
    bounds: GronwallBounds
    pass_c1: bool
    pass_c2: bool
    pass_c3: bool

    @property
    def passed(self) -> bool:
        return self.blow_ups == 0 and self.pass_c1 and self.pass_c2 and self.pass_c3

    def as_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "blow_ups": self.blow_ups,
            "e_sup_h2": self.e_sup_h2,
            "se_sup_h2": self.se_sup_h2,
            "nu_int_v2": self.nu_int_v2,
            "se_nu_int_v2": self.se_nu_int_v2,
            "e_final_h2": self.e_final_h2,
            "e_sup_h3": self.e_sup_h3,
            "se_sup_h3": self.se_sup_h3,
            "int_h_v2": self.int_h_v2,
            "se_int_h_v2": self.se_int_h_v2,
            "bounds": self.bounds.as_dict(),
            "pass_c1": self.pass_c1,
            "pass_c2": self.pass_c2,
            "pass_c3": self.pass_c3,
            "passed": self.passed,
        }


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return m, se


def estimate_moments(
    records, nu: float, bounds: GronwallBounds, blow_ups: int = 0, min_paths: int = 100
) -> MomentReport:
    """Monte Carlo means of the supremum and time-integral energy functionals.

    Each bound passes when estimate + 3 SE <= bound; any blow-up fails the
    report outright.
    """
    sup2, intv, fin2, sup3, inthv = [], [], [], [], []
    for rec in records:
        sup2.append(float(rec.h_norm_sq.max()))
        intv.append(_trapz(rec.v_norm_sq, rec.times))
        fin2.append(float(rec.h_norm_sq[-1]))
        sup3.append(float(rec.h_norm_sq.max()) ** 1.5)
        inthv.append(_trapz(np.sqrt(rec.h_norm_sq) * rec.v_norm_sq, rec.times))
    n = len(sup2)
    if n < min_paths:
        raise ValueError(f"need at least {min_paths} paths, got {n}")
    sup2 = np.array(sup2)
    intv = np.array(intv)
    e_sup2, se_sup2 = _mean_se(sup2)
    e_intv, se_intv = _mean_se(nu * intv)
    e_fin2, _ = _mean_se(np.array(fin2))
    e_sup3, se_sup3 = _mean_se(np.array(sup3))
    e_ihv, se_ihv = _mean_se(np.array(inthv))
    comb2, se_comb2 = _mean_se(sup2 + nu * intv)
    fin_comb, se_fin = _mean_se(np.array(fin2) + nu * intv)
    pass_c1 = fin_comb + 3.0 * se_fin <= bounds.c1
    pass_c2 = comb2 + 3.0 * se_comb2 <= bounds.c2
    sup3_arr = np.array(sup3) + 2.0 * nu * np.array(inthv)
    comb3, se_comb3 = _mean_se(sup3_arr)
    pass_c3 = (not np.isfinite(bounds.c3)) or (comb3 + 3.0 * se_comb3 <= bounds.c3)
    return MomentReport(
        n_paths=n,
        blow_ups=blow_ups,
        e_sup_h2=e_sup2,
        se_sup_h2=se_sup2,
        nu_int_v2=e_intv,
        se_nu_int_v2=se_intv,
        e_final_h2=e_fin2,
        e_sup_h3=e_sup3,
        se_sup_h3=se_sup3,
        int_h_v2=e_ihv,
        se_int_h_v2=se_ihv,
        bounds=bounds,
        pass_c1=bool(pass_c1),
        pass_c2=bool(pass_c2),
        pass_c3=bool(pass_c3 and blow_ups == 0),
    )


def run_moment_ensemble(setup: SystemSetup, n_paths: int) -> MomentReport:
    ctx = build_context(setup.config, setup.diffusion, setup.jump)
    records = []
    blow_ups = 0
    for p in range(n_paths):
        real = setup.realization(p)
        try:
            records.append(
                integrate_path(setup.config, setup.diffusion, setup.jump, real, context=ctx)
            )
        except BlowUpError:
            blow_ups += 1
    return estimate_moments(
        records, setup.config.viscosity, setup.bounds(), blow_ups=blow_ups
    )


# ---------------------------------------------------------------------------
# discrete energy balance


def energy_residual(
    record: PathRecord,
    realization: NoiseRealization,
    diffusion: DiffusionModel,
    jump: JumpModel,
    config: SimConfig,
) -> np.ndarray:
    """Defect of the pathwise energy balance along the recorded trajectory.

    |u(t)|^2 is matched against its initial value plus the viscous/advective/
    forcing work (trapezoid), the quadratic noise correction (closed form per
    row), the reconstructed Wiener work (exact increments from the
    realization, left-point rule), the realized jump contributions and the
    mean jump drift.  The advective term contributes zero exactly; it is
    still evaluated so the cancellation is part of what is being checked.
    """
    if record.fields is None:
        raise ValueError("record too coarse: full coefficient rows are required")
    ctx = build_context(config, diffusion, jump)
    fields = record.fields
    times = record.times
    h2 = record.h_norm_sq
    regimes = record.regime
    n_rows = times.size

    # drift work 2 <-nu A u - B_eps(u) + f, u>
    if config.nonlinearity:
        bpair = _kernels.nonlinear_energy_series(
            fields,
            ctx.n_active,
            ctx.mult_adv,
            ctx.e1,
            ctx.e2,
            ctx.plan_kvec,
            ctx.plan_pa,
            ctx.plan_pb,
            ctx.plan_tk,
        )
    else:
        bpair = np.zeros(n_rows)
    fpair = np.zeros(n_rows)
    if ctx.f_kind == _kernels.F_CONSTANT:
        fpair = ctx.f_amp * fields[:, ctx.f_entry].real
    elif ctx.f_kind == _kernels.F_SINUSOID:
        fpair = (
            ctx.f_amp
            * np.sin(2.0 * np.pi * ctx.f_freq * times)
            * fields[:, ctx.f_entry].real
        )
    g_drift = 2.0 * (-config.viscosity * record.v_norm_sq - bpair + fpair)
    drift_cum = _cumtrapz(g_drift, times)

    # quadratic noise correction: ||sigma||_LQ^2 rows
    q = diffusion.spectrum.q
    s_row = diffusion.s[regimes - 1]
    amp2 = np.abs(diffusion.a[None, :] + diffusion.b[None, :] * fields) ** 2
    lq = s_row**2 * np.sum(q[None, :] * amp2, axis=1)
    lq_cum = _cumtrapz(lq, times)

    # Wiener work, reconstructed with the exact increments the solver consumed
    pidx = record.partition_idx
    dw = realization.wiener_prefix[pidx[1:]] - realization.wiener_prefix[pidx[:-1]]
    sig = (
        s_row[:-1, None]
        * (diffusion.a[None, :] + diffusion.b[None, :] * fields[:-1])
        * dw
    )
    inc = 2.0 * np.sum(
        fields[:-1].real * sig.real + fields[:-1].imag * sig.imag, axis=1
    )
    wiener_cum = np.concatenate([[0.0], np.cumsum(inc)])

    # realized jumps: energy change across duplicate rows (switches add zero)
    jump_inc = np.zeros(n_rows)
    dup = record.event_rows()
    jump_inc[dup] = h2[dup] - h2[dup - 1]
    jump_cum = np.cumsum(jump_inc)

    # mean jump drift (zero for centered marks)
    comp = np.zeros(n_rows)
    if jump.mark_mean != 0.0:
        gz = jump.rate * jump.g[regimes - 1] * jump.mark_mean
        direction = ctx.zeta_proj[None, :] + jump.c * fields
        comp = 2.0 * gz * np.sum(
            fields.real * direction.real + fields.imag * direction.imag, axis=1
        )
    comp_cum = _cumtrapz(comp, times)

    return (h2 - h2[0]) - drift_cum - lq_cum - wiener_cum - jump_cum + comp_cum


def _cumtrapz(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


# ---------------------------------------------------------------------------
# generator and the canonical martingale statistic


@dataclass(frozen=True)
class BumpTestFunction:
    """Bounded C^3 bump with compact support and per-state weights.

    phi(x, i) = w_i * (1 - (x/R)^2)^4 on |x| < R, zero outside.
    """

    support_radius: float
    weights: np.ndarray  # (m,)

    def __post_init__(self) -> None:
        if self.support_radius <= 0:
            raise ValueError("support radius must be positive")
        w = np.asarray(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def value(self, x: float, i: int) -> float:
        return float(_kernels._bump_phi(x, self.support_radius, self.weights[i - 1]))

    def d1(self, x: float, i: int) -> float:
        return float(_kernels._bump_dphi(x, self.support_radius, self.weights[i - 1]))

    def d2(self, x: float, i: int) -> float:
        return float(_kernels._bump_ddphi(x, self.support_radius, self.weights[i - 1]))


def generator_apply(
    phi: BumpTestFunction,
    rho: SpectralField,
    u: SpectralField,
    regime: int,
    t: float,
    config: SimConfig,
    diffusion: DiffusionModel,
    jump: JumpModel,
    gamma: GeneratorMatrix,
) -> float:
    """Generator of the switching diffusion acting on phi(<u, rho>, i).

    Drift, switching, quadratic-noise and jump-bracket terms; the mark
    expectation in the bracket uses the fixed Gauss-Hermite rule.
    """
    from .nonlinear import B_mollified_apply
    from .spectral import stokes_apply

    ms = u.mode_set
    n_active = config.n_active(ms)
    x = h_inner(u, rho)
    d1 = phi.d1(x, regime)
    d2 = phi.d2(x, regime)

    drift = -config.viscosity * h_inner(stokes_apply(u), rho)
    if config.nonlinearity:
        b = B_mollified_apply(MollifierTable(config.epsilon), u)
        b = project(b, n_active)
        drift -= h_inner(b, rho)
    drift += h_inner(config.forcing.field_at(t, ms), rho)

    chain = sum(
        gamma.gamma[regime - 1, j] * phi.value(x, j + 1) for j in range(gamma.m)
    )

    m_l = diffusion.s[regime - 1] * (diffusion.a + diffusion.b * u.coefficients)
    pairing = m_l.real * rho.coefficients.real + m_l.imag * rho.coefficients.imag
    quad = 0.5 * d2 * float(np.sum(diffusion.spectrum.q * pairing**2))

    direction = SpectralField(ms, jump.zeta.coefficients + jump.c * u.coefficients)
    beta = h_inner(project(direction, n_active), rho)
    g_i = jump.g[regime - 1]
    steps = g_i * _GH_NODES * beta
    phi_x = phi.value(x, regime)
    bracket = sum(
        w * (phi.value(x + s, regime) - phi_x - d1 * s)
        for w, s in zip(_GH_WEIGHTS, steps)
    )
    return d1 * drift + chain + quad + jump.rate * float(bracket)


def mphi_series(
    phi: BumpTestFunction,
    rho: SpectralField,
    record: PathRecord,
    config: SimConfig,
    diffusion: DiffusionModel,
    jump: JumpModel,
    gamma: GeneratorMatrix,
    with_control: bool = False,
    context=None,
):
    """Canonical martingale statistic along one recorded path.

    M(t) = phi(<u(t), rho>, i(t)) - phi(<u(0), rho>, i(0))
           - int_0^t (generator phi)(u(s), i(s)) ds     (trapezoid).

    With ``with_control`` also returns the same series assembled with the
    viscous drift term doubled inside the generator only, which must destroy
    the martingale property (negative control).
    """
    if record.fields is None:
        raise ValueError("record too coarse: full coefficient rows are required")
    ctx = context if context is not None else build_context(config, diffusion, jump)
    lf, xs, phv, visc = _kernels.generator_series(
        record.fields,
        record.regime,
        record.times,
        rho.coefficients.astype(complex),
        phi.support_radius,
        phi.weights,
        gamma.gamma,
        config.viscosity,
        ctx.n_active,
        config.nonlinearity,
        ctx.mult_adv,
        ctx.e1,
        ctx.e2,
        ctx.plan_kvec,
        ctx.plan_pa,
        ctx.plan_pb,
        ctx.plan_tk,
        ctx.f_kind,
        ctx.f_entry,
        ctx.f_amp,
        ctx.f_freq,
        diffusion.spectrum.q,
        diffusion.s,
        diffusion.a,
        diffusion.b,
        jump.g,
        ctx.zeta_proj,
        jump.c,
        jump.rate,
        _GH_NODES,
        _GH_WEIGHTS,
    )
    m_series = phv - phv[0] - _cumtrapz(lf, record.times)
    if not with_control:
        return m_series
    m_control = phv - phv[0] - _cumtrapz(lf + visc, record.times)
    return m_series, m_control


def _row_at(times: np.ndarray, t: float) -> int:
    """Last row with timestamp <= t (post-event state at event times)."""
    r = int(np.searchsorted(times, t, side="right")) - 1
    if r < 0:
        raise ValueError(f"time {t} precedes the record")
    return r


@dataclass
class MartingaleRow:
    s: float
    t: float
    family: str
    statistic: float
    standard_error: float
    z: float
    inconclusive: bool

    @property
    def passed(self) -> bool:
        return self.inconclusive or abs(self.z) <= 3.0

    def as_dict(self) -> dict:
        return {
            "s": self.s,
            "t": self.t,
            "family": self.family,
            "statistic": self.statistic,
            "standard_error": self.standard_error,
            "z": self.z,
            "inconclusive": self.inconclusive,
            "passed": self.passed,
        }


@dataclass
class MartingaleReport:
    rows: list
    control_rows: list
    n_paths: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def control_tripped(self) -> bool:
        return any(
            (not r.inconclusive) and abs(r.z) > 3.0 for r in self.control_rows
        )

    def as_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "rows": [r.as_dict() for r in self.rows],
            "control_rows": [r.as_dict() for r in self.control_rows],
            "passed": self.passed,
            "control_tripped": self.control_tripped,
        }


def _psi_product(family: str, record: PathRecord, s: float, cap: float = 1.0) -> float:
    """Bounded functionals of the path up to time s, evaluated at {s/2, s}."""
    out = 1.0
    for sj in (0.5 * s, s):
        r = _row_at(record.times, sj)
        if family == "energy":
            out *= min(record.h_norm_sq[r], cap) / cap
        elif family == "regime":
            out *= 1.0 if record.regime[r] == 1 else 0.0
        else:
            raise ValueError(f"unknown psi family {family!r}")
    return out


def martingale_test(
    setup: SystemSetup,
    phi: BumpTestFunction,
    rho: SpectralField,
    pairs: list,
    n_paths: int,
    families: tuple = ("energy", "regime"),
) -> MartingaleReport:
    """Conditioned-increment test of the martingale property.

    For each window (s, t) and each bounded functional family, the mean over
    paths of (M(t) - M(s)) * prod_j psi_j(path up to s) must vanish within
    3 standard errors.  The same data assembled against the corrupted
    generator (viscosity doubled in the generator only) forms the negative
    control.
    """
    cfg = replace(setup.config, record_fields=True)
    ctx = build_context(cfg, setup.diffusion, setup.jump)
    k = len(pairs)
    vals = {f: np.empty((n_paths, k)) for f in families}
    ctrl = {f: np.empty((n_paths, k)) for f in families}
    for p in range(n_paths):
        real = setup.realization(p)
        rec = integrate_path(cfg, setup.diffusion, setup.jump, real, context=ctx)
        m_ser, m_ctl = mphi_series(
            phi, rho, rec, cfg, setup.diffusion, setup.jump, setup.gamma,
            with_control=True, context=ctx,
        )
        for j, (s, t) in enumerate(pairs):
            rs = _row_at(rec.times, s)
            rt = _row_at(rec.times, t)
            dm = m_ser[rt] - m_ser[rs]
            dc = m_ctl[rt] - m_ctl[rs]
            for f in families:
                psi = _psi_product(f, rec, s)
                vals[f][p, j] = dm * psi
                ctrl[f][p, j] = dc * psi
    rows, control_rows = [], []
    for f in families:
        for j, (s, t) in enumerate(pairs):
            for target, sink in ((vals, rows), (ctrl, control_rows)):
                mean, se = _mean_se(target[f][:, j])
                inconclusive = se <= 1e-14 * max(1.0, abs(mean))
                z = mean / se if not inconclusive else 0.0
                sink.append(
                    MartingaleRow(
                        s=s,
                        t=t,
                        family=f,
                        statistic=mean,
                        standard_error=se,
                        z=z,
                        inconclusive=bool(inconclusive),
                    )
                )
    return MartingaleReport(rows=rows, control_rows=control_rows, n_paths=n_paths)


# ---------------------------------------------------------------------------
# chain verification


@dataclass
class ChainTestReport:
    estimate_gillespie: np.ndarray
    estimate_prm: np.ndarray
    se_gillespie: np.ndarray
    se_prm: np.ndarray
    occupation_state1: float
    occupation_se: float
    occupation_target: float
    ks_p_gillespie: float
    ks_p_prm: float
    chi2_p_gillespie: float
    chi2_p_prm: float
    rate_pass: bool
    ks_pass: bool
    chi2_pass: bool
    occupation_pass: bool
    simulators_agree: bool

    @property
    def passed(self) -> bool:
        return (
            self.rate_pass
            and self.ks_pass
            and self.chi2_pass
            and self.occupation_pass
            and self.simulators_agree
        )

    def as_dict(self) -> dict:
        return {
            "estimate_gillespie": [list(map(float, r)) for r in self.estimate_gillespie],
            "estimate_prm": [list(map(float, r)) for r in self.estimate_prm],
            "se_gillespie": [list(map(float, r)) for r in self.se_gillespie],
            "se_prm": [list(map(float, r)) for r in self.se_prm],
            "occupation_state1": self.occupation_state1,
            "occupation_se": self.occupation_se,
            "occupation_target": self.occupation_target,
            "ks_p_gillespie": self.ks_p_gillespie,
            "ks_p_prm": self.ks_p_prm,
            "chi2_p_gillespie": self.chi2_p_gillespie,
            "chi2_p_prm": self.chi2_p_prm,
            "rate_pass": self.rate_pass,
            "ks_pass": self.ks_pass,
            "chi2_pass": self.chi2_pass,
            "occupation_pass": self.occupation_pass,
            "simulators_agree": self.simulators_agree,
            "passed": self.passed,
        }


def _holding_times(paths: list, state: int) -> np.ndarray:
    """First completed holding interval in the given state, one per path.

    Later holdings on a fixed window are length-biased (long holdings are
    more likely right-censored), which a KS test at this sample size would
    detect; the first completed holding per path is exponential up to the
    negligible truncation P(H > T).
    """
    out = []
    for p in paths:
        for t0, t1, s in p.segments():
            if s == state:
                if t1 < p.horizon:
                    out.append(t1 - t0)
                break
    return np.array(out)


def _transition_chi2(paths: list, gamma: GeneratorMatrix) -> float:
    """Chi-square p-value of one-step target proportions against the rates.

    States with a single reachable target contribute no degrees of freedom;
    with none left the statistic is vacuous and p = 1.
    """
    from scipy import stats

    g = gamma.gamma
    m = gamma.m
    counts = np.zeros((m, m))
    for p in paths:
        prev = p.initial_state
        for s in p.switch_states:
            counts[prev - 1, s - 1] += 1
            prev = int(s)
    stat = 0.0
    dof = 0
    for i in range(m):
        rate = -g[i, i]
        total = counts[i].sum()
        if rate <= 0 or total == 0:
            continue
        targets = [j for j in range(m) if j != i and g[i, j] > 0]
        if len(targets) < 2:
            continue
        expected = np.array([g[i, j] / rate * total for j in targets])
        observed = np.array([counts[i, j] for j in targets])
        stat += float(np.sum((observed - expected) ** 2 / expected))
        dof += len(targets) - 1
    if dof == 0:
        return 1.0
    return float(stats.chi2.sf(stat, dof))


def chain_test_report(
    gamma: GeneratorMatrix,
    r0: int,
    horizon: float,
    n_paths: int,
    master_seed: int,
) -> ChainTestReport:
    """Both simulators against the law: rates, holding times, proportions.

    Rate estimates must sit within 3 standard errors of the generator for
    both simulators (and of each other); state-1 holding times must pass a
    KS test against their exponential law at p > 0.01; one-step proportions
    must pass the chi-square test; state-1 occupation must match the
    stationary distribution within 3 standard errors.  For the occupation
    test the initial state is drawn from the stationary law (the fixed-start
    transient over a finite window is a detectable systematic offset);
    everything else runs from the configured initial state.
    """
    from scipy import stats

    from .regime import (
        build_interval_table,
        empirical_generator,
        simulate_chain_gillespie,
        simulate_chain_prm,
    )

    # stationary distribution: pi Gamma = 0, sum pi = 1
    m_states = gamma.m
    a_mat = np.vstack([gamma.gamma.T, np.ones(m_states)])
    b_vec = np.concatenate([np.zeros(m_states), [1.0]])
    pi = np.linalg.lstsq(a_mat, b_vec, rcond=None)[0]

    table = build_interval_table(gamma)
    paths_g, paths_p = [], []
    occ1 = np.empty(n_paths)
    for p in range(n_paths):
        ss = np.random.SeedSequence(entropy=(master_seed, p, 101))
        child_g, child_p, child_s = ss.spawn(3)
        rg = np.random.default_rng(child_g)
        rp = np.random.default_rng(child_p)
        paths_g.append(simulate_chain_gillespie(gamma, r0, horizon, rg))
        paths_p.append(simulate_chain_prm(table, r0, horizon, rp))
        rs = np.random.default_rng(child_s)
        r0_st = int(rs.choice(m_states, p=pi)) + 1
        stat_path = simulate_chain_gillespie(gamma, r0_st, horizon, rs)
        occ1[p] = sum(
            t1 - t0 for t0, t1, s in stat_path.segments() if s == 1
        ) / horizon
    est_g, se_g, _ = empirical_generator(paths_g, m=gamma.m)
    est_p, se_p, _ = empirical_generator(paths_p, m=gamma.m)
    m = gamma.m
    off = ~np.eye(m, dtype=bool)
    rate_pass = bool(
        np.all(np.abs(est_g - gamma.gamma)[off] <= 3.0 * se_g[off])
        and np.all(np.abs(est_p - gamma.gamma)[off] <= 3.0 * se_p[off])
    )
    agree = bool(
        np.all(
            np.abs(est_g - est_p)[off]
            <= 3.0 * np.sqrt(se_g[off] ** 2 + se_p[off] ** 2)
        )
    )
    rate1 = -gamma.gamma[0, 0]
    ks_g = ks_p = 1.0
    if rate1 > 0:
        hg = _holding_times(paths_g, 1)
        hp = _holding_times(paths_p, 1)
        ks_g = float(stats.kstest(hg, "expon", args=(0.0, 1.0 / rate1)).pvalue)
        ks_p = float(stats.kstest(hp, "expon", args=(0.0, 1.0 / rate1)).pvalue)
    chi_g = _transition_chi2(paths_g, gamma)
    chi_p = _transition_chi2(paths_p, gamma)
    occ_mean, occ_se = _mean_se(occ1)
    occupation_pass = bool(abs(occ_mean - pi[0]) <= 3.0 * occ_se)
    return ChainTestReport(
        estimate_gillespie=est_g,
        estimate_prm=est_p,
        se_gillespie=se_g,
        se_prm=se_p,
        occupation_state1=occ_mean,
        occupation_se=occ_se,
        occupation_target=float(pi[0]),
        ks_p_gillespie=ks_g,
        ks_p_prm=ks_p,
        chi2_p_gillespie=chi_g,
        chi2_p_prm=chi_p,
        rate_pass=rate_pass,
        ks_pass=bool(ks_g > 0.01 and ks_p > 0.01),
        chi2_pass=bool(chi_g > 0.01 and chi_p > 0.01),
        occupation_pass=occupation_pass,
        simulators_agree=agree,
    )


# ---------------------------------------------------------------------------
# coupled-path studies


def _aligned_diff_sq(rec_a: PathRecord, rec_b: PathRecord) -> np.ndarray:
    """|uA - uB|_H^2 per row for records sharing one schedule."""
    if rec_a.fields is None or rec_b.fields is None:
        raise ValueError("coupled study requires recorded fields")
    if not np.array_equal(rec_a.times, rec_b.times):
        raise ValueError("records do not share a schedule")
    return np.sum(np.abs(rec_a.fields - rec_b.fields) ** 2, axis=1)


@dataclass
class StudyRow:
    level: float
    value: float
    standard_error: float

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "value": self.value,
            "standard_error": self.standard_error,
        }


def continuity_study(
    setup: SystemSetup,
    deltas: list,
    n_paths: int,
    perturb_entry: int = 0,
) -> list:
    """Initial-data continuity under coupled noise with the viscous weight.

    For each perturbation size delta, both paths consume the same noise; the
    reported functional is the mean of sup_t exp(-rho(t)) |w(t)|^2 where
    rho(t) = (4 nu)^{-1} int_0^t ||u(s)||^2 ds accumulates along the first
    path and w is the difference process.
    """
    cfg = replace(setup.config, record_fields=True)
    ctx = build_context(cfg, setup.diffusion, setup.jump)
    ms = ctx.mode_set
    rows = []
    inv4nu = 1.0 / (4.0 * cfg.viscosity)
    for delta in deltas:
        per_path = np.empty(n_paths)
        for p in range(n_paths):
            real = setup.realization(p)
            u0 = initial_field(cfg, real, ms)
            u0b = SpectralField(ms, u0.coefficients.copy())
            u0b.coefficients[perturb_entry] += delta
            rec_a = integrate_path(
                cfg, setup.diffusion, setup.jump, real, context=ctx, u0_override=u0
            )
            rec_b = integrate_path(
                cfg, setup.diffusion, setup.jump, real, context=ctx, u0_override=u0b
            )
            w_sq = _aligned_diff_sq(rec_a, rec_b)
            rho_t = inv4nu * _cumtrapz(rec_a.v_norm_sq, rec_a.times)
            per_path[p] = float(np.max(np.exp(-rho_t) * w_sq))
        mean, se = _mean_se(per_path)
        rows.append(StudyRow(level=float(delta), value=mean, standard_error=se))
    return rows


def eps_cauchy_study(
    setup: SystemSetup,
    eps_levels: list,
    n_paths: int,
) -> list:
    """Distances between runs at consecutive smoothing widths, coupled noise.

    Initial data is smoothed at each level's width.  Reports
    D = sqrt(mean int_0^T |u_eps - u_eps'|^2 dt) per consecutive pair.
    """
    rows = []
    base_cfg = replace(setup.config, record_fields=True)
    ms = build_modes(base_cfg.k_max)
    n_active = base_cfg.n_active(ms)
    tables = [MollifierTable(e) for e in eps_levels]
    configs = [replace(base_cfg, epsilon=e) for e in eps_levels]
    contexts = [build_context(c, setup.diffusion, setup.jump, ms) for c in configs]
    n_lv = len(eps_levels)
    acc = np.zeros((n_lv - 1, n_paths))
    for p in range(n_paths):
        real = setup.realization(p)
        u0 = initial_field(base_cfg, real, ms)
        recs = []
        for lv in range(n_lv):
            u0_eps = project(tables[lv].apply(u0), n_active)
            recs.append(
                integrate_path(
                    configs[lv],
                    setup.diffusion,
                    setup.jump,
                    real,
                    context=contexts[lv],
                    u0_override=u0_eps,
                )
            )
        for lv in range(n_lv - 1):
            w_sq = _aligned_diff_sq(recs[lv], recs[lv + 1])
            acc[lv, p] = _trapz(w_sq, recs[lv].times)
    for lv in range(n_lv - 1):
        mean, se = _mean_se(acc[lv])
        rows.append(
            StudyRow(level=float(eps_levels[lv]), value=float(np.sqrt(mean)),
                     standard_error=se)
        )
    return rows


def _coupled_distance_sq(rec_a: PathRecord, rec_b: PathRecord) -> float:
    """int |uA - uB|^2 dt across records on nested schedules (post states)."""
    if np.array_equal(rec_a.times, rec_b.times):
        return _trapz(_aligned_diff_sq(rec_a, rec_b), rec_a.times)
    pos_a = {}
    for r, q in enumerate(rec_a.partition_idx):
        pos_a[int(q)] = r
    pos_b = {}
    for r, q in enumerate(rec_b.partition_idx):
        pos_b[int(q)] = r
    common = sorted(set(pos_a) & set(pos_b))
    ra = np.array([pos_a[q] for q in common])
    rb = np.array([pos_b[q] for q in common])
    diff = np.sum(np.abs(rec_a.fields[ra] - rec_b.fields[rb]) ** 2, axis=1)
    return _trapz(diff, rec_a.times[ra])


def refinement_study(
    setup: SystemSetup,
    axis: str,
    levels: list,
    n_paths: int,
    proxy_t0: float = 0.5,
    proxy_deltas: tuple = (0.2, 0.1, 0.05, 0.025),
) -> dict:
    """Self-consistency under grid refinement plus the increment proxy.

    axis = "dt": nested time steps sharing the finest master grid.
    axis = "n":  nested Galerkin levels on one grid.
    Also reports E|u(t0 + delta) - u(t0)|^2 for a shrinking delta ladder,
    computed on the finest level.
    """
    if axis not in ("dt", "n"):
        raise ValueError("axis must be 'dt' or 'n'")
    base = replace(setup.config, record_fields=True)
    if axis == "dt":
        configs = [replace(base, dt=float(lv)) for lv in levels]
        master_dt = min(float(lv) for lv in levels)
    else:
        configs = [replace(base, galerkin_n=int(lv)) for lv in levels]
        master_dt = base.dt
    dist_acc = np.zeros((len(levels) - 1, n_paths))
    proxy_acc = np.zeros((len(proxy_deltas), n_paths))
    contexts = [build_context(c, setup.diffusion, setup.jump) for c in configs]
    ms = contexts[0].mode_set
    for p in range(n_paths):
        real = setup.realization(p, master_dt=master_dt)
        u0 = initial_field(base, real, ms)
        recs = []
        for cfg, ctx in zip(configs, contexts):
            u0_lv = project(u0, cfg.n_active(ms))
            recs.append(
                integrate_path(
                    cfg, setup.diffusion, setup.jump, real, context=ctx,
                    u0_override=u0_lv,
                )
            )
        for lv in range(len(levels) - 1):
            dist_acc[lv, p] = _coupled_distance_sq(recs[lv], recs[lv + 1])
        fine = recs[-1] if axis == "dt" else recs[int(np.argmax(levels))]
        r0 = _row_at(fine.times, proxy_t0)
        for j, d in enumerate(proxy_deltas):
            r1 = _row_at(fine.times, proxy_t0 + d)
            proxy_acc[j, p] = float(
                np.sum(np.abs(fine.fields[r1] - fine.fields[r0]) ** 2)
            )
    distances = []
    for lv in range(len(levels) - 1):
        mean, se = _mean_se(dist_acc[lv])
        distances.append(
            StudyRow(level=float(levels[lv]), value=float(np.sqrt(mean)),
                     standard_error=se)
        )
    proxy = []
    for j, d in enumerate(proxy_deltas):
        mean, se = _mean_se(proxy_acc[j])
        proxy.append(StudyRow(level=float(d), value=mean, standard_error=se))
    return {"distances": distances, "increment_proxy": proxy}
