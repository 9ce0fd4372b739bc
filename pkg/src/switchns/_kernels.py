"""Numba kernels for the hot loops.

Everything here operates on plain arrays; the public modules own the data
structures and unpack them before calling in.  Keep fastmath off: results
must be bit-reproducible across runs.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Forcing type codes shared with integrator.py
F_NONE = 0
F_CONSTANT = 1
F_SINUSOID = 2


@njit(cache=True)
def conv_pairs(adv_full, val_full, kvec_full, pa, pb, tk, n_wave):
    """Advective convolution sum binned by canonical target wavevector.

    out[t] = sum over pairs (p, q) with k_p + k_q = k_t of
             i * (adv(p) . k_q) * val(q)
    where adv/val are full-lattice 3-vector amplitudes (conjugate modes
    included explicitly).
    """
    out = np.zeros((n_wave, 3), dtype=np.complex128)
    for p in range(pa.shape[0]):
        a = pa[p]
        b = pb[p]
        t = tk[p]
        s = (
            adv_full[a, 0] * kvec_full[b, 0]
            + adv_full[a, 1] * kvec_full[b, 1]
            + adv_full[a, 2] * kvec_full[b, 2]
        )
        js = 1j * s
        out[t, 0] += js * val_full[b, 0]
        out[t, 1] += js * val_full[b, 1]
        out[t, 2] += js * val_full[b, 2]
    return out


@njit(cache=True)
def _amplitudes_full(u, e1, e2, n_wave):
    """Full-lattice 3-vector amplitudes (+k block, then conjugate -k block)."""
    full = np.empty((2 * n_wave, 3), dtype=np.complex128)
    for w in range(n_wave):
        c1 = u[2 * w]
        c2 = u[2 * w + 1]
        for c in range(3):
            amp = c1 * e1[w, c] + c2 * e2[w, c]
            full[w, c] = amp
            full[n_wave + w, c] = np.conj(amp)
    return full


@njit(cache=True)
def _project_entries(conv, e1, e2, n_wave, n_active, out):
    """Dot target amplitudes onto polarization entries, zero beyond n_active."""
    for w in range(n_wave):
        i1 = 2 * w
        i2 = 2 * w + 1
        if i1 < n_active:
            out[i1] = (
                conv[w, 0] * e1[w, 0] + conv[w, 1] * e1[w, 1] + conv[w, 2] * e1[w, 2]
            )
        else:
            out[i1] = 0.0
        if i2 < n_active:
            out[i2] = (
                conv[w, 0] * e2[w, 0] + conv[w, 1] * e2[w, 1] + conv[w, 2] * e2[w, 2]
            )
        else:
            out[i2] = 0.0


@njit(cache=True)
def nonlinear_coefficients(u, mult_adv, e1, e2, kvec_full, pa, pb, tk, n_active):
    """Entry coefficients of the (mollified) advection term B_eps(u).

    mult_adv holds the Fourier multiplier of the smoothing kernel per full
    wavevector index; pass ones for the raw quadratic term.
    """
    n_wave = e1.shape[0]
    full = _amplitudes_full(u, e1, e2, n_wave)
    adv = np.empty_like(full)
    for j in range(2 * n_wave):
        m = mult_adv[j]
        adv[j, 0] = m * full[j, 0]
        adv[j, 1] = m * full[j, 1]
        adv[j, 2] = m * full[j, 2]
    conv = conv_pairs(adv, full, kvec_full, pa, pb, tk, n_wave)
    out = np.empty(2 * n_wave, dtype=np.complex128)
    _project_entries(conv, e1, e2, n_wave, n_active, out)
    return out


@njit(cache=True)
def conv_general(uadv, uval, mult_adv, e1, e2, kvec_full, pa, pb, tk, n_active):
    """Like nonlinear_coefficients but with distinct advecting and advected fields."""
    n_wave = e1.shape[0]
    adv0 = _amplitudes_full(uadv, e1, e2, n_wave)
    val = _amplitudes_full(uval, e1, e2, n_wave)
    for j in range(2 * n_wave):
        m = mult_adv[j]
        adv0[j, 0] = m * adv0[j, 0]
        adv0[j, 1] = m * adv0[j, 1]
        adv0[j, 2] = m * adv0[j, 2]
    conv = conv_pairs(adv0, val, kvec_full, pa, pb, tk, n_wave)
    out = np.empty(2 * n_wave, dtype=np.complex128)
    _project_entries(conv, e1, e2, n_wave, n_active, out)
    return out


@njit(cache=True)
def _forcing_entry_value(f_kind, f_amp, f_freq, t):
    if f_kind == F_CONSTANT:
        return f_amp
    if f_kind == F_SINUSOID:
        return f_amp * np.sin(2.0 * np.pi * f_freq * t)
    return 0.0


@njit(cache=True)
def run_path(
    u,  # (n,) complex128, initial coefficients; mutated in place
    regime0,  # int64, 1-based initial chain state
    n_active,  # int64, Galerkin level (entries >= n_active stay zero)
    # geometry
    e1,
    e2,  # (n_wave, 3) float64
    k2e,  # (n,) float64, |k|^2 per entry
    # nonlinearity
    nonlin_on,  # bool
    mult_adv,  # (2*n_wave,) float64 smoothing multiplier per full wavevector
    kvec_full,
    pa,
    pb,
    tk,  # convolution plan
    # physics
    nu,
    f_kind,
    f_entry,
    f_amp,
    f_freq,
    # diffusion model
    s_regime,  # (m,) float64
    a_prof,
    b_prof,  # (n,) float64
    # jump model
    g_regime,  # (m,) float64
    zeta,  # (n,) complex128, projected direction field
    c_couple,
    lam,
    mark_mean,
    # schedule: S segments between S+1 boundaries
    bnd_t,  # (S+1,) float64
    bnd_pidx,  # (S+1,) int64 partition indices of the boundaries
    seg_dw,  # (S, n) float64 Wiener increments per segment
    ev_ptr,  # (S+2,) int64 event ranges per boundary (switches sorted first)
    ev_kind,  # (E,) int64: 0 switch, 1 jump
    ev_ival,  # (E,) int64 new state for switches
    ev_zval,  # (E,) float64 mark for jumps
    # outputs, preallocated with R_max rows
    rec_t,
    rec_h2,
    rec_v2,
    rec_regime,
    rec_njumps,
    rec_pidx,
    rec_fields,  # (R_max, n) complex128 or (0, n) when not recording
    record_fields,
):
    """Event-adapted semi-implicit sweep over one path.

    Returns (status, blow_time, n_rows, final_regime, n_jumps):
    status 0 = completed, 1 = non-finite state encountered.
    """
    n = u.shape[0]
    S = bnd_t.shape[0] - 1
    i_reg = regime0
    n_jumps = 0
    row = 0
    status = 0
    blow_time = 0.0

    drift = np.empty(n, dtype=np.complex128)

    for s in range(S + 1):
        t_b = bnd_t[s]
        e_lo = ev_ptr[s]
        e_hi = ev_ptr[s + 1]

        # record pre-event row (or the only row when no events fire here)
        h2 = 0.0
        v2 = 0.0
        for l in range(n_active):
            m2 = u[l].real * u[l].real + u[l].imag * u[l].imag
            h2 += m2
            v2 += k2e[l] * m2
        rec_t[row] = t_b
        rec_h2[row] = h2
        rec_v2[row] = v2
        rec_regime[row] = i_reg
        rec_njumps[row] = n_jumps
        rec_pidx[row] = bnd_pidx[s]
        if record_fields:
            for l in range(n):
                rec_fields[row, l] = u[l]
        row += 1

        if e_hi > e_lo:
            for e in range(e_lo, e_hi):
                if ev_kind[e] == 0:
                    i_reg = ev_ival[e]
                else:
                    gz = g_regime[i_reg - 1] * ev_zval[e]
                    for l in range(n_active):
                        u[l] = u[l] + gz * (zeta[l] + c_couple * u[l])
                    n_jumps += 1
            h2 = 0.0
            v2 = 0.0
            for l in range(n_active):
                m2 = u[l].real * u[l].real + u[l].imag * u[l].imag
                h2 += m2
                v2 += k2e[l] * m2
            rec_t[row] = t_b
            rec_h2[row] = h2
            rec_v2[row] = v2
            rec_regime[row] = i_reg
            rec_njumps[row] = n_jumps
            rec_pidx[row] = bnd_pidx[s]
            if record_fields:
                for l in range(n):
                    rec_fields[row, l] = u[l]
            row += 1

        if s == S:
            break

        # continuous step over segment s
        dt = bnd_t[s + 1] - bnd_t[s]
        if nonlin_on:
            bc = nonlinear_coefficients(
                u, mult_adv, e1, e2, kvec_full, pa, pb, tk, n_active
            )
            for l in range(n_active):
                drift[l] = -bc[l]
        else:
            for l in range(n_active):
                drift[l] = 0.0

        if f_kind != F_NONE and f_entry < n_active:
            drift[f_entry] += _forcing_entry_value(f_kind, f_amp, f_freq, t_b)

        if mark_mean != 0.0:
            cm = lam * g_regime[i_reg - 1] * mark_mean
            for l in range(n_active):
                drift[l] -= cm * (zeta[l] + c_couple * u[l])

        sr = s_regime[i_reg - 1]
        h2 = 0.0
        for l in range(n_active):
            sig = sr * (a_prof[l] + b_prof[l] * u[l]) * seg_dw[s, l]
            un = (u[l] + dt * drift[l] + sig) / (1.0 + nu * k2e[l] * dt)
            u[l] = un
            h2 += un.real * un.real + un.imag * un.imag
        if not np.isfinite(h2):
            status = 1
            blow_time = bnd_t[s + 1]
            break

    return status, blow_time, row, i_reg, n_jumps


@njit(cache=True)
def _bump_phi(x, r_supp, w):
    if x <= -r_supp or x >= r_supp:
        return 0.0
    y = 1.0 - (x / r_supp) ** 2
    return w * y**4


@njit(cache=True)
def _bump_dphi(x, r_supp, w):
    if x <= -r_supp or x >= r_supp:
        return 0.0
    y = 1.0 - (x / r_supp) ** 2
    return w * 4.0 * y**3 * (-2.0 * x / r_supp**2)


@njit(cache=True)
def _bump_ddphi(x, r_supp, w):
    if x <= -r_supp or x >= r_supp:
        return 0.0
    ir2 = 1.0 / r_supp**2
    y = 1.0 - x * x * ir2
    return w * (24.0 * y**2 * (x * ir2) * (2.0 * x * ir2) - 8.0 * y**3 * ir2)


@njit(cache=True)
def generator_series(
    fields,  # (R, n) complex128 path states (duplicate rows at events)
    regimes,  # (R,) int64
    times,  # (R,) float64
    rho,  # (n,) complex128 test vector
    phi_r,  # support radius of the bump
    phi_w,  # (m,) per-state weights
    gamma,  # (m, m) chain generator
    nu,
    n_active,
    nonlin_on,
    mult_adv,
    e1,
    e2,
    kvec_full,
    pa,
    pb,
    tk,
    f_kind,
    f_entry,
    f_amp,
    f_freq,
    q_spec,  # (n,) float64 covariance eigenvalues
    s_regime,
    a_prof,
    b_prof,
    g_regime,
    zeta,
    c_couple,
    lam,
    gh_nodes,
    gh_weights,  # normalized Gauss-Hermite rule for E over standard normal
):
    """Per-row evaluation of the full generator acting on phi(<u, rho>, i).

    Returns (lf, x, phi_val, visc_term) where visc_term is the contribution
    phi' * <-nu A u, rho>, kept separate so a corrupted-drift control can be
    assembled without a second sweep.
    """
    R = fields.shape[0]
    n = fields.shape[1]
    m = phi_w.shape[0]
    lf = np.empty(R)
    xs = np.empty(R)
    phv = np.empty(R)
    visc = np.empty(R)
    k2e = np.empty(n)
    n_wave = e1.shape[0]
    for w in range(n_wave):
        k2 = (
            kvec_full[w, 0] * kvec_full[w, 0]
            + kvec_full[w, 1] * kvec_full[w, 1]
            + kvec_full[w, 2] * kvec_full[w, 2]
        )
        k2e[2 * w] = k2
        k2e[2 * w + 1] = k2

    for r in range(R):
        u = fields[r]
        i_reg = regimes[r]
        t = times[r]

        x = 0.0
        apair = 0.0
        for l in range(n_active):
            pr = u[l].real * rho[l].real + u[l].imag * rho[l].imag
            x += pr
            apair += k2e[l] * pr
        w_i = phi_w[i_reg - 1]
        ph = _bump_phi(x, phi_r, w_i)
        d1 = _bump_dphi(x, phi_r, w_i)
        d2 = _bump_ddphi(x, phi_r, w_i)

        # drift pairing <-nu A u - B_eps(u) + f, rho>
        pair = -nu * apair
        if nonlin_on:
            bc = nonlinear_coefficients(
                u, mult_adv, e1, e2, kvec_full, pa, pb, tk, n_active
            )
            for l in range(n_active):
                pair -= bc[l].real * rho[l].real + bc[l].imag * rho[l].imag
        if f_kind != F_NONE and f_entry < n_active:
            fv = _forcing_entry_value(f_kind, f_amp, f_freq, t)
            pair += fv * rho[f_entry].real

        # chain switching term: full generator row at frozen x
        chain = 0.0
        for j in range(m):
            chain += gamma[i_reg - 1, j] * _bump_phi(x, phi_r, phi_w[j])

        # diffusion: 1/2 phi'' sum_l q_l <sigma e_l, rho>^2
        sr = s_regime[i_reg - 1]
        quad = 0.0
        for l in range(n_active):
            ml = sr * (a_prof[l] + b_prof[l] * u[l])
            pairing = ml.real * rho[l].real + ml.imag * rho[l].imag
            quad += q_spec[l] * pairing * pairing
        diff_term = 0.5 * d2 * quad

        # jump bracket: lam * E_z[phi(x + g z beta) - phi(x) - phi'(x) g z beta]
        gi = g_regime[i_reg - 1]
        beta = 0.0
        for l in range(n_active):
            gl = zeta[l] + c_couple * u[l]
            beta += gl.real * rho[l].real + gl.imag * rho[l].imag
        jump_term = 0.0
        for kq in range(gh_nodes.shape[0]):
            step = gi * gh_nodes[kq] * beta
            jump_term += gh_weights[kq] * (
                _bump_phi(x + step, phi_r, w_i) - ph - d1 * step
            )
        jump_term *= lam

        lf[r] = d1 * pair + chain + diff_term + jump_term
        xs[r] = x
        phv[r] = ph
        visc[r] = d1 * (-nu * apair)
    return lf, xs, phv, visc


@njit(cache=True)
def nonlinear_energy_series(
    fields, n_active, mult_adv, e1, e2, kvec_full, pa, pb, tk
):
    """<B_eps(u), u> per row; identically zero up to rounding."""
    R = fields.shape[0]
    out = np.empty(R)
    for r in range(R):
        u = fields[r]
        bc = nonlinear_coefficients(
            u, mult_adv, e1, e2, kvec_full, pa, pb, tk, n_active
        )
        acc = 0.0
        for l in range(n_active):
            acc += bc[l].real * u[l].real + bc[l].imag * u[l].imag
        out[r] = acc
    return out
