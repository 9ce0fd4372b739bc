"""Command-line interface: subcommand dispatch, seeds, report emission.

Every subcommand reads one YAML config (all keys optional, documented in the
README), runs its pipeline at the configured scale, writes machine reports
(JSON/CSV) plus an aligned-text summary and a run manifest into --out, and
exits 0 exactly when every pass flag is true.  Reruns with the same config
and seed are byte-identical except the manifest wall clock.

Pass/fail policy (3-standard-error gates, p-value floors, order-fit
thresholds) lives here and in the report objects, not in the library
operations.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import (
    SystemSetup,
    chain_test_report,
    continuity_study,
    energy_residual,
    eps_cauchy_study,
    martingale_test,
    refinement_study,
    run_moment_ensemble,
)
from .config import ConfigError, RunConfiguration, parse_config, parse_config_dict, phi_from_study
from .integrator import BlowUpError, InitialSpec, build_context, integrate_path
from .noise import DiffusionModel, JumpModel, hypotheses_audit
from .reports import RunManifest, table_lines, write_csv, write_json, write_text
from .spectral import build_modes

SUBCOMMANDS = (
    "simulate",
    "moments",
    "energy",
    "martingale-test",
    "continuity",
    "eps-study",
    "refine",
    "chain-test",
    "audit-hypotheses",
)


def _noise_off(setup: SystemSetup) -> SystemSetup:
    """Same system with both noise coefficient families switched off."""
    diff = DiffusionModel(
        spectrum=setup.diffusion.spectrum,
        s=np.zeros_like(setup.diffusion.s),
        a=setup.diffusion.a,
        b=np.zeros_like(setup.diffusion.b),
    )
    jump = JumpModel(
        rate=0.0, g=np.zeros_like(setup.jump.g), zeta=setup.jump.zeta, c=0.0
    )
    gamma_off = type(setup.gamma)(np.zeros_like(setup.gamma.gamma))
    return replace(setup, diffusion=diff, jump=jump, gamma=gamma_off)


def _order_fit(levels, errors) -> float:
    """Least-squares slope of log2(error) against log2(level)."""
    x = np.log2(np.asarray(levels, dtype=float))
    y = np.log2(np.maximum(np.asarray(errors, dtype=float), 1e-300))
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def cmd_simulate(run: RunConfiguration, out: str, emit_events: bool) -> tuple[int, list]:
    setup = run.setup
    cfg = setup.config
    ctx = build_context(cfg, setup.diffusion, setup.jump)
    rows = []
    event_rows = []
    n_paths = run.paths
    blow_ups = []
    for p in range(n_paths):
        real = setup.realization(p)
        try:
            rec = integrate_path(cfg, setup.diffusion, setup.jump, real, context=ctx)
        except BlowUpError as exc:
            blow_ups.append({"path": p, "time": exc.time})
            continue
        keep = rec.strided_rows()
        for r in keep:
            rows.append(
                (
                    run.config_hash()[:12],
                    p,
                    float(rec.times[r]),
                    float(rec.h_norm_sq[r]),
                    float(rec.v_norm_sq[r]),
                    float(rec.h_norm_sq[r] ** 1.5),
                    int(rec.regime[r]),
                    int(rec.n_jumps[r]),
                )
            )
        if emit_events:
            for t, z in zip(real.jump_times, real.jump_marks):
                if t <= cfg.horizon:
                    event_rows.append((p, float(t), "jump", float(z)))
            for t, s in zip(real.chain.switch_times, real.chain.switch_states):
                if t <= cfg.horizon:
                    event_rows.append((p, float(t), "switch", int(s)))
    files = [
        write_csv(
            os.path.join(out, "trajectory.csv"),
            ["run_id", "path_id", "t", "h_norm_sq", "v_norm_sq", "h_norm_cubed",
             "regime", "n_jumps_so_far"],
            rows,
        )
    ]
    if emit_events:
        event_rows.sort(key=lambda r: (r[0], r[1]))
        files.append(
            write_csv(
                os.path.join(out, "events.csv"),
                ["path_id", "t", "kind", "value"],
                event_rows,
            )
        )
    summary = {"n_paths": n_paths, "blow_ups": blow_ups, "passed": not blow_ups}
    files.append(write_json(os.path.join(out, "simulate.json"), summary))
    return (0 if not blow_ups else 1), files


def cmd_moments(run: RunConfiguration, out: str) -> tuple[int, list]:
    n_paths = int(run.studies["moments"]["paths"])
    report = run_moment_ensemble(run.setup, n_paths)
    d = report.as_dict()
    files = [write_json(os.path.join(out, "moments.json"), d)]
    rows = [
        ("E_sup_h2", report.e_sup_h2, report.se_sup_h2, report.bounds.c2),
        ("nu_int_v2", report.nu_int_v2, report.se_nu_int_v2, report.bounds.c1),
        ("E_sup_h3", report.e_sup_h3, report.se_sup_h3, report.bounds.c3),
        ("int_h_v2", report.int_h_v2, report.se_int_h_v2, report.bounds.c3),
    ]
    files.append(
        write_csv(
            os.path.join(out, "moments.csv"),
            ["functional", "estimate", "standard_error", "bound"],
            rows,
        )
    )
    lines = ["moment estimates vs a priori bounds", ""]
    lines += table_lines(["functional", "estimate", "se", "bound"], rows)
    lines.append("")
    lines += [
        f"pass_c1={report.pass_c1} pass_c2={report.pass_c2} "
        f"pass_c3={report.pass_c3} blow_ups={report.blow_ups}",
        f"PASSED={report.passed}",
    ]
    files.append(write_text(os.path.join(out, "moments.txt"), lines))
    return (0 if report.passed else 1), files


def cmd_energy(run: RunConfiguration, out: str) -> tuple[int, list]:
    setup = run.setup
    study = run.studies["energy"]
    n_paths = int(study["paths"])
    cfg = replace(setup.config, record_fields=True)
    ctx = build_context(cfg, setup.diffusion, setup.jump)
    res_final = np.empty(n_paths)
    res_max = np.empty(n_paths)
    for p in range(n_paths):
        real = setup.realization(p)
        rec = integrate_path(cfg, setup.diffusion, setup.jump, real, context=ctx)
        res = energy_residual(rec, real, setup.diffusion, setup.jump, cfg)
        res_final[p] = res[-1]
        res_max[p] = float(np.max(np.abs(res)))
    mean = float(res_final.mean())
    se = float(res_final.std(ddof=1) / np.sqrt(n_paths))
    z = mean / se if se > 0 else 0.0
    mean_pass = abs(z) <= 3.0

    # deterministic halving study: noise off, residual magnitude is O(dt)
    det = _noise_off(setup)
    det_dts = [float(x) for x in study["det_dts"]]
    det_cfg0 = replace(
        det.config,
        record_fields=True,
        initial=InitialSpec(kind="single_mode", entry=0, amplitude=0.5),
    )
    errs = []
    for dt in det_dts:
        c = replace(det_cfg0, dt=dt)
        real = det.realization(0, master_dt=dt)
        rec = integrate_path(c, det.diffusion, det.jump, real)
        res = energy_residual(rec, real, det.diffusion, det.jump, c)
        errs.append(float(np.max(np.abs(res))))
    order = _order_fit(det_dts, errs)
    order_pass = order >= 0.9

    payload = {
        "n_paths": n_paths,
        "residual_final_mean": mean,
        "residual_final_se": se,
        "z": z,
        "max_abs_residual_mean": float(res_max.mean()),
        "mean_pass": bool(mean_pass),
        "det_dts": det_dts,
        "det_max_residuals": errs,
        "det_order": order,
        "order_pass": bool(order_pass),
        "passed": bool(mean_pass and order_pass),
    }
    files = [write_json(os.path.join(out, "energy.json"), payload)]
    lines = [
        "pathwise energy balance",
        "",
        f"ensemble residual(T): mean={mean:.6g} se={se:.6g} z={z:.3f} pass={mean_pass}",
        f"deterministic refinement: dts={det_dts} max|res|={[f'{e:.3g}' for e in errs]}",
        f"order={order:.3f} pass={order_pass}",
        f"PASSED={payload['passed']}",
    ]
    files.append(write_text(os.path.join(out, "energy.txt"), lines))
    return (0 if payload["passed"] else 1), files


def cmd_martingale(run: RunConfiguration, out: str) -> tuple[int, list]:
    study = run.studies["martingale"]
    setup = run.derived_setup(k_max=int(study["k_max"]))
    phi = phi_from_study(study)
    ms = build_modes(int(study["k_max"]))
    rho = ms.unit_field(int(study["rho_entry"]), 1.0)
    pairs = [tuple(map(float, p)) for p in study["pairs"]]
    report = martingale_test(setup, phi, rho, pairs, int(study["paths"]))
    d = report.as_dict()
    files = [write_json(os.path.join(out, "martingale.json"), d)]
    rows = [
        (r.family, r.s, r.t, r.statistic, r.standard_error, r.z, r.passed)
        for r in report.rows
    ]
    files.append(
        write_csv(
            os.path.join(out, "martingale.csv"),
            ["family", "s", "t", "statistic", "standard_error", "z", "passed"],
            rows,
        )
    )
    lines = ["martingale-property test", ""]
    lines += table_lines(["family", "s", "t", "stat", "se", "z"], [r[:6] for r in rows])
    lines.append("")
    lines.append(
        f"control (corrupted drift) max |z| = "
        f"{max(abs(r.z) for r in report.control_rows):.2f} "
        f"tripped={report.control_tripped}"
    )
    ok = report.passed and report.control_tripped
    lines.append(f"PASSED={ok}")
    files.append(write_text(os.path.join(out, "martingale.txt"), lines))
    return (0 if ok else 1), files


def cmd_continuity(run: RunConfiguration, out: str) -> tuple[int, list]:
    study = run.studies["continuity"]
    deltas = [float(d) for d in study["deltas"]]
    entry = int(study["entry"])
    setup = run.setup

    det_rows = continuity_study(_noise_off(setup), deltas, 1, perturb_entry=entry)
    det_vals = [r.value for r in det_rows]
    ratios = [det_vals[i] / det_vals[i + 1] for i in range(len(det_vals) - 1)]
    det_pass = all(2.0 <= r <= 8.0 for r in ratios)

    sto_rows = continuity_study(setup, deltas, int(study["paths"]), perturb_entry=entry)
    sto_vals = [r.value for r in sto_rows]
    sto_pass = all(sto_vals[i] > sto_vals[i + 1] for i in range(len(sto_vals) - 1))

    payload = {
        "deltas": deltas,
        "deterministic": [r.as_dict() for r in det_rows],
        "deterministic_ratios": ratios,
        "deterministic_pass": bool(det_pass),
        "stochastic": [r.as_dict() for r in sto_rows],
        "stochastic_monotone_pass": bool(sto_pass),
        "passed": bool(det_pass and sto_pass),
    }
    files = [write_json(os.path.join(out, "continuity.json"), payload)]
    files.append(
        write_csv(
            os.path.join(out, "continuity.csv"),
            ["delta", "weighted_sup_det", "weighted_sup_mc", "mc_se"],
            [
                (d, det_rows[i].value, sto_rows[i].value, sto_rows[i].standard_error)
                for i, d in enumerate(deltas)
            ],
        )
    )
    lines = ["initial-data continuity under coupled noise", ""]
    lines += table_lines(
        ["delta", "det", "mc", "mc_se"],
        [(d, det_rows[i].value, sto_rows[i].value, sto_rows[i].standard_error)
         for i, d in enumerate(deltas)],
    )
    lines.append(f"deterministic halving ratios: {[f'{r:.2f}' for r in ratios]} "
                 f"(quadratic scaling wants ~4) pass={det_pass}")
    lines.append(f"stochastic monotone decrease pass={sto_pass}")
    lines.append(f"PASSED={payload['passed']}")
    files.append(write_text(os.path.join(out, "continuity.txt"), lines))
    return (0 if payload["passed"] else 1), files


def cmd_eps_study(run: RunConfiguration, out: str) -> tuple[int, list]:
    study = run.studies["eps_study"]
    levels = [float(x) for x in study["levels"]]
    rows = eps_cauchy_study(run.setup, levels, int(study["paths"]))
    vals = [r.value for r in rows]
    decreasing = all(vals[i] > vals[i + 1] for i in range(len(vals) - 1))
    payload = {
        "levels": levels,
        "distances": [r.as_dict() for r in rows],
        "decreasing_pass": bool(decreasing),
        "passed": bool(decreasing),
    }
    files = [write_json(os.path.join(out, "eps_study.json"), payload)]
    files.append(
        write_csv(
            os.path.join(out, "eps_study.csv"),
            ["eps", "distance", "se_of_mean_sq"],
            [(r.level, r.value, r.standard_error) for r in rows],
        )
    )
    lines = ["smoothing-width Cauchy study (coupled noise)", ""]
    lines += table_lines(["eps", "D(eps, eps/2)"], [(r.level, r.value) for r in rows])
    lines.append(f"decreasing pass={decreasing}")
    lines.append(f"PASSED={decreasing}")
    files.append(write_text(os.path.join(out, "eps_study.txt"), lines))
    return (0 if decreasing else 1), files


def cmd_refine(run: RunConfiguration, out: str) -> tuple[int, list]:
    study = run.studies["refine"]
    axis = str(study["axis"])
    levels = [float(x) for x in study["levels"]]
    proxy_deltas = tuple(float(x) for x in study["proxy_deltas"])
    setup = run.setup

    # deterministic order fit on the refinement axis
    det = _noise_off(setup)
    det = replace(
        det,
        config=replace(
            det.config,
            initial=InitialSpec(kind="random_gaussian", entry=0, amplitude=0.5),
        ),
    )
    det_res = refinement_study(det, axis, levels, 1, proxy_t0=float(study["proxy_t0"]),
                               proxy_deltas=proxy_deltas)
    det_dist = [r.value for r in det_res["distances"]]
    if axis == "dt":
        order = _order_fit(levels[:-1], det_dist)
        order_pass = order >= 0.9
    else:
        order = float("nan")
        order_pass = True

    sto_res = refinement_study(setup, axis, levels, int(study["paths"]),
                               proxy_t0=float(study["proxy_t0"]),
                               proxy_deltas=proxy_deltas)
    proxy_vals = [r.value for r in sto_res["increment_proxy"]]
    proxy_pass = all(proxy_vals[i] > proxy_vals[i + 1] for i in range(len(proxy_vals) - 1))

    payload = {
        "axis": axis,
        "levels": levels,
        "deterministic_distances": det_dist,
        "deterministic_order": order,
        "order_pass": bool(order_pass),
        "stochastic_distances": [r.as_dict() for r in sto_res["distances"]],
        "increment_proxy": [r.as_dict() for r in sto_res["increment_proxy"]],
        "proxy_monotone_pass": bool(proxy_pass),
        "passed": bool(order_pass and proxy_pass),
    }
    files = [write_json(os.path.join(out, "refine.json"), payload)]
    files.append(
        write_csv(
            os.path.join(out, "refine.csv"),
            ["level", "det_distance", "mc_distance", "mc_se"],
            [
                (levels[i], det_dist[i], sto_res["distances"][i].value,
                 sto_res["distances"][i].standard_error)
                for i in range(len(levels) - 1)
            ],
        )
    )
    lines = [f"refinement study on axis {axis}", ""]
    lines += table_lines(
        ["level", "det_dist", "mc_dist"],
        [(levels[i], det_dist[i], sto_res["distances"][i].value)
         for i in range(len(levels) - 1)],
    )
    if axis == "dt":
        lines.append(f"deterministic order={order:.3f} pass={order_pass}")
    lines += table_lines(
        ["delta", "E|u(t0+d)-u(t0)|^2"],
        [(r.level, r.value) for r in sto_res["increment_proxy"]],
    )
    lines.append(f"increment proxy monotone pass={proxy_pass}")
    lines.append(f"PASSED={payload['passed']}")
    files.append(write_text(os.path.join(out, "refine.txt"), lines))
    return (0 if payload["passed"] else 1), files


def cmd_chain_test(run: RunConfiguration, out: str) -> tuple[int, list]:
    study = run.studies["chain_test"]
    setup = run.setup
    report = chain_test_report(
        setup.gamma,
        setup.r0,
        float(study["horizon"]),
        int(study["paths"]),
        setup.master_seed,
    )
    files = [write_json(os.path.join(out, "chain_test.json"), report.as_dict())]
    m = setup.gamma.m
    rows = []
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            rows.append(
                (i + 1, j + 1, float(setup.gamma.gamma[i, j]),
                 float(report.estimate_gillespie[i][j]), float(report.se_gillespie[i][j]),
                 float(report.estimate_prm[i][j]), float(report.se_prm[i][j]))
            )
    files.append(
        write_csv(
            os.path.join(out, "chain_test.csv"),
            ["from", "to", "rate", "gillespie_hat", "gillespie_se", "prm_hat", "prm_se"],
            rows,
        )
    )
    lines = ["switching-chain verification", ""]
    lines += table_lines(
        ["from", "to", "rate", "gillespie", "prm"],
        [(r[0], r[1], r[2], r[3], r[5]) for r in rows],
    )
    lines.append(
        f"occupation(state 1) = {report.occupation_state1:.4f} "
        f"+- {report.occupation_se:.4f} (target {report.occupation_target:.4f})"
    )
    lines.append(
        f"KS p: gillespie={report.ks_p_gillespie:.3g} prm={report.ks_p_prm:.3g}; "
        f"chi2 p: gillespie={report.chi2_p_gillespie:.3g} prm={report.chi2_p_prm:.3g}"
    )
    lines.append(f"PASSED={report.passed}")
    files.append(write_text(os.path.join(out, "chain_test.txt"), lines))
    return (0 if report.passed else 1), files


def cmd_audit(run: RunConfiguration, out: str) -> tuple[int, list]:
    study = run.studies["audit"]
    setup = run.setup
    report = hypotheses_audit(
        setup.diffusion,
        setup.jump,
        build_modes(setup.config.k_max),
        sample_count=int(study["samples"]),
        radius=float(study["radius"]),
        seed=setup.master_seed,
    )
    files = [write_json(os.path.join(out, "audit.json"), report.as_dict())]
    lines = ["noise-coefficient growth/Lipschitz audit", ""]
    for p in (2, 3):
        lines.append(
            f"sigma growth p={p}: hat={report.k_sigma_hat[p]:.6g} "
            f"bound={report.k_sigma_bound[p]:.6g}"
        )
    for p in (1, 2, 3):
        lines.append(
            f"jump growth p={p}:  hat={report.k_jump_hat[p]:.6g} "
            f"bound={report.k_jump_bound[p]:.6g}"
        )
    lines.append(
        f"sigma lipschitz: hat={report.l_sigma_hat:.6g} bound={report.l_sigma_bound:.6g}"
    )
    lines.append(
        f"jump lipschitz:  hat={report.l_jump_hat:.6g} bound={report.l_jump_bound:.6g}"
    )
    lines.append(f"PASSED={report.passed}")
    files.append(write_text(os.path.join(out, "audit.txt"), lines))
    return (0 if report.passed else 1), files


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="switchns",
        description="Spectral Galerkin simulator and verification harness for "
        "stochastic Navier-Stokes dynamics with Markov-switching noise",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--paths", type=int, default=None, help="path count override")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker count (results are independent of this value)",
    )
    parser.add_argument("--emit-events", action="store_true")
    args = parser.parse_args(argv)

    try:
        if args.config is not None:
            run = parse_config(args.config, args.seed, args.paths)
        else:
            run = parse_config_dict({}, args.seed, args.paths)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.paths is not None:
        study_key = {
            "moments": "moments",
            "energy": "energy",
            "martingale-test": "martingale",
            "continuity": "continuity",
            "eps-study": "eps_study",
            "refine": "refine",
            "chain-test": "chain_test",
        }.get(args.subcommand)
        if study_key is not None:
            run.studies[study_key]["paths"] = args.paths
        elif args.subcommand == "audit-hypotheses":
            run.studies["audit"]["samples"] = args.paths

    os.makedirs(args.out, exist_ok=True)
    dispatch = {
        "simulate": lambda: cmd_simulate(run, args.out, args.emit_events),
        "moments": lambda: cmd_moments(run, args.out),
        "energy": lambda: cmd_energy(run, args.out),
        "martingale-test": lambda: cmd_martingale(run, args.out),
        "continuity": lambda: cmd_continuity(run, args.out),
        "eps-study": lambda: cmd_eps_study(run, args.out),
        "refine": lambda: cmd_refine(run, args.out),
        "chain-test": lambda: cmd_chain_test(run, args.out),
        "audit-hypotheses": lambda: cmd_audit(run, args.out),
    }
    try:
        code, files = dispatch[args.subcommand]()
    except (ValueError, BlowUpError) as exc:
        print(f"error: {args.subcommand}: {exc}", file=sys.stderr)
        return 2
    manifest = RunManifest(
        config_hash=run.config_hash(),
        master_seed=int(run.canonical["master_seed"]),
        subcommand=args.subcommand,
        artifact_version=__version__,
        outputs=[os.path.basename(f) for f in files],
    )
    manifest.write(args.out)
    print(f"{args.subcommand}: {'PASS' if code == 0 else 'FAIL'} "
          f"({len(files)} files in {args.out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
