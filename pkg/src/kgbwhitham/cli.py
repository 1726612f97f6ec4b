"""Command-line interface.

Every subcommand writes CSV and JSON files plus a ``manifest.json`` into
``--out``.  Exit status is 0 when the run passes its acceptance
thresholds, 2 when it completes but a threshold fails and 1 on error.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import harness as hs
from . import normalform as nf
from .dispersion import dispersion_table, scan_resonance_gaps
from .kgb import fast_grid_for, kgb_solve, ansatz_initial_data
from .spectral import inverse_coeffs, sobolev_norm_coeffs
from .whitham import whitham_solve

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

log = logging.getLogger("kgbwhitham")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _config(args):
    cfg = hs.RunConfig.from_file(args.config) if args.config else hs.RunConfig()
    over = {}
    for name in ("amplitude", "sigma", "T0", "s", "dt_fast", "dt_slow",
                 "n_slow", "j_max", "tol", "half_width", "energy_form",
                 "drift_snapshots", "error_seed"):
        val = getattr(args, name, None)
        if val is not None:
            over[name] = val
    for name in ("eps_ladder", "drift_ladder"):
        val = getattr(args, name, None)
        if val is not None:
            over[name] = _floats(val)
    return replace(cfg, **over) if over else cfg


def _verdict(checks):
    for name, ok in checks.items():
        log.info("%s: %s", name, "PASS" if ok else "FAIL")
    return EXIT_PASS if all(checks.values()) else EXIT_FAIL


# ---------------------------------------------------------------------------
# subcommands


def cmd_dispersion_scan(args, cfg, out):
    k = np.linspace(-args.k_table, args.k_table, args.n_table)
    tab = dispersion_table(k)
    hs.write_csv(out / "dispersion.csv", ["k", "omega1", "omega2"], tab)
    rep = scan_resonance_gaps(args.k_max, args.n_samples)
    hs.write_json(out / "gaps.json", rep.to_dict())
    hs.write_manifest(out, cfg, "dispersion-scan")
    return _verdict({"gaps_positive": min(rep.gap_12_minus, rep.gap_12_plus,
                                          rep.gap_same_k) > 0})


def cmd_simulate_whitham(args, cfg, out):
    grid, phi1, phi2 = hs.slow_setup(cfg)
    times = hs.snapshot_times(cfg)
    traj = whitham_solve(phi1, phi2, grid, cfg.T0, cfg.dt_slow, times)
    rows = []
    for i, T in enumerate(traj.times):
        U, W = traj.U[i], traj.W[i]
        rows.append((T, float(np.sqrt(grid.dx * np.sum(U ** 2))),
                     float(np.sqrt(grid.dx * np.sum(W ** 2))),
                     float(np.max(np.abs(U)))))
    hs.write_csv(out / "whitham.csv", ["T", "U_L2", "W_L2", "U_sup"], rows)
    hs.write_csv(out / "whitham_final.csv", ["X", "U", "W"],
                 zip(grid.x, traj.U[-1], traj.W[-1]))
    hs.write_manifest(out, cfg, "simulate-whitham")
    return EXIT_PASS


def cmd_residual_scan(args, cfg, out):
    reports, rows = hs.run_residual_scan(cfg)
    hs.write_csv(out / "residual.csv", ["eps", "res_Hs", "res_weighted",
                                        "res_v_sup"],
                 [(r["eps"], r["h1"], r["weighted"], r["sup_v"])
                  for r in rows])
    hs.write_json(out / "residual.json",
                  {k: v.to_dict() for k, v in reports.items()})
    hs.write_manifest(out, cfg, "residual-scan")
    return _verdict({
        "residual_Hs_slope": 3.3 <= reports["h1"].slope <= 3.7,
        "residual_weighted_slope": 2.3 <= reports["weighted"].slope <= 2.7,
    })


def cmd_simulate_kgb(args, cfg, out):
    eps = args.eps
    grid, phi1, phi2 = hs.slow_setup(cfg)
    fg = fast_grid_for(eps, grid.length, cfg.dx_max, args.refine)
    init = ansatz_initial_data(phi1, phi2, eps, grid, fg)
    times = hs.snapshot_times(cfg) / eps
    sol = kgb_solve(init, times[-1], cfg.dt_fast, times)
    rows, dump = [], []
    for i, t in enumerate(sol.times):
        st = sol.state(i)
        u = inverse_coeffs(st.u_hat, fg)
        v = inverse_coeffs(st.v_hat, fg)
        rows.append((t, float(np.max(np.abs(u))), float(np.max(np.abs(v))),
                     float(sobolev_norm_coeffs(st.u_hat, fg, 1)),
                     st.hermitian_defect()))
        if i % args.stride == 0:
            dump.append((t, u, v))
    hs.write_csv(out / "kgb_summary.csv",
                 ["t", "u_sup", "v_sup", "u_H1", "hermitian_defect"], rows)
    if args.format == "npz":
        np.savez(out / "kgb_snapshots.npz", x=fg.x,
                 t=np.array([d[0] for d in dump]),
                 u=np.array([d[1] for d in dump]),
                 v=np.array([d[2] for d in dump]))
    else:
        hs.write_csv(out / "kgb_snapshots.csv", ["t", "x", "u", "v"],
                     ((t, x, a, b) for t, u, v in dump
                      for x, a, b in zip(fg.x, u, v)))
    hs.write_manifest(out, cfg, "simulate-kgb",
                      {"eps": eps, "n_fast": fg.n_points})
    return EXIT_PASS


def cmd_normalform_iterate(args, cfg, out):
    lk = hs.run_normalform(cfg, args.eps)
    sym = nf.check_kernel_symmetries(lk)
    record = {"eps": args.eps, "q": lk.q, "stages_used": lk.stages_used,
              "ratios": lk.ratios, "residual_decay": lk.residual_decay,
              "stages": lk.decay_record, "symmetry": sym.to_dict()}
    scan = []
    for a in _floats(args.amplitude_scan or ""):
        try:
            lka = hs.run_normalform(replace(cfg, amplitude=a), args.eps)
            scan.append({"amplitude": a, "q": lka.q, "gate": "pass",
                         "mean_ratio": float(np.mean(lka.ratios))
                         if lka.ratios else 0.0})
        except (nf.RegimeError, nf.DivergenceError) as exc:
            scan.append({"amplitude": a, "gate": "fail", "reason": str(exc)})
    if scan:
        record["amplitude_scan"] = scan
        passing = [r["amplitude"] for r in scan if r["gate"] == "pass"]
        record["largest_passing_amplitude"] = max(passing, default=None)
    hs.write_json(out / "normalform.json", record)
    hs.write_csv(out / "decay.csv",
                 ["stage", "xnorm_res", "xnorm_non", "xnorm_g", "xnorm_h"],
                 [(r.get("stage", i + 1), r.get("xnorm_res", np.nan),
                   r.get("xnorm_non", np.nan), r.get("xnorm_g", np.nan),
                   r.get("xnorm_h", np.nan))
                  for i, r in enumerate(lk.decay_record)])
    hs.write_manifest(out, cfg, "normalform-iterate")
    r = np.asarray(lk.ratios)
    return _verdict({
        "ratios_below_0.6": bool(r.size == 0 or np.all(r < 0.6)),
        "ratios_stage_independent": bool(r.size == 0
                                         or r.max() / r.min() < 2),
        "conj_defect": max(sym.conj_defect_u, sym.conj_defect_v) < 1e-10,
    })


def cmd_energy_drift(args, cfg, out):
    main, abl, results = hs.run_energy_drift(cfg, args.threads)
    rows = []
    for r in results:
        for i, t in enumerate(r.times):
            rows.append((r.eps, t, r.energy[i], r.energy_mod[i],
                         r.local_rates[i], r.ablation_energy_mod[i],
                         r.ablation_local_rates[i], r.r_h1[i]))
    hs.write_csv(out / "drift_traces.csv",
                 ["eps", "t", "E_s", "E_mod", "local_rate",
                  "ablation_E_mod", "ablation_local_rate", "R_H1"], rows)
    hs.write_json(out / "drift.json", {
        "drift": main.to_dict(), "ablation": abl.to_dict(),
        "per_eps": [{"eps": r.eps, "drift": r.drift,
                     "ablation_drift": r.ablation_drift,
                     "stages_used": r.stages_used,
                     "equivalence_ratio": r.equivalence_ratio}
                    for r in results]})
    hs.write_manifest(out, cfg, "energy-drift")
    equiv = max(max(r.equivalence_ratio) for r in results)
    return _verdict({"drift_slope": main.slope >= 0.8,
                     "ablation_slope_below": abl.slope < 0.8,
                     "energy_equivalence": equiv <= 1.0})


def cmd_error_scaling(args, cfg, out):
    sup, details = hs.run_error_scaling(cfg, args.threads)
    rows = details["rows"]
    keys = ["eps", "n_fast", "sup_error", "ansatz_gap", "h1_error"]
    if cfg.certify:
        keys += ["discretization_error", "signal_to_discretization",
                 "certified"]
    hs.write_csv(out / "error_scaling.csv", keys,
                 [[r[k] for k in keys] for r in rows])
    hs.write_json(out / "error_scaling.json", {
        "sup_error": sup.to_dict(),
        "ansatz_gap": details["ansatz_gap"].to_dict(),
        "h1_error": details["h1_error"].to_dict()})
    budgets = {str(r["eps"]): r.get("discretization_error") for r in rows}
    hs.write_manifest(out, cfg, "error-scaling",
                      {"discretization_error": budgets})
    checks = {"sup_slope": sup.slope >= 1.3, "fit_r2": sup.fit_r2 >= 0.98}
    if cfg.certify:
        checks["certified"] = bool(sup.extra.get("all_certified"))
    return _verdict(checks)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="kgbwhitham",
        description="Whitham approximation of the Klein-Gordon-Boussinesq "
                    "system: simulations and convergence checks.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for epsilon ladders")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--amplitude", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--T0", type=float)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dispersion-scan", parents=[common])
    s.add_argument("--k-max", type=float, default=50.0)
    s.add_argument("--n-samples", type=int, default=100_000)
    s.add_argument("--k-table", type=float, default=10.0)
    s.add_argument("--n-table", type=int, default=401)
    s.set_defaults(fn=cmd_dispersion_scan)

    s = sub.add_parser("simulate-whitham", parents=[common])
    s.add_argument("--dt-slow", dest="dt_slow", type=float)
    s.add_argument("--n-slow", dest="n_slow", type=int)
    s.set_defaults(fn=cmd_simulate_whitham)

    s = sub.add_parser("residual-scan", parents=[common])
    s.add_argument("--eps-ladder", help="comma-separated, decreasing")
    s.add_argument("--s", type=int)
    s.set_defaults(fn=cmd_residual_scan)

    s = sub.add_parser("simulate-kgb", parents=[common])
    s.add_argument("--eps", type=float, default=0.1)
    s.add_argument("--dt", dest="dt_fast", type=float)
    s.add_argument("--refine", type=int, default=1,
                   help="spatial refinement factor of the fast grid")
    s.add_argument("--stride", type=int, default=5,
                   help="dump every n-th snapshot")
    s.add_argument("--format", choices=("csv", "npz"), default="csv")
    s.set_defaults(fn=cmd_simulate_kgb)

    s = sub.add_parser("normalform-iterate", parents=[common])
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--s", type=int)
    s.add_argument("--j-max", dest="j_max", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--l-max", dest="half_width", type=int,
                   help="kernel half width in grid offsets")
    s.add_argument("--amplitude-scan",
                   help="comma-separated amplitudes for the gate boundary")
    s.set_defaults(fn=cmd_normalform_iterate)

    s = sub.add_parser("energy-drift", parents=[common])
    s.add_argument("--drift-ladder", help="comma-separated, decreasing")
    s.add_argument("--snapshots", dest="drift_snapshots", type=int)
    s.add_argument("--energy-form", dest="energy_form",
                   choices=("symmetric", "offdiagonal"))
    s.add_argument("--error-seed", dest="error_seed", type=float)
    s.set_defaults(fn=cmd_energy_drift)

    s = sub.add_parser("error-scaling", parents=[common])
    s.add_argument("--eps-ladder", help="comma-separated, decreasing")
    s.add_argument("--dt", dest="dt_fast", type=float)
    s.set_defaults(fn=cmd_error_scaling)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), 20),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return args.fn(args, cfg, out)
    except Exception as exc:  # noqa: BLE001 - reported as exit status 1
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
