"""Experiment orchestration: epsilon ladders, error scaling, residual
scans, normal-form runs and the energy-drift pipeline."""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import energy as en
from . import normalform as nf
from .dispersion import omega1, omega2
from .kgb import (KGBState, diagonalize, fast_grid_for, kgb_solve,
                  ansatz_initial_data, undiagonalize)
from .spectral import (Grid1D, embed_coeffs, inverse_coeffs,
                       sobolev_norm_coeffs)
from .whitham import (build_ansatz, default_profiles, residual, to_fast,
                      whitham_solve)

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Parameters of an experiment.

    Lengths and times follow the two-scale setup: the slow torus has
    length ``2 pi ell``, the fast torus ``2 pi ell / eps``, and runs cover
    slow times ``[0, T0]``.
    """

    eps_ladder: list = field(
        default_factory=lambda: [0.1, 0.05, 0.025, 0.0125])
    amplitude: float = 0.05
    sigma: float = None
    velocity: float = 1.0
    ell: int = 8
    T0: float = 1.0
    s: int = 1
    beta: float = 1.5
    n_slow: int = 256
    dt_slow: float = 0.01
    dt_fast: float = 0.05
    dx_max: float = 0.5
    snapshots_per_unit: int = 20
    reference_dt_factor: int = 4
    reference_refine: int = 2
    certify: bool = True
    half_width: int = 32
    j_max: int = 12
    tol: float = 1e-8
    q_gate: float = 0.25
    drift_ladder: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    drift_snapshots: int = 4
    drift_delta: float = 0.25
    drift_window: float = 4.5
    energy_form: str = "symmetric"
    error_seed: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("eps_ladder", "drift_ladder"):
            lad = [float(e) for e in getattr(self, name)]
            if any(b >= a for a, b in zip(lad, lad[1:])):
                raise ValueError(f"{name} must be strictly decreasing")
            if any(not 0 < e <= 0.2 for e in lad):
                raise ValueError(f"{name} entries must lie in (0, 0.2]")
            setattr(self, name, lad)
        if self.s < 1:
            raise ValueError("s must be at least 1")
        if self.T0 <= 0:
            raise ValueError("T0 must be positive")

    @property
    def slow_length(self):
        return 2 * np.pi * self.ell

    @classmethod
    def from_file(cls, path):
        """Load a YAML or JSON file; unknown keys are rejected."""
        data = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScalingReport:
    """Samples ``(eps, metric)`` with the fitted log-log slope."""

    metric_name: str
    samples: list
    slope: float
    fit_r2: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def fit_slope(samples):
    """Least-squares slope and coefficient of determination of
    ``log(metric)`` against ``log(eps)``."""
    samples = list(samples)
    if len(samples) < 3:
        raise ValueError("need at least three samples")
    e = np.array([s[0] for s in samples], dtype=float)
    m = np.array([s[1] for s in samples], dtype=float)
    if np.any(m <= 0) or np.any(e <= 0):
        raise ValueError("slope fit needs positive eps and metric values")
    x, y = np.log(e), np.log(m)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def scaling_report(name, samples, **extra):
    samples = [(float(a), float(b)) for a, b in samples]
    try:
        slope, r2 = fit_slope(samples)
    except ValueError as exc:
        slope, r2 = float("nan"), float("nan")
        extra["flag"] = str(exc)
    return ScalingReport(name, samples, slope, r2, extra)


# ---------------------------------------------------------------------------
# building blocks


def slow_setup(cfg):
    grid = Grid1D(cfg.n_slow, cfg.slow_length)
    phi1, phi2 = default_profiles(grid, cfg.amplitude, cfg.sigma,
                                  velocity=cfg.velocity)
    return grid, phi1, phi2


def snapshot_times(cfg):
    n = int(round(cfg.snapshots_per_unit * cfg.T0))
    return np.linspace(0.0, cfg.T0, n + 1)


def run_whitham(cfg, slow_times):
    grid, phi1, phi2 = slow_setup(cfg)
    return whitham_solve(phi1, phi2, grid, cfg.T0, cfg.dt_slow, slow_times)


def error_seed_profile(grid, cfg):
    """Long-wave profile used to seed an O(1) initial error."""
    sigma = grid.length / 16 if cfg.sigma is None else cfg.sigma
    r = np.exp(-((grid.x - grid.length / 2) / sigma) ** 2)
    return r - r.mean()


def run_kgb(cfg, eps, fast_times, refine=1, dt=None, seed_error=0.0):
    """Solve KGB from the ansatz initial data at one eps.

    With ``seed_error = c`` the displacements ``u`` and ``v`` are shifted
    by ``c eps^(beta + 1/2) r(eps x)``, an initial error whose normalized
    size ``||R(0)||_{L^2} = c ||r||_{L^2}`` does not depend on eps.
    """
    grid, phi1, phi2 = slow_setup(cfg)
    fg = fast_grid_for(eps, grid.length, cfg.dx_max, refine)
    init = ansatz_initial_data(phi1, phi2, eps, grid, fg)
    if seed_error:
        bump = to_fast(error_seed_profile(grid, cfg), grid, fg)
        amp = seed_error * eps ** (cfg.beta + 0.5)
        init.fields[0] += amp * bump
        init.fields[2] += amp * bump
    t_end = float(np.max(fast_times))
    return kgb_solve(init, t_end, cfg.dt_fast if dt is None else dt,
                     fast_times)


def ansatz_first_order(ans):
    """Ansatz in first-order variables ``(psi_u, W_psi_u, psi_v, W_psi_v)``."""
    g = ans.grid
    w1 = omega1(g.k)
    wu = np.zeros(g.n_points, dtype=complex)
    nz = w1 != 0
    wu[nz] = ans.dpsi_u[nz] / (1j * w1[nz])
    wv = ans.dpsi_v / (1j * omega2(g.k))
    return np.array([ans.psi_u, wu, ans.psi_v, wv]) * g.nyquist_mask


# ---------------------------------------------------------------------------
# error scaling


def _error_one_eps(cfg, eps):
    slow_t = snapshot_times(cfg)
    traj = run_whitham(cfg, slow_t)
    fast_t = slow_t / eps
    sol = run_kgb(cfg, eps, fast_t)
    fg = sol.grid
    sup_err = gap = h1_err = 0.0
    for i, t in enumerate(fast_t):
        ans = build_ansatz(traj, eps, t, fg)
        u = inverse_coeffs(sol.fields[i, 0], fg)
        v = inverse_coeffs(sol.fields[i, 2], fg)
        U = inverse_coeffs(ans.psi_u, fg)
        V = inverse_coeffs(ans.plain_v, fg)
        PV = inverse_coeffs(ans.psi_v, fg)
        sup_err = max(sup_err, np.max(np.abs(u - U)), np.max(np.abs(v - V)))
        gap = max(gap, np.max(np.abs(PV - V)))
        du = sol.fields[i, 0] - ans.psi_u
        dv = sol.fields[i, 2] - ans.plain_v
        h1_err = max(h1_err, float(sobolev_norm_coeffs(du, fg, 1))
                     + float(sobolev_norm_coeffs(dv, fg, 1)))
    out = {"eps": eps, "n_fast": fg.n_points, "sup_error": float(sup_err),
           "ansatz_gap": float(gap), "h1_error": h1_err}
    if cfg.certify:
        ref = run_kgb(cfg, eps, fast_t, refine=cfg.reference_refine,
                      dt=cfg.dt_fast / cfg.reference_dt_factor)
        disc = 0.0
        for i in range(len(fast_t)):
            for j in (0, 2):
                r = embed_coeffs(ref.fields[i, j], ref.grid, fg)
                disc = max(disc, float(np.max(np.abs(
                    inverse_coeffs(sol.fields[i, j] - r, fg)))))
        out["discretization_error"] = disc
        out["signal_to_discretization"] = (
            float(sup_err / disc) if disc > 0 else float("inf"))
        out["certified"] = bool(sup_err >= 10 * disc)
    return out


def _map(fn, items, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


class _Bound:
    """Picklable partial application for the worker pool."""

    def __init__(self, fn, cfg):
        self.fn, self.cfg = fn, cfg

    def __call__(self, eps):
        return self.fn(self.cfg, eps)


def run_error_scaling(cfg, threads=1):
    """Sup-norm error of the KGB solution against the Whitham
    approximation over the epsilon ladder.

    Returns ``(sup_report, details)``: the fitted sup-norm report plus the
    per-epsilon rows, which also carry the improved-minus-plain ansatz gap,
    an H^1 error and the reference-run certification.
    """
    rows = _map(_Bound(_error_one_eps, cfg), cfg.eps_ladder, threads)
    sup = scaling_report("sup_error", [(r["eps"], r["sup_error"])
                                        for r in rows])
    if cfg.certify:
        sup.extra["all_certified"] = all(r["certified"] for r in rows)
        sup.extra["min_signal_to_discretization"] = min(
            r["signal_to_discretization"] for r in rows)
    gap = scaling_report("ansatz_gap", [(r["eps"], r["ansatz_gap"])
                                        for r in rows])
    h1 = scaling_report("h1_error", [(r["eps"], r["h1_error"])
                                     for r in rows])
    return sup, {"rows": rows, "ansatz_gap": gap, "h1_error": h1}


# ---------------------------------------------------------------------------
# residuals


def _residual_one_eps(cfg, eps, traj=None):
    slow_t = snapshot_times(cfg)
    traj = run_whitham(cfg, slow_t) if traj is None else traj
    fg = fast_grid_for(eps, cfg.slow_length, cfg.dx_max)
    best = {"h1": 0.0, "weighted": 0.0, "sup_v": 0.0}
    for T in slow_t:
        ans = build_ansatz(traj, eps, T / eps, fg)
        _, _, rep = residual(ans, eps, cfg.s)
        best["h1"] = max(best["h1"], rep.res_u_h1 + rep.res_v_h1)
        best["weighted"] = max(best["weighted"],
                               rep.res_u_weighted + rep.res_v_weighted)
        best["sup_v"] = max(best["sup_v"], rep.res_v_sup)
    return {"eps": eps, **best}


def run_residual_scan(cfg):
    """Residual norms of the improved ansatz over the epsilon ladder."""
    traj = run_whitham(cfg, snapshot_times(cfg))
    rows = [_residual_one_eps(cfg, eps, traj) for eps in cfg.eps_ladder]
    reports = {
        "h1": scaling_report("residual_h1",
                             [(r["eps"], r["h1"]) for r in rows]),
        "weighted": scaling_report("residual_weighted",
                                   [(r["eps"], r["weighted"]) for r in rows]),
        "sup_v": scaling_report("residual_v_sup",
                                [(r["eps"], r["sup_v"]) for r in rows]),
    }
    return reports, rows


# ---------------------------------------------------------------------------
# normal form


def psi_hat_at(cfg, eps, T, traj=None):
    """Coefficients of ``Psi = psi_u + psi_v`` on the fast grid at slow
    time ``T``, with the grid."""
    traj = run_whitham(cfg, [T]) if traj is None else traj
    fg = fast_grid_for(eps, cfg.slow_length, cfg.dx_max)
    ans = build_ansatz(traj, eps, T / eps, fg)
    return ans.psi_u + ans.psi_v, fg


def run_normalform(cfg, eps, T=0.0):
    """Iterate the normal-form recursion for the profile at slow time
    ``T``."""
    psi, fg = psi_hat_at(cfg, eps, T)
    return nf.iterate_to_limit(psi, fg, eps, cfg.j_max, cfg.tol,
                               cfg.half_width, cfg.s, cfg.q_gate)


def stage_one_kernels(psi_hat, grid, eps, cfg):
    """Limit-kernel container built from the first stage alone."""
    st = nf.init_stage(psi_hat, grid, eps, cfg.half_width, cfg.s, cfg.q_gate)
    return nf.LimitKernels(
        f_u=2.0 * st.f[0, 1], f_v=2.0 * st.f[2, 3],
        d_u=st.f[0, 0], d_v=st.f[2, 2], stages_used=1,
        residual_decay=st.xnorm_non, stages=[st], q=st.record["q"],
        ratios=[])


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class PipelineResult:
    eps: float
    times: list
    energy: list
    energy_mod: list
    local_rates: list
    r_h1: list
    ablation_energy_mod: list
    ablation_local_rates: list
    drift: dict
    ablation_drift: dict
    stages_used: list
    equivalence_ratio: list

    def to_dict(self):
        return asdict(self)


def error_fields(sol_fields, ans, eps, beta):
    """First-order error ``(solution - ansatz) / eps^beta``."""
    return (sol_fields - ansatz_first_order(ans)) / eps ** beta


def run_full_pipeline(cfg, eps, with_ablation=True):
    """Transformed error trajectory and modified-energy drift at one eps.

    At each of ``drift_snapshots`` slow times ``T_i`` the normal-form
    kernels are built from the ansatz at ``T_i`` and kept frozen over a
    short window of fast times ``t_i + m delta`` (``drift_window`` long,
    about one period of the Klein-Gordon oscillation).  The error
    ``R = (solution - ansatz)/eps^beta`` at each window time is
    diagonalized, mapped through the composite transformation and
    evaluated in the modified energy.  The local drift rate of a window is
    the largest :math:`|\\Delta\\mathcal E|/\\delta` inside it.  The
    ablation repeats this with first-stage kernels and no transformation.
    """
    n_sub = max(1, int(round(cfg.drift_window / cfg.drift_delta)))
    offsets = np.arange(n_sub + 1) * cfg.drift_delta
    slow_t = np.linspace(0.0, cfg.T0, cfg.drift_snapshots)
    T_end = cfg.T0 + eps * offsets[-1]
    all_slow = np.unique(np.concatenate(
        [slow_t + eps * off for off in offsets]))
    grid, phi1, phi2 = slow_setup(cfg)
    traj = whitham_solve(phi1, phi2, grid, T_end, cfg.dt_slow, all_slow)
    sol = run_kgb(cfg, eps, all_slow / eps, seed_error=cfg.error_seed)
    fg = sol.grid

    def fields_at(T):
        t = T / eps
        i = sol.index_of(t)
        ans = build_ansatz(traj, eps, t, fg)
        return error_fields(sol.fields[i], ans, eps, cfg.beta), ans

    res = {k: [] for k in ("t", "E", "Em", "rate", "rh1", "aEm", "arate",
                           "stages", "equiv")}
    for T in slow_t:
        errs, anss = zip(*(fields_at(T + eps * off) for off in offsets))
        psi = anss[0].psi_u + anss[0].psi_v
        lk = nf.iterate_to_limit(psi, fg, eps, cfg.j_max, cfg.tol,
                                 cfg.half_width, cfg.s, cfg.q_gate)
        em, delta, equiv = [], en.equivalence_delta(lk), 0.0
        for j, r in enumerate(errs):
            d = nf.apply_composite(diagonalize(KGBState(fg, r)), lk.stages)
            snap = en.energy_modified(undiagonalize(d).fields, fg, lk, cfg.s,
                                      cfg.energy_form)
            if j == 0:
                e_plain = snap.E_s
            em.append(snap.E_mod)
            if snap.E_s > 0 and delta > 0:
                equiv = max(equiv, abs(snap.E_mod - snap.E_s)
                            / (delta * snap.E_s))
        res["t"].append(T / eps)
        res["E"].append(e_plain)
        res["Em"].append(em[0])
        res["rate"].append(float(np.max(np.abs(np.diff(em))))
                           / cfg.drift_delta)
        res["rh1"].append(float(np.sqrt(np.sum(
            sobolev_norm_coeffs(errs[0], fg, 1) ** 2))))
        res["stages"].append(lk.stages_used)
        res["equiv"].append(equiv)
        if with_ablation:
            lk1 = stage_one_kernels(psi, fg, eps, cfg)
            am = [en.energy_modified(r, fg, lk1, cfg.s, cfg.energy_form).E_mod
                  for r in errs]
            res["aEm"].append(am[0])
            res["arate"].append(float(np.max(np.abs(np.diff(am))))
                                / cfg.drift_delta)
        log.info("eps=%g T=%.3f E_mod=%.6g rate=%.3g", eps, T, em[0],
                 res["rate"][-1])
    drift = en.drift_report(res["t"], res["Em"], eps, res["rate"]).to_dict()
    adrift = (en.drift_report(res["t"], res["aEm"], eps,
                              res["arate"]).to_dict()
              if with_ablation else {})
    return PipelineResult(eps, res["t"], res["E"], res["Em"], res["rate"],
                          res["rh1"], res["aEm"], res["arate"], drift,
                          adrift, res["stages"], res["equiv"])


def run_energy_drift(cfg, threads=1):
    """Drift-rate scaling of the transformed pipeline and its ablation."""
    results = _map(_Bound(run_full_pipeline, cfg), cfg.drift_ladder, threads)
    main = scaling_report("drift_rate", [(r.eps, r.drift["max_local_rate"])
                                         for r in results])
    abl = scaling_report("ablation_drift_rate",
                         [(r.eps, r.ablation_drift["max_local_rate"])
                          for r in results])
    return main, abl, results


# ---------------------------------------------------------------------------
# persistence


def write_csv(path, header, rows):
    """Write rows with a fixed float format (deterministic output)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True)
                    + "\n")


def write_manifest(out_dir, cfg, command, extra=None):
    """Record the config hash, grid parameters and error budgets."""
    grids = {str(e): {"n_fast": fast_grid_for(e, cfg.slow_length,
                                              cfg.dx_max).n_points,
                      "length_fast": cfg.slow_length / e}
             for e in sorted(set(cfg.eps_ladder) | set(cfg.drift_ladder))}
    data = {"command": command, "version": __version__,
            "config": cfg.to_dict(),
            "config_hash": cfg.digest(), "slow_grid": {
                "n_points": cfg.n_slow, "length": cfg.slow_length},
            "fast_grids": grids}
    if extra:
        data.update(extra)
    write_json(Path(out_dir) / "manifest.json", data)
