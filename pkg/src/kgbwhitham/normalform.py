"""Normal-form transformations of the diagonal error system.

The error in diagonal variables obeys, to linear order,

.. math::

    \\partial_t R_n = i\\omega_n R_n + \\sum_m c_n(k)\\, T_{f_{nm}} R_m,
    \\qquad c_{\\pm1} = \\pm i\\omega_1,\\; c_{\\pm2} = \\pm i/\\omega_2,

with the reduced kernels :math:`f_{nm}(k,c) = \\hat\\Psi(c)` initially.
Branches ``+1, -1`` form the u-block and ``+2, -2`` the v-block.
Couplings inside a block are resonant; couplings across blocks are
removed by near-identity maps :math:`R \\mapsto (I + T_G) R` with

.. math::

    G_{nm}(k,c) = \\frac{c_n(k)\\, f_{nm}(k,c)}{i(\\omega_n(k) - \\omega_m(k))},

where the frequency difference is taken at the same wavenumber ``k``.
Its smallest modulus is the same-k gap of :mod:`kgbwhitham.dispersion`.
With :math:`H = (I+G)^{-1} - I`, the kernels after one stage are

.. math::

    f' = \\big(f_{\\mathrm{res}} + c^{-1} G\\, c f\\big)(I + H),

which leaves the cross-block part quadratically smaller.  Iterating
gives geometrically decaying cross-block kernels and convergent
resonant kernels.

All kernels are built at a frozen slow time.  The O(eps) commutator left
by using same-k frequency differences is reported by
:func:`commutator_kernels`.
"""

from dataclasses import dataclass, field

import numpy as np

from .dispersion import BRANCHES, omega, scan_resonance_gaps
from .kgb import DiagonalState
from .spectral import (Kernel2, kernel_apply, kernel_compose, kernel_truncate,
                       kernel_xnorm, separable_kernel, zero_kernel)

BLOCK = (0, 0, 1, 1)
IDX = range(4)


class RegimeError(RuntimeError):
    """A smallness gate failed; the profile is too large."""


class TruncationError(RuntimeError):
    """Composition truncation exceeded its budget after widening."""


class DivergenceError(RuntimeError):
    """The cross-block kernels stopped decaying."""


def coupling_symbol(n, k):
    """Prefactor :math:`c_n(k)` of the error coupling on branch ``n``."""
    if n in (1, -1):
        return np.sign(n) * 1j * omega(1, k)
    if n in (2, -2):
        return np.sign(n) * 1j / omega(2, k)
    raise ValueError(f"unknown branch {n!r}")


def _same_block(n, m):
    return BLOCK[n] == BLOCK[m]


def _xnorm_family(kernels, same):
    vals = [kernel_xnorm(kernels[n, m]) for n in IDX for m in IDX
            if (n, m) in kernels and _same_block(n, m) == same]
    return max(vals, default=0.0)


def _row_sum_bound(kernels):
    """Operator-norm bound of a block kernel operator: the largest row sum
    of X-norms."""
    return max((sum(kernel_xnorm(kernels[n, m]) for m in IDX
                    if (n, m) in kernels) for n in IDX), default=0.0)


@dataclass
class NormalFormStage:
    """Kernels of one stage.

    ``f`` holds all sixteen reduced kernels keyed by branch-index pairs
    (indices into ``(+1, -1, +2, -2)``).  ``g`` holds the eight
    cross-block transformation kernels and ``h`` the sixteen kernels of
    the inverse map.  ``record`` collects X-norms.
    """

    index: int
    f: dict
    g: dict = field(default_factory=dict)
    h: dict = field(default_factory=dict)
    record: dict = field(default_factory=dict)

    def f_res(self, n):
        return {m: self.f[n, m] for m in IDX if _same_block(n, m)}

    def f_non(self, n):
        return {m: self.f[n, m] for m in IDX if not _same_block(n, m)}

    @property
    def xnorm_res(self):
        return _xnorm_family(self.f, True)

    @property
    def xnorm_non(self):
        return _xnorm_family(self.f, False)


@dataclass
class LimitKernels:
    """Resonant kernels after the iteration.

    ``f_u = 2 f_{1,-1}`` and ``f_v = 2 f_{2,-2}`` are the kernels of the
    modified energy; ``d_u = f_{1,1}`` and ``d_v = f_{2,2}`` are the
    same-branch kernels, equal to half of ``f_u``, ``f_v`` at the first
    stage and differing from them at cubic order.
    """

    f_u: Kernel2
    f_v: Kernel2
    d_u: Kernel2
    d_v: Kernel2
    stages_used: int
    residual_decay: float
    stages: list
    q: float
    ratios: list

    @property
    def decay_record(self):
        return [s.record for s in self.stages]


def stage_q(psi_kernel):
    """Smallness parameter: resonant plus non-resonant stage-1 X-norm."""
    return 2.0 * kernel_xnorm(psi_kernel)


def init_stage(psi_hat, grid, eps, half_width=32, s_weight=1.0, q_gate=0.25):
    """Stage 1: every reduced kernel is the separable kernel of ``psi_hat``.

    Raises :class:`RegimeError` when the measured ``q`` exceeds
    ``q_gate``.
    """
    psi = separable_kernel(psi_hat, grid, half_width, eps, s_weight)
    q = stage_q(psi)
    if q > q_gate:
        raise RegimeError(
            f"measured q = {q:.4g} exceeds the gate {q_gate}; "
            f"X-norm of the profile kernel is {q / 2:.4g}")
    f = {(n, m): psi for n in IDX for m in IDX}
    stage = NormalFormStage(1, f)
    stage.record.update(q=q, psi_xnorm=q / 2,
                        psi_truncation=psi.truncation_error)
    return stage


def _compose(a, b, L, drops=None):
    h = kernel_compose(a, b)
    if h.half_width > L:
        h, dropped = kernel_truncate(h, L)
        if drops is not None:
            drops.append(dropped)
    return h


def _block_product(X, Y, rows, cols, inner, L, drops=None):
    out = {}
    for n in rows:
        for m in cols:
            acc = None
            for p in inner:
                if (n, p) in X and (p, m) in Y:
                    term = _compose(X[n, p], Y[p, m], L, drops)
                    acc = term if acc is None else acc + term
            if acc is not None:
                out[n, m] = acc
    return out


def g_from_fnon(stage):
    """Cross-block transformation kernels of a stage."""
    grid = next(iter(stage.f.values())).grid
    k = grid.k
    g = {}
    for n in IDX:
        for m in IDX:
            if _same_block(n, m):
                continue
            bn, bm = BRANCHES[n], BRANCHES[m]
            denom = 1j * (omega(bn, k) - omega(bm, k))
            g[n, m] = stage.f[n, m].scale_rows(coupling_symbol(bn, k) / denom)
    return g


def neumann_invert(g, half_width, tail_tol=1e-12, q_gate=0.5, max_terms=60,
                   drops=None):
    """Kernels of :math:`(I + T_G)^{-1} - I` for a cross-block ``G``.

    The Neumann series :math:`\\sum_\\lambda (-G)^\\lambda` is summed in
    pairs: even powers are block diagonal powers of
    :math:`P_U = G_{UV}G_{VU}` and :math:`P_V = G_{VU}G_{UV}`, odd powers
    are :math:`-G` times even ones.  Terms are added until the geometric
    tail bound :math:`\\rho^{\\lambda+1}/(1-\\rho)` falls below
    ``tail_tol``, where :math:`\\rho` is the operator-norm bound of ``G``.

    Returns:
        ``(h, info)`` with ``info`` holding ``rho``, the number of terms and
        the final tail bound.
    """
    rho = _row_sum_bound(g)
    if rho >= min(q_gate, 1.0):
        raise RegimeError(
            f"transformation norm bound {rho:.4g} exceeds the Neumann gate "
            f"{q_gate}")
    U, V = (0, 1), (2, 3)
    if rho == 0.0:
        return {}, {"rho": 0.0, "terms": 0, "tail": 0.0}

    def series(A, B, block):
        P = _block_product(A, B, block, block,
                           V if block == U else U, half_width, drops)
        S = dict(P)
        power = P
        lam = 2
        while rho ** (lam + 1) / (1 - rho) >= tail_tol:
            # the next odd term is covered by -G S; advance the even power
            if lam + 2 > max_terms:
                raise DivergenceError("Neumann series did not converge")
            power = _block_product(power, P, block, block, block,
                                   half_width, drops)
            for key, val in power.items():
                S[key] = S[key] + val
            lam += 2
        return S, lam

    S_U, lam_u = series(g, g, U)
    S_V, lam_v = series(g, g, V)
    lam = max(lam_u, lam_v) + 1
    h = dict(S_U)
    h.update(S_V)
    # H_UV = -G_UV (I + S_V), H_VU = -G_VU (I + S_U)
    for rows, cols, S in ((U, V, S_V), (V, U, S_U)):
        GS = _block_product(g, S, rows, cols, cols, half_width, drops)
        for n in rows:
            for m in cols:
                term = -g[n, m]
                if (n, m) in GS:
                    term = term - GS[n, m]
                h[n, m] = term
    return h, {"rho": rho, "terms": lam,
               "tail": rho ** (lam + 1) / (1 - rho)}


def advance_stage(stage, half_width=None, trunc_budget=1e-6):
    """Compute the transformation of a stage and the kernels of the next.

    Fills ``stage.g`` and ``stage.h`` and returns the next stage.  If the
    X-norm dropped by truncating this stage's compositions exceeds
    ``trunc_budget`` the stage is recomputed once with twice the half
    width; a second excess raises :class:`TruncationError`.
    """
    some = next(iter(stage.f.values()))
    L = some.half_width if half_width is None else half_width
    nxt = _advance(stage, L)
    if nxt.record["truncation_dropped"] > trunc_budget:
        nxt = _advance(stage, 2 * L)
        if nxt.record["truncation_dropped"] > trunc_budget:
            raise TruncationError(
                f"compositions at stage {stage.index} dropped X-norm "
                f"{nxt.record['truncation_dropped']:.3g}, above the budget "
                f"{trunc_budget} at half width {2 * L}")
        nxt.record["widened_to"] = 2 * L
    return nxt


def _advance(stage, L):
    f = stage.f
    some = next(iter(f.values()))
    grid = some.grid
    k = grid.k
    drops = []
    g = g_from_fnon(stage)
    h, info = neumann_invert(g, L, drops=drops)
    stage.g, stage.h = g, h

    # reduced G: f_{n lam} / (i (w_n - w_lam)), composed with c_lam f_{lam m}
    cf = {(p, m): f[p, m].scale_rows(coupling_symbol(BRANCHES[p], k))
          for p in IDX for m in IDX}
    gt = {}
    for (n, p), val in g.items():
        gt[n, p] = f[n, p].scale_rows(
            1.0 / (1j * (omega(BRANCHES[n], k) - omega(BRANCHES[p], k))))
    GA = _block_product(gt, cf, IDX, IDX, IDX, L, drops)
    M = {}
    for n in IDX:
        for m in IDX:
            base = f[n, m] if _same_block(n, m) else zero_kernel(
                grid, L, some.eps, some.s_weight)
            M[n, m] = base + GA[n, m] if (n, m) in GA else base
    MH = _block_product(M, h, IDX, IDX, IDX, L, drops)
    f_next = {key: (M[key] + MH[key]) if key in MH else M[key] for key in M}

    nxt = NormalFormStage(stage.index + 1, f_next)
    res_inc = max(kernel_xnorm(f_next[n, m] - f[n, m])
                  for n in IDX for m in IDX if _same_block(n, m))
    trunc = max(val.truncation_error for val in f_next.values())
    stage.record.update(
        xnorm_res=stage.xnorm_res, xnorm_non=stage.xnorm_non,
        xnorm_g=max(kernel_xnorm(v) for v in g.values()),
        xnorm_h=max((kernel_xnorm(v) for v in h.values()), default=0.0),
        g_bound=info["rho"], neumann_terms=info["terms"],
        neumann_tail=info["tail"], res_increment=res_inc)
    nxt.record.update(truncation=trunc, truncation_dropped=float(sum(drops)))
    return nxt


def iterate_to_limit(psi_hat, grid, eps, j_max=12, tol=1e-8, half_width=32,
                     s_weight=1.0, q_gate=0.25):
    """Iterate stages until the cross-block X-norm drops below ``tol``.

    Returns a :class:`LimitKernels` whose ``stages`` list holds every stage
    with a transformation, followed by the final stage.
    """
    stage = init_stage(psi_hat, grid, eps, half_width, s_weight, q_gate)
    q = stage.record["q"]
    stages = [stage]
    ratios = []
    rising = 0
    while stage.xnorm_non >= tol and stage.index < j_max:
        prev = stage.xnorm_non
        stage = advance_stage(stage, half_width)
        stages.append(stage)
        if prev > 0:
            ratio = stage.xnorm_non / prev
            ratios.append(ratio)
            rising = rising + 1 if ratio >= 1 else 0
            if rising >= 3:
                raise DivergenceError(
                    f"cross-block kernels grew for 3 stages: "
                    f"{[s.xnorm_non for s in stages]}")
    last = stage
    last.record.update(xnorm_res=last.xnorm_res, xnorm_non=last.xnorm_non)
    return LimitKernels(
        f_u=2.0 * last.f[0, 1], f_v=2.0 * last.f[2, 3],
        d_u=last.f[0, 0], d_v=last.f[2, 2],
        stages_used=len(stages), residual_decay=last.xnorm_non,
        stages=stages, q=q, ratios=ratios)


def apply_stage(r_hat, kernels, keys=None):
    out = r_hat.copy()
    for (n, m), ker in kernels.items():
        out[n] = out[n] + kernel_apply(ker, r_hat[m])
    return out


def apply_composite(d, stages):
    """Apply ``(I + G_J) ... (I + G_1)`` to a :class:`DiagonalState`."""
    r = d.r_hat
    for st in stages:
        if st.g:
            r = apply_stage(r, st.g)
    return DiagonalState(d.grid, r)


def apply_composite_inverse(d, stages):
    """Apply the inverse maps ``(I + H_1) ... (I + H_J)``."""
    r = d.r_hat
    for st in reversed(stages):
        if st.g:
            r = apply_stage(r, st.h)
    return DiagonalState(d.grid, r)


def reality_defect(kernels):
    """Largest X-norm of :math:`f_{\\sigma n, \\sigma m}(-k,-c) -
    \\overline{f_{nm}(k,c)}`, relative to the largest kernel norm.

    ``sigma`` exchanges the branches ``+2`` and ``-2``.  The defect
    vanishes for kernels that map real fields to real fields.
    """
    sigma = (0, 1, 3, 2)
    scale = max(kernel_xnorm(v) for v in kernels.values()) or 1.0
    worst = 0.0
    for (n, m), ker in kernels.items():
        other = kernels.get((sigma[n], sigma[m]))
        if other is None:
            continue
        diff = other.conj_reflected() - ker
        worst = max(worst, kernel_xnorm(diff) / scale)
    return worst


def pairing_defect(kernels):
    """Relative defect of the branch-reversal symmetry
    :math:`f_{-n,-m} = f_{nm}`."""
    neg = (1, 0, 3, 2)
    scale = max(kernel_xnorm(v) for v in kernels.values()) or 1.0
    worst = 0.0
    for (n, m), ker in kernels.items():
        other = kernels.get((neg[n], neg[m]))
        if other is not None:
            worst = max(worst, kernel_xnorm(other - ker) / scale)
    return worst


def _shift_defect(f):
    """:math:`\\sup_k \\sum_c \\Delta k\\,|f(k,c) - f(k-c,c)|`.

    The supremum runs over rows whose shifts stay inside the band
    ``|k| < k_Nyquist``, so periodic wrap-around does not enter.
    """
    n = f.grid.n_points
    L = f.half_width
    rows = np.arange(n)
    inner = np.abs(f.grid.index) < n // 2 - L
    acc = np.zeros(n)
    for j in range(2 * L + 1):
        c = j - L
        acc += np.abs(f.values[:, j] - f.values[(rows - c) % n, j])
    return float(np.max(acc[inner])) * f.grid.dk


@dataclass
class SymmetryReport:
    reality_defect: float
    conj_defect_u: float
    conj_defect_v: float
    literal_conj_defect_u: float
    literal_conj_defect_v: float
    shift_defect_u: float
    shift_defect_v: float

    def to_dict(self):
        return dict(self.__dict__)


def check_kernel_symmetries(lk):
    """Symmetry defects of the limit kernels.

    ``conj_defect_*`` measures :math:`f(-k,-c) = \\overline{f(k,c)}`, the
    form that makes the energy cross terms real, relative to the kernel
    X-norm.  ``literal_conj_defect_*`` measures
    :math:`f(k,c) = \\overline{f(k,-c)}`, which holds only for
    k-independent kernels.  ``shift_defect_*`` is the first-argument shift
    defect, expected to be O(eps).
    """
    last = lk.stages[-1]

    def conj(f):
        s = kernel_xnorm(f) or 1.0
        return kernel_xnorm(f.conj_reflected() - f) / s

    def literal(f):
        s = kernel_xnorm(f) or 1.0
        flipped = f._like(np.conj(f.values[:, ::-1]))
        return kernel_xnorm(flipped - f) / s

    return SymmetryReport(
        reality_defect=reality_defect(last.f),
        conj_defect_u=conj(lk.f_u), conj_defect_v=conj(lk.f_v),
        literal_conj_defect_u=literal(lk.f_u),
        literal_conj_defect_v=literal(lk.f_v),
        shift_defect_u=_shift_defect(lk.f_u),
        shift_defect_v=_shift_defect(lk.f_v))


def commutator_kernels(stage):
    """Kernels :math:`i(\\omega_m(k-c) - \\omega_m(k))\\,G_{nm}(k,c)`.

    This is the part of the homological equation dropped by using
    same-k frequency differences; its X-norm is O(eps).
    """
    out = {}
    for (n, m), ker in stage.g.items():
        grid = ker.grid
        k = grid.k[:, None]
        c = ker.offsets[None, :]
        bm = BRANCHES[m]
        diff = 1j * (omega(bm, k - c) - omega(bm, k))
        out[n, m] = ker._like(ker.values * diff)
    return out


def p_ledger(lk_now, lk_next, dT):
    """Per-stage bound sequence for the inhomogeneous terms.

    For each stage with a transformation, reports the X-norm of the slow
    time derivative of ``G`` (finite difference between two slow times
    ``dT`` apart), of ``G`` itself and of the commutator kernels.
    """
    rows = []
    for a, b in zip(lk_now.stages, lk_next.stages):
        if not a.g or not b.g:
            continue
        dg = max(kernel_xnorm((b.g[key] - a.g[key]) * (1.0 / dT))
                 for key in a.g)
        rows.append({
            "stage": a.index,
            "xnorm_dT_g": dg,
            "xnorm_g": max(kernel_xnorm(v) for v in a.g.values()),
            "xnorm_commutator": max(kernel_xnorm(v) for v in
                                    commutator_kernels(a).values()),
        })
    return rows


def gap_constant():
    """Same-k gap constant used in the transformation bounds."""
    return scan_resonance_gaps().c_omega
