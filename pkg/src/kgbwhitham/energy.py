"""Sobolev energies of the error and the modified energy.

For undiagonalized error fields :math:`(R_u, W_u, R_v, W_v)`

.. math::

    E_{s,u} = \\sum_{j\\le s} \\sum_k \\Delta k\\, |k|^{2j}
              (|R_u|^2 + |W_u|^2), \\qquad
    E_{s,v} = \\sum_{j\\le s-1} \\sum_k \\Delta k\\, |k|^{2j}\\omega_2^2
              (|R_v|^2 + |W_v|^2).

The modified energy adds kernel cross terms.  In the ``"offdiagonal"`` form
only the off-diagonal resonant kernels enter,
:math:`\\langle |k|^j R_u, T_{f_u} |k|^j R_u\\rangle` and the v-analogue.
The ``"symmetric"`` form uses both resonant kernels,

.. math::

    \\langle |k|^j R, T_{d+f/2} |k|^j R\\rangle
    + \\langle |k|^j W, T_{d-f/2} |k|^j W\\rangle,

which coincides with the off-diagonal form when ``d = f/2`` (true after the first
stage) and has a time derivative free of kernel-only terms once ``d`` and
``f/2`` differ at cubic order.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .dispersion import omega2
from .spectral import kernel_apply, kernel_xnorm


class SymmetryViolation(RuntimeError):
    """The cross term of the modified energy was not real."""


def _inner(a, b, dk):
    return np.sum(np.conj(a) * b) * dk


def energy_parts(fields, grid, s=1):
    """``(E_{s,u}, E_{s,v})`` for stacked fields ``(R_u, W_u, R_v, W_v)``."""
    if s < 1:
        raise ValueError("s must be at least 1")
    fields = np.asarray(fields)
    k2 = grid.k ** 2
    w2 = omega2(grid.k) ** 2
    au = np.abs(fields[0]) ** 2 + np.abs(fields[1]) ** 2
    av = np.abs(fields[2]) ** 2 + np.abs(fields[3]) ** 2
    wu = sum(k2 ** j for j in range(s + 1))
    wv = sum(k2 ** j for j in range(s)) * w2
    return (float(grid.dk * np.sum(wu * au)),
            float(grid.dk * np.sum(wv * av)))


def energy_E(fields, grid, s=1):
    """Total energy :math:`E_s = E_{s,u} + E_{s,v}`."""
    eu, ev = energy_parts(fields, grid, s)
    return eu + ev


def _cross_terms(fields, grid, kernels, s, form):
    """Cross terms of the modified energy; kernels is a LimitKernels."""
    dk = grid.dk
    absk = np.abs(grid.k)
    total = 0.0 + 0.0j
    if form == "offdiagonal":
        plan = [(0, kernels.f_u, s), (2, kernels.f_v, s - 1)]
    elif form == "symmetric":
        half_u, half_v = 0.5 * kernels.f_u, 0.5 * kernels.f_v
        plan = [(0, kernels.d_u + half_u, s), (1, kernels.d_u - half_u, s),
                (2, kernels.d_v + half_v, s - 1),
                (3, kernels.d_v - half_v, s - 1)]
    else:
        raise ValueError(f"unknown energy form {form!r}")
    for comp, ker, jmax in plan:
        for j in range(jmax + 1):
            a = fields[comp] * absk ** j
            total += _inner(a, kernel_apply(ker, a), dk)
    return total


@dataclass
class EnergySnapshot:
    t: float
    E_s: float
    E_mod: float
    E_su: float
    E_sv: float
    imag_defect: float

    def to_dict(self):
        return asdict(self)


def energy_modified(fields, grid, kernels, s=1, form="symmetric",
                    imag_tol=1e-10, t=0.0):
    """Modified energy of error fields with limit kernels.

    Returns an :class:`EnergySnapshot`.  The imaginary part of the cross
    terms vanishes for kernels with the reality symmetry and real error
    fields; a relative defect above ``imag_tol`` raises
    :class:`SymmetryViolation`.
    """
    fields = np.asarray(fields)
    eu, ev = energy_parts(fields, grid, s)
    E = eu + ev
    if kernels is None:
        return EnergySnapshot(t, E, E, eu, ev, 0.0)
    cross = _cross_terms(fields, grid, kernels, s, form)
    scale = max(E, abs(cross), 1e-300)
    defect = abs(cross.imag) / scale
    if defect > imag_tol:
        raise SymmetryViolation(
            f"imaginary part of the cross term is {defect:.3g} relative")
    return EnergySnapshot(t, E, E + cross.real, eu, ev, defect)


def equivalence_delta(kernels):
    """Largest kernel X-norm entering the cross terms."""
    return max(kernel_xnorm(kernels.f_u), kernel_xnorm(kernels.f_v),
               kernel_xnorm(kernels.d_u), kernel_xnorm(kernels.d_v))


@dataclass
class DriftStats:
    eps: float
    max_average_rate: float
    max_local_rate: float
    mean_local_rate: float
    gronwall_constant: float
    gronwall_envelope: float
    n_snapshots: int

    def to_dict(self):
        return asdict(self)


def drift_report(times, e_mod, eps, local_rates=None, horizon=None):
    """Drift statistics of a modified-energy time series.

    ``max_average_rate`` is :math:`\\max_t |\\mathcal E(t) - \\mathcal
    E(0)|/t`.  ``local_rates`` are instantaneous rates
    :math:`|\\Delta\\mathcal E|/\\delta` measured over short intervals; if
    absent they are taken from consecutive snapshots.  The Gronwall
    constant is the smallest ``C`` with rate :math:`\\le C\\varepsilon
    (\\mathcal E + \\varepsilon^{1/2}\\mathcal E^{3/2} + 1)` at every
    snapshot, and the envelope is the resulting bound on
    :math:`\\mathcal E` at the horizon (default ``times[-1]``).
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(e_mod, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two snapshots")
    avg = np.abs(e[1:] - e[0]) / t[1:]
    if local_rates is None:
        local = np.abs(np.diff(e)) / np.diff(t)
        e_at = e[:-1]
    else:
        local = np.asarray(local_rates, dtype=float)
        e_at = e[:local.size]
    e_pos = np.maximum(e_at, 0.0)
    growth = eps * (e_pos + np.sqrt(eps) * e_pos ** 1.5 + 1.0)
    C = float(np.max(local / growth))
    horizon = t[-1] if horizon is None else horizon
    y, n = max(e[0], 0.0), 2000
    h = horizon / n
    for _ in range(n):
        y += h * C * eps * (y + np.sqrt(eps) * y ** 1.5 + 1.0)
    return DriftStats(eps, float(np.max(avg)), float(np.max(local)),
                      float(np.mean(local)), C, float(y), int(t.size))
