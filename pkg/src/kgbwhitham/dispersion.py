"""Dispersion relations of the linearized KGB system.

The two wave families are the long-wave Boussinesq branch

.. math::

    \\omega_{\\pm 1}(k) = \\pm \\frac{k}{\\sqrt{k^2 + 1}}

and the Klein-Gordon branch

.. math::

    \\omega_{\\pm 2}(k) = \\pm \\sqrt{k^2 + 2}.

The Boussinesq branch is written in its signed smooth form, so no
branch logic is needed at :math:`k = 0`.
"""

from dataclasses import dataclass, asdict

import numpy as np

BRANCHES = (1, -1, 2, -2)


def omega(branch, k):
    """Angular frequency of a branch at wavenumber(s) ``k``.

    Args:
        branch: One of +1, -1, +2, -2.
        k: Scalar or array of wavenumbers.

    Returns:
        The frequency, with the same shape as ``k``.
    """
    k = np.asarray(k, dtype=float)
    if branch in (1, -1):
        value = k / np.sqrt(k * k + 1.0)
    elif branch in (2, -2):
        value = np.sqrt(k * k + 2.0)
    else:
        raise ValueError(f"unknown dispersion branch {branch!r}")
    return value if branch > 0 else -value


def omega1(k):
    return omega(1, k)


def omega2(k):
    return omega(2, k)


def symbol_omega1_times_ksq_over(k):
    """The symbol :math:`k^2 / ((1+k^2)\\,\\omega_1(k))` with its removable
    singularity resolved.

    It simplifies to :math:`k/\\sqrt{k^2+1}`, which is how the Boussinesq
    nonlinearity enters the first-order system.  No division by
    :math:`\\omega_1` is performed, so the value at ``k = 0`` is exactly 0.
    """
    k = np.asarray(k, dtype=float)
    return k / np.sqrt(k * k + 1.0)


@dataclass
class ResonanceGapReport:
    """Grid minima of the frequency gaps between the two wave families.

    ``gap_12_minus`` and ``gap_12_plus`` are infima over independent
    wavenumbers ``k, m`` of :math:`|\\omega_2(k) - \\omega_1(m)|` and
    :math:`|\\omega_2(k) + \\omega_1(m)|`.  ``gap_same_k`` is the smallest
    same-wavenumber distance between a branch of family 1 and a branch of
    family 2, and ``c_omega`` is its reciprocal.
    """

    gap_12_minus: float
    gap_12_plus: float
    gap_same_k: float
    c_omega: float
    argmin_same_k: float
    k_max: float
    n_samples: int
    grid_spacing: float

    def to_dict(self):
        return asdict(self)


def scan_resonance_gaps(k_max=50.0, n_samples=100_000):
    """Minimize the non-resonance gaps on a uniform grid.

    Outside ``[-k_max, k_max]`` the family-2 frequency grows while the
    family-1 frequency stays bounded by 1, so the gaps increase there and the
    grid minima are global up to the grid spacing.  The two-argument gaps
    separate: the infimum over ``m`` is taken against the extreme values of
    :math:`\\omega_1`, including its supremum 1 approached as
    :math:`|m| \\to \\infty`.
    """
    if k_max <= 0:
        raise ValueError("k_max must be positive")
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    k = np.linspace(-k_max, k_max, n_samples)
    w1 = omega1(k)
    w2 = omega2(k)

    # omega_1 ranges over the open interval (-1, 1); its closure enters the
    # infimum over m.
    w1_range = np.concatenate([w1, [-1.0, 1.0]])
    w1_lo, w1_hi = w1_range.min(), w1_range.max()
    w2_min = w2.min()
    # |w2 - w1| and |w2 + w1| are minimized where w1 is extremal, w2 minimal.
    gap_minus = max(0.0, w2_min - w1_hi)
    gap_plus = max(0.0, w2_min + w1_lo)

    same_k = np.minimum.reduce([
        np.abs(omega(mu, k) - omega(lam, k))
        for mu in (1, -1) for lam in (2, -2)
    ])
    idx = int(np.argmin(same_k))
    gap_same = float(same_k[idx])
    return ResonanceGapReport(
        gap_12_minus=float(gap_minus),
        gap_12_plus=float(gap_plus),
        gap_same_k=gap_same,
        c_omega=1.0 / gap_same,
        argmin_same_k=float(k[idx]),
        k_max=float(k_max),
        n_samples=int(n_samples),
        grid_spacing=float(k[1] - k[0]),
    )


def dispersion_table(k):
    """Columns ``(k, omega1, omega2)`` for the dispersion-curve data file."""
    k = np.asarray(k, dtype=float)
    return np.column_stack([k, omega1(k), omega2(k)])
