"""The KGB system in first-order Fourier form, its integrator and its
diagonalization.

With :math:`F = (u+v)^2`, the system

.. math::

    \\partial_t^2 u - \\partial_x^2 \\partial_t^2 u = \\partial_x^2 u
        + \\partial_x^2 F, \\qquad
    \\partial_t^2 v = \\partial_x^2 v - 2v - F

is written for :math:`(\\hat u, \\hat W_u, \\hat v, \\hat W_v)` as

.. math::

    \\partial_t \\hat u = i\\omega_1 \\hat W_u, \\quad
    \\partial_t \\hat W_u = i\\omega_1 (\\hat u + \\hat F), \\quad
    \\partial_t \\hat v = i\\omega_2 \\hat W_v, \\quad
    \\partial_t \\hat W_v = i\\omega_2 \\hat v + i\\omega_2^{-1} \\hat F.

The Boussinesq factor :math:`-k^2/(1+k^2)` divided by :math:`i\\omega_1`
is exactly :math:`i\\omega_1`, so no singular symbol appears.
"""

from dataclasses import dataclass

import numpy as np

from .dispersion import BRANCHES, omega1, omega2
from .spectral import Grid1D, dealias, forward_coeffs, inverse_coeffs
from .whitham import h_derivatives, h_of_u, to_fast

SQRT_HALF = np.sqrt(0.5)


class ConfigurationError(ValueError):
    """Solver parameters violate a precondition."""


@dataclass
class KGBState:
    """First-order fields stacked as ``fields[0:4] = (u, W_u, v, W_v)``."""

    grid: Grid1D
    fields: np.ndarray

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=complex)
        if self.fields.shape != (4, self.grid.n_points):
            raise ValueError("KGB state needs four coefficient arrays")

    @property
    def u_hat(self):
        return self.fields[0]

    @property
    def wu_hat(self):
        return self.fields[1]

    @property
    def v_hat(self):
        return self.fields[2]

    @property
    def wv_hat(self):
        return self.fields[3]

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((4, grid.n_points), dtype=complex))

    def hermitian_defect(self):
        """Largest realness defect over the four physical fields.

        ``u``, ``W_u`` and ``v`` are real in physical space; ``W_v`` is
        purely imaginary, since it is a real field divided by ``i omega_2``.
        """
        g = self.grid
        mirror = (-g.index) % g.n_points
        mask = g.nyquist_mask
        worst = 0.0
        for j, sign in zip(range(4), (1, 1, 1, -1)):
            c = self.fields[j]
            d = np.abs(c - sign * np.conj(c[mirror]))[mask]
            worst = max(worst, float(d.max(initial=0.0)))
        return worst


@dataclass
class DiagonalState:
    """Diagonal variables stacked in branch order ``(+1, -1, +2, -2)``."""

    grid: Grid1D
    r_hat: np.ndarray

    def __post_init__(self):
        self.r_hat = np.asarray(self.r_hat, dtype=complex)
        if self.r_hat.shape != (4, self.grid.n_points):
            raise ValueError("diagonal state needs four coefficient arrays")

    def branch(self, n):
        return self.r_hat[BRANCHES.index(n)]


def diagonalize(state):
    """``R_{+-1} = (u +- W_u)/sqrt 2`` and ``R_{+-2} = (v +- W_v)/sqrt 2``."""
    f = state.fields
    r = SQRT_HALF * np.array([f[0] + f[1], f[0] - f[1],
                              f[2] + f[3], f[2] - f[3]])
    return DiagonalState(state.grid, r)


def undiagonalize(d):
    """Inverse of :func:`diagonalize` (the same orthogonal matrix)."""
    r = d.r_hat
    f = SQRT_HALF * np.array([r[0] + r[1], r[0] - r[1],
                              r[2] + r[3], r[2] - r[3]])
    return KGBState(d.grid, f)


class _Symbols:
    def __init__(self, grid):
        self.grid = grid
        k = grid.k
        self.w1 = omega1(k)
        self.w2 = omega2(k)
        self.mask = grid.nyquist_mask

    def nonlinear(self, y):
        """Nonlinear part of the right-hand side."""
        g = self.grid
        s = inverse_coeffs(y[0] + y[2], g)
        F = dealias(forward_coeffs(s * s, g), g)
        out = np.zeros_like(y)
        out[1] = 1j * self.w1 * F
        out[3] = 1j / self.w2 * F
        return out

    def linear(self, y):
        out = np.empty_like(y)
        out[0] = 1j * self.w1 * y[1]
        out[1] = 1j * self.w1 * y[0]
        out[2] = 1j * self.w2 * y[3]
        out[3] = 1j * self.w2 * y[2]
        return out * self.mask

    def propagator(self, h):
        """Exact linear flow over time ``h`` as a callable."""
        c1, s1 = np.cos(self.w1 * h), 1j * np.sin(self.w1 * h)
        c2, s2 = np.cos(self.w2 * h), 1j * np.sin(self.w2 * h)

        def apply(y):
            out = np.empty_like(y)
            out[0] = c1 * y[0] + s1 * y[1]
            out[1] = s1 * y[0] + c1 * y[1]
            out[2] = c2 * y[2] + s2 * y[3]
            out[3] = s2 * y[2] + c2 * y[3]
            return out
        return apply


def kgb_rhs(state, nonlinear=True):
    """Time derivative of a :class:`KGBState`."""
    sym = _Symbols(state.grid)
    d = sym.linear(state.fields)
    if nonlinear:
        d = d + sym.nonlinear(state.fields)
    return KGBState(state.grid, d)


@dataclass
class KGBTrajectory:
    grid: Grid1D
    times: np.ndarray
    fields: np.ndarray
    dt: float

    def state(self, i):
        return KGBState(self.grid, self.fields[i])

    def index_of(self, t, rtol=1e-12):
        hits = np.flatnonzero(np.abs(self.times - t)
                              <= rtol * max(1.0, abs(t)))
        if hits.size == 0:
            raise KeyError(f"time {t} is not an output time")
        return int(hits[0])


def max_stable_dt(grid, cfl=0.5):
    return cfl / float(np.max(omega2(grid.k)))


def kgb_solve(init, t_end, dt, t_out=None, nonlinear=True):
    """Integrating-factor (Lawson) RK4 solution.

    The linear part is advanced exactly by the rotations
    :math:`e^{\\pm i\\omega h}`; RK4 acts on the nonlinear remainder.  Steps
    are shortened uniformly between output times so each requested time
    is hit exactly.

    Args:
        init: Initial :class:`KGBState`.
        t_end: Final fast time.
        dt: Nominal step; requires ``dt * max omega_2 <= 0.5``.
        t_out: Output times in ``[0, t_end]``; defaults to ``[0, t_end]``.
        nonlinear: Set False to evolve the linear system only.

    Returns:
        A :class:`KGBTrajectory`.

    Raises:
        ConfigurationError: ``dt`` violates the step bound.
        FloatingPointError: the solution blew up.
    """
    grid = init.grid
    if dt <= 0 or dt > max_stable_dt(grid) * (1 + 1e-12):
        raise ConfigurationError(
            f"dt = {dt} violates dt * max omega_2 <= 0.5 "
            f"(limit {max_stable_dt(grid):.4g})")
    times = np.array(sorted({0.0, float(t_end)} if t_out is None
                            else {0.0, *map(float, t_out)}))
    if times[0] < 0 or times[-1] > t_end * (1 + 1e-12):
        raise ValueError("output times must lie in [0, t_end]")

    sym = _Symbols(grid)
    y = init.fields * grid.nyquist_mask
    out = [y.copy()]
    t = 0.0
    cache = {}
    for t_next in times[1:]:
        span = t_next - t
        n = max(1, int(np.ceil(span / dt - 1e-9)))
        h = span / n
        key = round(h, 15)
        if key not in cache:
            cache[key] = (sym.propagator(h), sym.propagator(h / 2))
        full, half = cache[key]
        for _ in range(n):
            if nonlinear:
                y = _lawson_rk4(y, h, full, half, sym.nonlinear)
            else:
                y = full(y)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(
                f"solution became non-finite before t = {t_next:.6g}")
        t = t_next
        out.append(y.copy())
    return KGBTrajectory(grid, times, np.array(out), float(dt))


def _lawson_rk4(y, h, full, half, N):
    k1 = N(y)
    yh = half(y)
    k2 = N(yh + 0.5 * h * half(k1))
    k3 = N(yh + 0.5 * h * k2)
    k4 = N(full(y) + h * half(k3))
    return full(y) + h / 6 * (full(k1) + 2 * half(k2 + k3) + k4)


def first_order_from_time_derivatives(u, du, v, dv, grid):
    """Assemble a :class:`KGBState` from coefficients of ``u, u_t, v, v_t``.

    ``W_u = u_t / (i omega_1)`` with the mean mode set to zero and
    ``W_v = v_t / (i omega_2)``.
    """
    w1 = omega1(grid.k)
    wu = np.zeros_like(du, dtype=complex)
    nz = w1 != 0
    wu[nz] = du[nz] / (1j * w1[nz])
    wv = dv / (1j * omega2(grid.k))
    return KGBState(grid, np.array([u, wu, v, wv]) * grid.nyquist_mask)


def ansatz_initial_data(phi1, phi2, eps, slow_grid, fast_grid, tol=1e-12):
    """First-order KGB data matching a Whitham initial value.

    ``(u, u_t, v, v_t)(x, 0) = (phi1, eps phi2, H(phi1), eps H'(phi1)
    phi2)(eps x)``, with the slow profiles given as samples on
    ``slow_grid`` and interpolated spectrally onto ``fast_grid``.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    scale = max(1.0, float(np.max(np.abs(phi2))))
    if abs(float(np.mean(phi2))) > tol * scale:
        raise ValueError("phi2 must have zero mean")
    h1 = h_derivatives(phi1)[0]
    u = to_fast(phi1, slow_grid, fast_grid)
    du = eps * to_fast(phi2, slow_grid, fast_grid)
    v = to_fast(h_of_u(phi1), slow_grid, fast_grid)
    dv = eps * to_fast(h1 * phi2, slow_grid, fast_grid)
    du[0] = 0.0
    return first_order_from_time_derivatives(u, du, v, dv, fast_grid)


def fast_grid_for(eps, slow_length, dx_max=0.5, refine=1):
    """Smallest power-of-two grid on ``[0, slow_length/eps)`` with
    ``dx <= dx_max``, optionally refined by a factor ``refine``."""
    length = slow_length / eps
    n = 8
    while length / n > dx_max:
        n *= 2
    return Grid1D(n * refine, length)
