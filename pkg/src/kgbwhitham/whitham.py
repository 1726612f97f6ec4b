"""Whitham modulation system, slaving relation, improved ansatz and
residuals.

The slow amplitudes satisfy the conservation-law system

.. math::

    \\partial_T U = \\partial_X W, \\qquad
    \\partial_T W = \\partial_X \\mathcal F(U), \\qquad
    \\mathcal F(U) = U + (U + H(U))^2 = U - 2H(U),

where :math:`V = H(U) = -(1+U) + \\sqrt{1+2U}` is the root of
:math:`2V + U^2 + 2UV + V^2 = 0` with :math:`H(0) = 0`.

Every time derivative needed by the ansatz and its residual is expanded
through the Whitham equations (chain rule up to fourth order), so no
numerical time differentiation enters the residual measurement.
"""

from dataclasses import dataclass

import numpy as np

from .spectral import (Grid1D, antiderivative_coeffs, dealias, embed_coeffs,
                       forward_coeffs, inverse_coeffs)

#: Upper bound on sup|U| kept by the Whitham solver.
U_BOUND = 3.0 / 8.0


class WhithamRegimeError(RuntimeError):
    """The slow solution left the small-amplitude regime."""


class DomainError(ValueError):
    """A closed-form expression was evaluated outside its domain."""


def _check_discriminant(U, limit=-0.5):
    U = np.asarray(U, dtype=float)
    bad = np.flatnonzero(~(U > limit))
    if bad.size:
        i = int(bad[0])
        raise DomainError(
            f"U = {U.flat[i]:.6g} at grid index {i} is outside the domain "
            f"U > {limit}")
    return U


def h_of_u(U):
    """Slaved Klein-Gordon amplitude :math:`V = -(1+U) + \\sqrt{1+2U}`.

    The difference is rewritten as :math:`-U^2/(1+U+\\sqrt{1+2U})` to avoid
    cancellation for small ``U``.
    """
    U = _check_discriminant(U)
    r = np.sqrt(1.0 + 2.0 * U)
    return -U * U / (1.0 + U + r)


def h_derivatives(U):
    """First to fourth derivatives of :math:`H` at ``U``."""
    U = _check_discriminant(U)
    q = 1.0 + 2.0 * U
    r = np.sqrt(q)
    h1 = -1.0 + 1.0 / r
    h2 = -1.0 / (q * r)
    h3 = 3.0 / (q * q * r)
    h4 = -15.0 / (q * q * q * r)
    return h1, h2, h3, h4


def flux(U):
    """Whitham flux :math:`\\mathcal F(U) = U + U^2 + 2UH + H^2`."""
    V = h_of_u(U)
    return U + U * U + 2 * U * V + V * V


def _faa_di_bruno(d, jet):
    """Time derivatives 1..4 of ``g(U(T))`` given ``d = (g', g'', g''', g'''')``
    and ``jet = (U_T, U_TT, U_TTT, U_TTTT)``; shorter jets give fewer
    orders."""
    g1, g2, g3, g4 = d
    out = []
    u1 = jet[0]
    out.append(g1 * u1)
    if len(jet) > 1:
        u2 = jet[1]
        out.append(g2 * u1 ** 2 + g1 * u2)
    if len(jet) > 2:
        u3 = jet[2]
        out.append(g3 * u1 ** 3 + 3 * g2 * u1 * u2 + g1 * u3)
    if len(jet) > 3:
        u4 = jet[3]
        out.append(g4 * u1 ** 4 + 6 * g3 * u1 ** 2 * u2
                   + g2 * (3 * u2 ** 2 + 4 * u1 * u3) + g1 * u4)
    return out


@dataclass
class WhithamState:
    """Slow fields on the X-grid (physical samples)."""

    grid: Grid1D
    U: np.ndarray
    W: np.ndarray

    def check(self):
        umax = float(np.max(np.abs(self.U)))
        if not umax < U_BOUND:
            raise WhithamRegimeError(f"sup|U| = {umax:.4g} >= {U_BOUND}")
        mean_w = abs(float(np.mean(self.W)))
        if mean_w > 1e-10 * max(1.0, float(np.max(np.abs(self.W)))):
            raise ValueError(f"W must have zero mean, got {mean_w:.3g}")


class _Deriv:
    """Spectral X-derivatives on a fixed grid."""

    def __init__(self, grid):
        self.grid = grid
        self.ik = np.where(grid.nyquist_mask, 1j * grid.k, 0.0)

    def __call__(self, f, order=1):
        c = forward_coeffs(f, self.grid)
        return inverse_coeffs(c * self.ik ** order, self.grid)


def whitham_rhs(state):
    """Time derivative ``(dU/dT, dW/dT)`` of a :class:`WhithamState`."""
    grid = state.grid
    ik = np.where(grid.nyquist_mask, 1j * grid.k, 0.0)
    w_hat = forward_coeffs(state.W, grid)
    f_hat = dealias(forward_coeffs(flux(state.U), grid), grid)
    return (inverse_coeffs(ik * w_hat, grid),
            inverse_coeffs(ik * f_hat, grid))


@dataclass
class WhithamTrajectory:
    """Slow fields at a sorted list of output times."""

    grid: Grid1D
    times: np.ndarray
    U: np.ndarray
    W: np.ndarray
    dt: float

    def index_of(self, T, rtol=1e-12):
        hits = np.flatnonzero(np.abs(self.times - T)
                              <= rtol * max(1.0, abs(T)))
        if hits.size == 0:
            raise KeyError(f"slow time {T} is not an output time")
        return int(hits[0])

    def state_at(self, T):
        i = self.index_of(T)
        return WhithamState(self.grid, self.U[i], self.W[i])


def _rk4_step(U, W, h, grid):
    s = WhithamState(grid, U, W)
    k1 = whitham_rhs(s)
    k2 = whitham_rhs(WhithamState(grid, U + 0.5 * h * k1[0],
                                  W + 0.5 * h * k1[1]))
    k3 = whitham_rhs(WhithamState(grid, U + 0.5 * h * k2[0],
                                  W + 0.5 * h * k2[1]))
    k4 = whitham_rhs(WhithamState(grid, U + h * k3[0], W + h * k3[1]))
    U = U + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    W = W + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return U, W


def whitham_solve(phi1, phi2, grid, T0, dt, t_out=None):
    """Classical RK4 solution of the Whitham system.

    The initial data are ``U = phi1`` and ``dU/dT = phi2``, hence
    ``W = antiderivative(phi2)``.  Steps are shortened uniformly between
    consecutive output times so every requested time is hit exactly.

    Args:
        phi1: Initial ``U`` samples on ``grid``.
        phi2: Initial ``dU/dT`` samples; must have zero mean.
        grid: The slow periodic grid.
        T0: Final slow time.
        dt: Nominal step.
        t_out: Output times in ``[0, T0]``; defaults to ``[0, T0]``.

    Returns:
        A :class:`WhithamTrajectory`.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    p2_hat = forward_coeffs(phi2, grid)
    if abs(p2_hat[0]) * grid.dk > 1e-12 * max(1.0, np.max(np.abs(phi2))):
        raise ValueError("phi2 must have zero mean")
    if dt <= 0 or T0 < 0:
        raise ValueError("need dt > 0 and T0 >= 0")
    times = np.array(sorted({0.0, float(T0)} if t_out is None
                            else {0.0, *map(float, t_out)}))
    if times[-1] > T0 * (1 + 1e-12) or times[0] < 0:
        raise ValueError("output times must lie in [0, T0]")

    U = phi1.copy()
    W = inverse_coeffs(antiderivative_coeffs(p2_hat, grid), grid)
    WhithamState(grid, U, W).check()
    out_u, out_w = [U.copy()], [W.copy()]
    T = 0.0
    for T_next in times[1:]:
        span = T_next - T
        n = max(1, int(np.ceil(span / dt - 1e-9)))
        h = span / n
        for i in range(n):
            U, W = _rk4_step(U, W, h, grid)
            umax = float(np.max(np.abs(U)))
            if not umax < U_BOUND:
                raise WhithamRegimeError(
                    f"sup|U| = {umax:.4g} reached {U_BOUND} at "
                    f"T = {T + (i + 1) * h:.6g}")
        T = T_next
        out_u.append(U.copy())
        out_w.append(W.copy())
    return WhithamTrajectory(grid, times, np.array(out_u), np.array(out_w),
                             float(dt))


def slow_jets(U, W, grid):
    """Analytic slow-time jets of the ansatz fields at one instant.

    Returns a dict with the slow fields ``U, V, V2`` and their first and
    second T-derivatives (``U_T``, ``U_TT``, ``V_T``, ..., ``V2_TT``).  The
    correction is

    .. math::

        V_2 = \\frac{\\partial_X^2 V - \\partial_T^2 V}{2(1 + U + V)},

    where :math:`1 + U + V = \\sqrt{1+2U} > 0`.
    """
    dX = _Deriv(grid)
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    h1, h2, h3, h4 = h_derivatives(U)
    # derivatives of the flux U - 2H(U)
    fder = (1.0 - 2.0 * h1, -2 * h2, -2 * h3, -2 * h4)

    # U_{n+1} = d_X W_n, W_{n+1} = d_X (F o U)_n
    w_jet = [W]
    u_jet = []
    for n in range(4):
        u_jet.append(dX(w_jet[n]))
        if n < 3:
            fn = flux(U) if n == 0 else _faa_di_bruno(fder, u_jet[:n])[n - 1]
            w_jet.append(dX(fn))
    U1, U2, U3, U4 = u_jet

    V = h_of_u(U)
    V1, V2t, V3, V4 = _faa_di_bruno(h_derivatives(U), u_jet)

    D = 2.0 * np.sqrt(1.0 + 2.0 * U)
    if not np.all(D > 0):
        raise DomainError("1 + U + V is not positive")
    D1 = 2.0 * (U1 + V1)
    D2 = 2.0 * (U2 + V2t)
    N0 = dX(V, 2) - V2t
    N1 = dX(V1, 2) - V3
    N2 = dX(V2t, 2) - V4
    C = N0 / D
    C1 = (N1 - C * D1) / D
    C2 = (N2 - 2 * C1 * D1 - C * D2) / D
    return {
        "U": U, "U_T": U1, "U_TT": U2,
        "V": V, "V_T": V1, "V_TT": V2t,
        "V2": C, "V2_T": C1, "V2_TT": C2,
    }


def residual_slow(jets, grid, eps):
    """Residuals of the improved ansatz as functions of the slow variable.

    With :math:`X = \\varepsilon x` the fast residuals are
    ``Res(x) = res_slow(eps * x)``, where

    .. math::

        \\mathrm{Res}_u = \\varepsilon^4 \\partial_X^2\\big(\\partial_T^2 U
            + 2(U+V)V_2\\big) + \\varepsilon^6 \\partial_X^2 V_2^2,
        \\qquad
        \\mathrm{Res}_v = \\varepsilon^4\\big(-\\partial_T^2 V_2
            + \\partial_X^2 V_2 - V_2^2\\big).

    The lower orders cancel identically by the slaving relation, the
    Whitham equations and the choice of :math:`V_2`.
    """
    dX = _Deriv(grid)
    U, V, C = jets["U"], jets["V"], jets["V2"]
    res_u = (eps ** 4 * dX(jets["U_TT"] + 2 * (U + V) * C, 2)
             + eps ** 6 * dX(C * C, 2))
    res_v = eps ** 4 * (-jets["V2_TT"] + dX(C, 2) - C * C)
    return res_u, res_v


def residual_direct(jets, grid, eps):
    """Residuals from the unexpanded definitions, as an oracle for
    :func:`residual_slow`.

    Evaluates :math:`-\\partial_t^2 u + \\partial_x^2 u + \\partial_x^2
    \\partial_t^2 u + \\partial_x^2 (u+v)^2` and :math:`-\\partial_t^2 v +
    \\partial_x^2 v - 2v - (u+v)^2` on the ansatz with
    :math:`\\partial_t = \\varepsilon\\partial_T`,
    :math:`\\partial_x = \\varepsilon\\partial_X`.  Cancellation makes this
    form lose digits for small ``eps``.
    """
    dX = _Deriv(grid)
    e2 = eps * eps
    u = jets["U"]
    u_tt = e2 * jets["U_TT"]
    v = jets["V"] + e2 * jets["V2"]
    v_tt = e2 * (jets["V_TT"] + e2 * jets["V2_TT"])
    res_u = (-u_tt + e2 * dX(u, 2) + e2 * dX(u_tt, 2)
             + e2 * dX((u + v) ** 2, 2))
    res_v = -v_tt + e2 * dX(v, 2) - 2 * v - (u + v) ** 2
    return res_u, res_v


@dataclass
class AnsatzFields:
    """Improved ansatz on the fast grid at one fast time.

    Coefficient arrays (density normalization of the fast grid) for
    ``psi_u = U(eps x)``, ``psi_v = V(eps x) + eps^2 V2(eps x)`` and their
    fast-time derivatives, plus the slow jets they came from.
    """

    eps: float
    t: float
    grid: Grid1D
    slow_grid: Grid1D
    psi_u: np.ndarray
    psi_v: np.ndarray
    dpsi_u: np.ndarray
    dpsi_v: np.ndarray
    plain_v: np.ndarray
    jets: dict


def to_fast(field_slow, slow_grid, fast_grid):
    """Coefficients on the fast grid of ``x -> field_slow(eps x)``."""
    return embed_coeffs(forward_coeffs(field_slow, slow_grid), slow_grid,
                        fast_grid)


def build_ansatz(traj, eps, t, fast_grid):
    """Improved ansatz at fast time ``t`` from a Whitham trajectory that
    contains the slow time ``eps * t`` as an output time."""
    state = traj.state_at(eps * t)
    jets = slow_jets(state.U, state.W, traj.grid)
    g = traj.grid
    e2 = eps * eps
    return AnsatzFields(
        eps=eps, t=t, grid=fast_grid, slow_grid=g,
        psi_u=to_fast(jets["U"], g, fast_grid),
        psi_v=to_fast(jets["V"] + e2 * jets["V2"], g, fast_grid),
        dpsi_u=eps * to_fast(jets["U_T"], g, fast_grid),
        dpsi_v=eps * to_fast(jets["V_T"] + e2 * jets["V2_T"], g, fast_grid),
        plain_v=to_fast(jets["V"], g, fast_grid),
        jets=jets,
    )


@dataclass
class ResidualReport:
    eps: float
    t: float
    res_u_h1: float
    res_v_h1: float
    res_u_weighted: float
    res_v_weighted: float
    res_v_sup: float
    res_u_mean: float

    def to_dict(self):
        return dict(self.__dict__)


class ResidualConsistencyError(RuntimeError):
    """The mean mode of the u-residual did not vanish."""


def residual(ans, eps, s=1):
    """Fast-grid residual fields and their norms.

    Returns ``(res_u_hat, res_v_hat, report)``.  The weighted norms apply
    :math:`\\omega_1^{-1}` and :math:`\\omega_2^{-1}`; the former only after
    checking that the mean mode of ``Res_u`` vanishes.
    """
    from .dispersion import omega1, omega2
    from .spectral import sobolev_norm_coeffs

    slow_grid = ans.slow_grid
    res_u, res_v = residual_slow(ans.jets, slow_grid, eps)
    fg = ans.grid
    ru = to_fast(res_u, slow_grid, fg)
    rv = to_fast(res_v, slow_grid, fg)
    nu = float(sobolev_norm_coeffs(ru, fg, s, "derivative"))
    nv = float(sobolev_norm_coeffs(rv, fg, s, "derivative"))
    mean = abs(ru[0]) * np.sqrt(2 * np.pi * fg.dk)
    if mean > 1e-10 * max(nu, 1e-300):
        raise ResidualConsistencyError(
            f"mean mode of Res_u is {mean:.3g} against norm {nu:.3g}")
    k = fg.k
    inv_w1 = np.zeros_like(k)
    nz = k != 0
    inv_w1[nz] = 1.0 / omega1(k[nz])
    wu = float(sobolev_norm_coeffs(ru * inv_w1, fg, s, "derivative"))
    wv = float(sobolev_norm_coeffs(rv / omega2(k), fg, s, "derivative"))
    report = ResidualReport(eps, ans.t, nu, nv, wu, wv,
                            float(np.max(np.abs(res_v))), float(mean))
    return ru, rv, report


def default_profiles(grid, amplitude=0.05, sigma=None, center=None,
                     velocity=1.0):
    """Gaussian initial profiles on the slow torus.

    ``phi1`` is a Gaussian bump of height ``amplitude`` and width
    ``sigma`` (default ``length/16``), shifted to zero mean.  ``phi2`` is
    ``-velocity`` times its X-derivative, which launches a mostly
    right-moving pulse and has zero mean automatically.
    """
    L = grid.length
    sigma = L / 16 if sigma is None else sigma
    center = L / 2 if center is None else center
    X = grid.x
    bump = amplitude * np.exp(-((X - center) / sigma) ** 2)
    phi1 = bump - bump.mean()
    phi2 = velocity * 2 * (X - center) / sigma ** 2 * bump
    phi2 = phi2 - phi2.mean()
    return phi1, phi2
