import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import smooth_real_coeffs
from kgbwhitham.dispersion import BRANCHES, omega, omega1, omega2
from kgbwhitham.kgb import (ConfigurationError, DiagonalState, KGBState,
                            diagonalize, fast_grid_for,
                            first_order_from_time_derivatives, kgb_rhs,
                            kgb_solve, max_stable_dt, ansatz_initial_data,
                            undiagonalize)
from kgbwhitham.spectral import (Grid1D, dealias, forward_coeffs,
                                 inverse_coeffs)
from kgbwhitham.whitham import default_profiles

G = Grid1D(64, 64.0)
seeds = st.integers(0, 2 ** 32 - 1)


def random_state(grid, rng, scale=0.05, width=6):
    """Real u, v, u_t, v_t of sup-norm ``scale``; W_v is then imaginary in
    physical space."""
    parts = []
    for _ in range(4):
        c = smooth_real_coeffs(grid, rng, width)
        parts.append(scale * c / np.max(np.abs(inverse_coeffs(c, grid))))
    u, du, v, dv = parts
    du[0] = 0.0
    return first_order_from_time_derivatives(u, du, v, dv, grid)


def test_zero_state_zero_rhs():
    assert np.all(kgb_rhs(KGBState.zeros(G)).fields == 0)


def test_linear_rhs_is_rotation_of_diagonal_variables(rng):
    s = random_state(G, rng)
    d = diagonalize(kgb_rhs(s, nonlinear=False))
    r = diagonalize(s).r_hat
    for i, n in enumerate(BRANCHES):
        np.testing.assert_allclose(d.r_hat[i], 1j * omega(n, G.k) * r[i]
                                   * G.nyquist_mask, atol=1e-14)


@given(seeds)
def test_second_order_reconstruction(seed):
    rng = np.random.default_rng(seed)
    s = random_state(G, rng, scale=0.01)
    d = kgb_rhs(s)
    k = G.k
    u_tt = 1j * omega1(k) * d.wu_hat
    v_tt = 1j * omega2(k) * d.wv_hat
    # oracle: the second-order equations with F computed in physical space
    phys = inverse_coeffs(s.u_hat, G) + inverse_coeffs(s.v_hat, G)
    F = dealias(forward_coeffs(phys ** 2, G), G)
    m = G.nyquist_mask
    ref_u = -(k ** 2 / (1 + k ** 2)) * (s.u_hat + F) * m
    ref_v = (-(k ** 2 + 2) * s.v_hat - F) * m
    scale = np.max(np.abs(ref_v))
    assert np.max(np.abs(u_tt * m - ref_u)) < 1e-10 * scale
    assert np.max(np.abs(v_tt * m - ref_v)) < 1e-10 * scale


def test_zero_trajectory():
    traj = kgb_solve(KGBState.zeros(G), 5.0, 0.1)
    assert np.all(traj.fields == 0)


def test_cfl_precondition():
    with pytest.raises(ConfigurationError):
        kgb_solve(KGBState.zeros(G), 1.0, 2 * max_stable_dt(G))


@pytest.mark.parametrize("branch_field", [0, 2])
def test_linear_phase(branch_field):
    j0 = 3
    k0 = j0 * G.dk
    f = np.zeros((4, 64), dtype=complex)
    # a single diagonal mode R_{+n}: equal parts in field and W
    f[branch_field, j0] = 1.0
    f[branch_field + 1, j0] = 1.0
    t = 50.0
    traj = kgb_solve(KGBState(G, f), t, 0.05, nonlinear=False)
    w = omega1(k0) if branch_field == 0 else omega2(k0)
    got = traj.fields[-1, branch_field, j0]
    assert abs(got - np.exp(1j * w * t)) < 1e-9


def test_linear_exactness_all_branches(rng):
    s = random_state(G, rng)
    t = 13.7
    traj = kgb_solve(s, t, 0.1, nonlinear=False)
    r0 = diagonalize(s).r_hat
    r1 = diagonalize(traj.state(1)).r_hat
    for i, n in enumerate(BRANCHES):
        np.testing.assert_allclose(r1[i], np.exp(1j * omega(n, G.k) * t)
                                   * r0[i], atol=1e-13)


def test_self_convergence_order_four(rng):
    s = random_state(G, rng, scale=0.1, width=8)
    ends = [kgb_solve(s, 10.0, dt).fields[-1] for dt in (0.12, 0.06, 0.03)]
    e1 = np.max(np.abs(ends[0] - ends[1]))
    e2 = np.max(np.abs(ends[1] - ends[2]))
    assert np.log2(e1 / e2) == pytest.approx(4.0, abs=0.3)


def test_hermitian_symmetry_preserved(rng):
    s = random_state(G, rng, scale=0.02)
    assert s.hermitian_defect() < 1e-14
    traj = kgb_solve(s, 30.0, 0.1, [10.0, 20.0, 30.0])
    assert max(traj.state(i).hermitian_defect()
               for i in range(len(traj.times))) < 1e-12


def test_blow_up_is_reported(rng):
    s = random_state(G, rng, scale=0.3, width=8)
    with pytest.raises(FloatingPointError):
        with np.errstate(all="ignore"):
            kgb_solve(s, 30.0, 0.05, [10.0, 20.0, 30.0])


def test_output_times():
    traj = kgb_solve(KGBState.zeros(G), 3.0, 0.07, [0.5, 1.25, 3.0])
    assert list(traj.times) == [0.0, 0.5, 1.25, 3.0]
    assert traj.index_of(1.25) == 2
    with pytest.raises(KeyError):
        traj.index_of(2.0)


# ---------------------------------------------------------------------------
# initial data and diagonalization


SLOW = Grid1D(256, 2 * np.pi * 8)


def test_ansatz_data_zero():
    z = np.zeros(256)
    fg = fast_grid_for(0.1, SLOW.length)
    assert np.all(ansatz_initial_data(z, z, 0.1, SLOW, fg).fields == 0)


def test_ansatz_data_without_velocity():
    phi1, _ = default_profiles(SLOW)
    fg = fast_grid_for(0.1, SLOW.length)
    s = ansatz_initial_data(phi1, np.zeros(256), 0.1, SLOW, fg)
    assert np.all(s.wu_hat == 0) and np.all(s.wv_hat == 0)
    assert s.hermitian_defect() < 1e-14


def test_ansatz_data_time_derivatives():
    eps = 0.1
    phi1, phi2 = default_profiles(SLOW)
    fg = fast_grid_for(eps, SLOW.length)
    s = ansatz_initial_data(phi1, phi2, eps, SLOW, fg)
    u_t = inverse_coeffs(1j * omega1(fg.k) * s.wu_hat, fg)
    np.testing.assert_allclose(u_t[::4], eps * phi2, atol=1e-12)
    v_t = inverse_coeffs(1j * omega2(fg.k) * s.wv_hat, fg)
    h1 = -1 + 1 / np.sqrt(1 + 2 * phi1)
    np.testing.assert_allclose(v_t[::4], eps * h1 * phi2, atol=1e-12)


def test_ansatz_data_rejects_mean():
    phi1, phi2 = default_profiles(SLOW)
    fg = fast_grid_for(0.1, SLOW.length)
    with pytest.raises(ValueError):
        ansatz_initial_data(phi1, phi2 + 0.01, 0.1, SLOW, fg)


def test_diagonalize_examples():
    z = KGBState.zeros(G)
    assert np.all(diagonalize(z).r_hat == 0)
    f = np.zeros((4, 64), dtype=complex)
    f[0, 3] = 1.0
    d = diagonalize(KGBState(G, f))
    assert d.branch(1)[3] == pytest.approx(1 / np.sqrt(2))
    assert d.branch(-1)[3] == pytest.approx(1 / np.sqrt(2))


@given(seeds)
def test_diagonalize_round_trip(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((4, 64)) + 1j * rng.standard_normal((4, 64))
    back = undiagonalize(diagonalize(KGBState(G, f))).fields
    assert np.max(np.abs(back - f)) < 1e-14 * np.max(np.abs(f)) * 10
    d = diagonalize(KGBState(G, f)).r_hat
    # orthogonal: the pointwise Euclidean norm is preserved
    np.testing.assert_allclose(np.sum(np.abs(d) ** 2, axis=0),
                               np.sum(np.abs(f) ** 2, axis=0), rtol=1e-13)


def test_klein_gordon_pair_conjugate():
    rng = np.random.default_rng(3)
    d = diagonalize(random_state(G, rng))
    mirror = (-G.index) % 64
    m = G.nyquist_mask
    np.testing.assert_allclose(d.branch(-2)[m], np.conj(d.branch(2)[mirror])[m],
                               atol=1e-15)


def test_state_shape_validation():
    with pytest.raises(ValueError):
        KGBState(G, np.zeros((3, 64)))
    with pytest.raises(ValueError):
        DiagonalState(G, np.zeros((4, 32)))


@pytest.mark.parametrize("eps, n", [(0.1, 1024), (0.05, 2048),
                                    (0.025, 4096), (0.0125, 8192)])
def test_fast_grid_sizes(eps, n):
    g = fast_grid_for(eps, SLOW.length)
    assert g.n_points == n and g.dx <= 0.5
    assert fast_grid_for(eps, SLOW.length, refine=2).n_points == 2 * n
