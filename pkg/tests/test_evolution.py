import numpy as np
import pytest

from gravdrop.errors import IncompatibleData, NoConvergence
from gravdrop.evolution import (MAX_ORDER, PicardReport, Problem, commutator_coeffs, compatibility,
                                continue_windows, harmonic_extension, initial_window_data, lambda_map,
                                load_checkpoint, next_window_data, picard_solve, proxy_norm,
                                save_checkpoint, taylor_seed, window_data_from_state)
from gravdrop.fields import identity_jacobian
from gravdrop.oracles import hydrostatic_profile

from conftest import breathing_velocity, small_problem


@pytest.fixture(scope="module")
def attractive():
    return small_problem("attractive")


@pytest.fixture(scope="module")
def no_gravity():
    return small_problem("off")


def _radius(grid):
    return np.linalg.norm(grid.points, axis=0)


def _hydrostatic(problem):
    return hydrostatic_profile(problem.eos).h(_radius(problem.grid))


def _zeros_v(grid):
    return np.zeros((3,) + grid.shape)


# -- commutator coefficients ---------------------------------------------------
def test_commutator_top_and_first(no_gravity):
    g = no_gravity.grid
    J0 = identity_jacobian(g)
    W = [breathing_velocity(g), 0.1 * breathing_velocity(g)[[1, 2, 0]]]
    eye = np.eye(3)[:, :, None, None]
    for k in range(3):
        S = commutator_coeffs(W, J0, k)
        np.testing.assert_allclose(S[k], eye * np.ones(g.shape), atol=1e-12)
    S1 = commutator_coeffs(W, J0, 1)
    dW = g.grad(W[0])  # dW[j, i] = d_i W^j
    np.testing.assert_allclose(S1[0], -np.swapaxes(dW, 0, 1), atol=1e-12)


def test_commutator_zero_velocity(no_gravity):
    g = no_gravity.grid
    J0 = identity_jacobian(g)
    S = commutator_coeffs([_zeros_v(g)] * 3, J0, 3)
    for l in range(3):
        assert np.all(S[l] == 0)
    with pytest.raises(ValueError):
        commutator_coeffs([_zeros_v(g)] * 4, J0, MAX_ORDER + 1)
    with pytest.raises(ValueError):
        commutator_coeffs([_zeros_v(g)], J0, 2)


# -- compatibility -------------------------------------------------------------
def test_compatibility_examples(no_gravity):
    g = no_gravity.grid
    z = np.zeros(g.shape)
    c = compatibility(no_gravity, g.points.copy(), z, order=1)
    np.testing.assert_allclose(c.h[1], -3.0 * no_gravity.eos.K, rtol=1e-10)
    rot = np.stack([-g.points[1], g.points[0], z])
    c = compatibility(no_gravity, rot, z, order=2)
    assert np.max(np.abs(c.h[1])) <= 1e-10
    assert c.order == 2
    with pytest.raises(ValueError):
        compatibility(no_gravity, rot, z, order=MAX_ORDER + 1)


def test_compatibility_hydrostatic(attractive):
    c = compatibility(attractive, _zeros_v(attractive.grid), _hydrostatic(attractive), order=2)
    assert max(c.residuals) <= 1e-6
    assert np.max(np.abs(c.V[1])) <= 1e-6


def test_compatibility_strict_and_projection(attractive):
    g = attractive.grid
    h0 = _hydrostatic(attractive) + 0.01 * g.points[2]
    with pytest.raises(IncompatibleData):
        compatibility(attractive, _zeros_v(g), h0, order=1, strict=True)
    c = compatibility(attractive, _zeros_v(g), h0, order=1, project=True)
    assert c.residuals[0] <= 1e-12


def test_harmonic_extension(small_grid):
    g = small_grid
    fb = g.e_r[0] * g.e_r[1] + 0.5
    u = harmonic_extension(g, fb)
    np.testing.assert_allclose(g.boundary_values(u), fb, atol=1e-12)
    np.testing.assert_allclose(g.laplacian(u), 0.0, atol=1e-8)


# -- fixed-point map -----------------------------------------------------------
def _breathing_data(problem, order=2):
    g = problem.grid
    c = compatibility(problem, breathing_velocity(g), _hydrostatic(problem), order=order)
    return initial_window_data(problem, c)


def test_lambda_initial_value_and_admissibility(attractive):
    data = _breathing_data(attractive)
    dt = 0.005
    times = dt * np.arange(5)
    V = taylor_seed(data, times)
    np.testing.assert_allclose(V[0], data.V0)
    V_new, traj = lambda_map(attractive, V, data, times)
    np.testing.assert_allclose(V_new[0], data.V0, atol=0)
    # D_t Lambda[V](0) = V_1 up to O(dt) differences
    d1 = (V_new[1] - V_new[0]) / dt
    err = np.max(np.abs(d1 - data.seed[1]))
    assert err <= 5 * dt * np.max(np.abs(data.seed[2])) + 1e-6
    assert traj.h.shape == (5,) + attractive.grid.shape


def test_lambda_contracts_for_small_window(attractive):
    data = _breathing_data(attractive)
    times = 0.01 * np.arange(6)
    Va = taylor_seed(data, times)
    bump = np.multiply.outer(times**3, breathing_velocity(attractive.grid)[[2, 0, 1]])
    Vb = Va + bump
    La, _ = lambda_map(attractive, Va, data, times)
    Lb, _ = lambda_map(attractive, Vb, data, times)
    g = attractive.grid
    ratio = proxy_norm(g, La - Lb, times) / proxy_norm(g, Va - Vb, times)
    assert ratio < 1.0


def test_proxy_norm(small_grid):
    times = np.linspace(0, 1, 3)
    z = np.zeros((3, 3) + small_grid.shape)
    assert proxy_norm(small_grid, z, times) == 0.0
    one = np.ones_like(z)
    vol = 4 * np.pi / 3
    assert proxy_norm(small_grid, one, times) == pytest.approx(np.sqrt(3 * vol), rel=1e-10)


def test_equilibrium_fixed_point(attractive):
    g = attractive.grid
    c = compatibility(attractive, _zeros_v(g), _hydrostatic(attractive), order=2)
    traj, rep = picard_solve(attractive, initial_window_data(attractive, c), 0.1, 0.02, tol=1e-8)
    assert rep.converged and rep.iterations <= 2
    assert max(g.l2_norm(np.linalg.norm(v, axis=0)) for v in traj.V) <= 1e-5


def test_picard_breathing_converges(attractive):
    traj, rep = picard_solve(attractive, _breathing_data(attractive), 0.1, 0.02, tol=1e-10)
    assert rep.converged
    assert rep.max_ratio < 0.5
    np.testing.assert_allclose(rep.ratios, np.array(rep.distances[1:]) / rep.distances[:-1])
    assert 0 < rep.contraction() <= rep.max_ratio


def test_picard_no_convergence(attractive):
    with pytest.raises(NoConvergence) as info:
        picard_solve(attractive, _breathing_data(attractive), 0.1, 0.02, tol=1e-14, max_iter=2)
    assert len(info.value.distances) == 2
    _, rep = picard_solve(attractive, _breathing_data(attractive), 0.1, 0.02, tol=1e-14, max_iter=2,
                          raise_on_failure=False)
    assert not rep.converged
    with pytest.raises(ValueError):
        picard_solve(attractive, _breathing_data(attractive), 0.1, 0.03)


def test_contraction_metric():
    rep = PicardReport(4, [1.0, 0.1, 0.001, 1e-5], [0.1, 0.01, 0.01], True, 0.1)
    assert rep.max_ratio == 0.1
    assert rep.contraction() == pytest.approx(0.01)
    assert PicardReport(1, [1e-12], [], True, 0.1).contraction() == 0.0


def test_windows_self_consistent(attractive):
    g = attractive.grid
    c = compatibility(attractive, _zeros_v(g), _hydrostatic(attractive), order=2)
    data = initial_window_data(attractive, c)
    two = continue_windows(attractive, data, 0.2, 0.1, 0.02, tol=1e-10)
    one = continue_windows(attractive, data, 0.2, 0.2, 0.02, tol=1e-10)
    assert two.error is None and len(two.reports) == 2
    np.testing.assert_allclose(two.trajectory.times, one.trajectory.times, atol=1e-14)
    assert np.max(np.abs(two.trajectory.h - one.trajectory.h)) <= 1e-6
    assert np.max(np.abs(two.trajectory.V - one.trajectory.V)) <= 1e-6


def test_single_window_matches_picard(attractive):
    data = _breathing_data(attractive)
    res = continue_windows(attractive, data, 0.1, 0.1, 0.02, tol=1e-10)
    traj, _ = picard_solve(attractive, data, 0.1, 0.02, tol=1e-10)
    np.testing.assert_array_equal(res.trajectory.V, traj.V)
    with pytest.raises(ValueError):
        continue_windows(attractive, data, 0.15, 0.1, 0.02)


def test_failure_returns_partial(attractive):
    res = continue_windows(attractive, _breathing_data(attractive), 0.2, 0.1, 0.02, tol=1e-14,
                           max_iter=2)
    assert res.failed_window == 0 and res.trajectory is None
    assert isinstance(res.error, NoConvergence)


def test_next_window_and_checkpoint(attractive, tmp_path):
    traj, _ = picard_solve(attractive, _breathing_data(attractive), 0.1, 0.02, tol=1e-10)
    nxt = next_window_data(traj, attractive)
    assert nxt.t0 == pytest.approx(0.1)
    np.testing.assert_array_equal(nxt.V0, traj.V[-1])
    path = tmp_path / "state.npz"
    save_checkpoint(path, traj.final(), {"window": 0})
    st = load_checkpoint(path)
    for name in ("x", "x_tilde", "V", "h", "dt_h", "phi"):
        np.testing.assert_array_equal(getattr(st, name), getattr(traj.final(), name))
    restart = window_data_from_state(st, attractive)
    np.testing.assert_allclose(restart.seed[1], nxt.seed[1], atol=1e-10)
    bad = tmp_path / "bad.npz"
    np.savez(bad, version=np.array(99), t=np.array(0.0))
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_problem_validation(attractive):
    with pytest.raises(ValueError):
        Problem(attractive.grid, attractive.eos, attractive.smoother, attractive.basis, "sideways")
    p = Problem(attractive.grid, attractive.eos, attractive.smoother, attractive.basis, "off")
    assert p.s_g == 0.0 and p.gravity_sign is None
    phi, grad = p.potential(np.zeros(p.grid.shape), identity_jacobian(p.grid))
    assert np.all(phi == 0) and np.all(grad == 0)
