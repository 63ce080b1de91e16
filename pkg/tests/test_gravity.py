import csv

import numpy as np
import pytest
from scipy.integrate import quad

from gravdrop import gravity as G
from gravdrop.fields import identity_jacobian, jacobian, tilde_laplacian
from gravdrop.grid import BallGrid


def ellipsoid_oracle(axes, X):
    """Interior potential and gradient of a uniform ellipsoid with unit density."""
    a2 = np.asarray(axes, float) ** 2
    D = lambda u: np.sqrt(np.prod(a2 + u))
    I0 = quad(lambda u: 1 / D(u), 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
    Ii = np.array([quad(lambda u, i=i: 1 / ((a2[i] + u) * D(u)), 0, np.inf,
                        epsabs=1e-14, epsrel=1e-13)[0] for i in range(3)])
    pre = np.prod(axes) / 4
    phi = pre * (I0 - np.einsum("i,i...->...", Ii, X**2))
    grad = -2 * pre * Ii.reshape((3,) + (1,) * (X.ndim - 1)) * X
    return phi, grad


def _radius(grid):
    return np.linalg.norm(grid.points, axis=0)


def test_zero_density(small_grid):
    res = G.potential(np.zeros(small_grid.shape), identity_jacobian(small_grid))
    assert np.all(res.phi == 0) and np.all(res.grad == 0)


def test_uniform_ball(grid):
    res = G.potential(np.ones(grid.shape), identity_jacobian(grid))
    r = _radius(grid)
    exact = (3 - r**2) / 6
    assert np.max(np.abs(res.phi - exact)) <= 1e-3
    assert np.max(np.abs(res.grad + grid.points / 3)) <= 1e-3
    o = np.zeros((3, 1))
    e = np.array([[0.0], [0.0], [1.0]])
    assert grid.evaluate(res.phi, o)[0] == pytest.approx(0.5, abs=1e-3)
    assert grid.evaluate(res.phi, e)[0] == pytest.approx(1 / 3, abs=1e-3)
    assert np.all(res.phi > 0)


def test_exterior_probe(small_grid):
    pts = np.array([[0, 0, 2.0], [2.0, 0, 0], [0, -2.0, 0]]).T
    val = G.probe(np.ones(small_grid.shape), identity_jacobian(small_grid), pts)
    np.testing.assert_allclose(val, 1 / 6, atol=1e-6)


def test_radial_oracle_examples():
    r = np.array([0.0, 0.25, 0.5, 1.0])
    phi, dphi = G.radial_potential_oracle(lambda s: np.ones_like(s), r)
    np.testing.assert_allclose(phi, (3 - r**2) / 6, atol=1e-12)
    assert dphi[2] == pytest.approx(-1 / 6, abs=1e-12)
    z, dz = G.radial_potential_oracle(lambda s: 0.0 * s, r)
    assert np.all(z == 0) and np.all(dz == 0)


def test_radial_oracle_two_shells():
    # rho = 2 on r < 0.5 and 1 outside is a unit ball plus a ball of radius 1/2
    r = np.linspace(0, 1, 41)
    phi, dphi = G.radial_potential_oracle(lambda s: np.where(s < 0.5, 2.0, 1.0), r, breakpoints=(0.5,))
    exact = G.homogeneous_ball_potential(r) + G.homogeneous_ball_potential(r, radius=0.5)
    np.testing.assert_allclose(phi, exact, atol=1e-10)


def test_radial_consistency_and_refinement():
    errs = []
    for g in (BallGrid(8, 6), BallGrid(16, 8)):
        r = _radius(g)
        res = G.potential(np.exp(-2 * r**2), identity_jacobian(g))
        ph, dph = G.radial_potential_oracle(lambda s: np.exp(-2 * s * s), r.ravel())
        errs.append(np.max(np.abs(res.phi.ravel() - ph)) / np.max(ph))
    assert errs[1] <= 1e-3
    assert errs[1] <= errs[0]


def test_linearity(small_grid, rng):
    g = small_grid
    J = jacobian(g, g.points + 0.02 * np.sin(g.points[[1, 2, 0]]))
    a, b = rng.random((2,) + g.shape)
    pa, pb = G.potential(a, J).phi, G.potential(b, J).phi
    pc = G.potential(2 * a - 3 * b, J).phi
    assert np.max(np.abs(pc - (2 * pa - 3 * pb))) <= 1e-12 * np.max(np.abs(pc))


@pytest.mark.parametrize("method", ["series", "pairsum"])
def test_translation_covariance(small_grid, method):
    g = small_grid
    warp = g.points + 0.01 * np.sin(g.points[[1, 2, 0]])
    rho = np.exp(-np.sum(g.points**2, axis=0))
    p0 = G.potential(rho, jacobian(g, warp), method).phi
    shift = np.array([0.3, -0.2, 0.1])[:, None, None]
    p1 = G.potential(rho, jacobian(g, warp + shift), method).phi
    assert np.max(np.abs(p1 - p0)) <= 1e-9 * np.max(np.abs(p0))


@pytest.mark.parametrize("shape", [(12, 8), (24, 8)])
def test_series_matches_ellipsoid(shape):
    g = BallGrid(*shape)
    axes = np.array([1.1, 0.95, 1.0])
    X = axes[:, None, None] * g.points
    J = jacobian(g, X)
    phi, grad = ellipsoid_oracle(axes, X)
    res = G.potential(np.ones(g.shape), J)
    assert res.diagnostics["method"] == "series"
    assert np.max(np.abs(res.phi - phi)) / np.max(phi) <= 1e-5
    assert np.max(np.abs(res.grad - grad)) / np.max(np.abs(grad)) <= 1e-5


def test_pairsum_matches_ellipsoid(small_grid):
    g = small_grid
    axes = np.array([1.1, 0.95, 1.0])
    X = axes[:, None, None] * g.points
    phi, grad = ellipsoid_oracle(axes, X)
    res = G.potential(np.ones(g.shape), jacobian(g, X), "pairsum")
    assert res.diagnostics["method"] == "pairsum"
    assert np.max(np.abs(res.phi - phi)) / np.max(phi) <= 2e-3
    assert np.max(np.abs(res.grad - grad)) / np.max(np.abs(grad)) <= 0.1


def test_auto_switches_on_strain(small_grid):
    g = small_grid
    big = jacobian(g, np.array([1.5, 1.0, 1.0])[:, None, None] * g.points)
    assert G.max_strain(big) == pytest.approx(0.5)
    assert G.potential(np.ones(g.shape), big).diagnostics["method"] == "pairsum"
    with pytest.raises(ValueError):
        G.potential(np.ones(g.shape), big, method="fmm")


def test_poisson_identity_under_refinement():
    errs = []
    for g in (BallGrid(8, 6), BallGrid(12, 8)):
        axes = np.array([1.05, 0.98, 1.0])
        J = jacobian(g, axes[:, None, None] * g.points)
        rho = np.ones(g.shape)
        phi = G.potential(rho, J).phi
        errs.append(np.max(np.abs(tilde_laplacian(phi, J) + rho)))
    assert errs[1] <= 1e-4


def test_dump_ray_csv(small_grid, tmp_path):
    g = small_grid
    res = G.potential(np.ones(g.shape), identity_jacobian(g))
    path = tmp_path / "ray.csv"
    G.dump_ray_csv(path, g, res.phi, res.grad, n=11)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 12
    r, phi, dphi = map(float, rows[6])
    assert phi == pytest.approx((3 - r * r) / 6, abs=1e-6)
    assert dphi == pytest.approx(-r / 3, abs=1e-6)
