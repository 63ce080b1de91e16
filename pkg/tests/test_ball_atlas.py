import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravdrop import ball_atlas as atlas
from gravdrop.errors import UnderResolved

from conftest import random_ball

AT = atlas.build_atlas(96, 24)
coord = st.floats(-0.99, 0.99)


def test_chart_center_maps_to_face_center():
    for ch in AT.charts:
        np.testing.assert_allclose(ch.phi(0.0, 0.0), ch.center, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(coord, coord, st.integers(0, 5))
def test_psi_on_unit_sphere(z1, z2, mu):
    p = AT.charts[mu].psi(z1, z2, 1.0)
    assert abs(np.linalg.norm(p) - 1.0) < 1e-14


def test_partition_of_unity(rng):
    pts = random_ball(rng, 1000)
    assert np.max(np.abs(AT.partition_sum(pts) - 1.0)) <= 1e-12


def test_partition_on_sphere_and_centre():
    d = np.array([[1.0, 0, 0], [0, 0, 0], [0.6, 0.8, 0]]).T
    np.testing.assert_allclose(AT.partition_sum(d), 1.0, atol=1e-12)


def test_adjacent_charts_overlap():
    # face edge midpoint between +x and +y faces
    p = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    chi = AT.boundary_cutoffs(p[:, None])[:, 0]
    assert chi[0] > 0.1 and chi[2] > 0.1


def test_chart_weight_positive():
    z = np.linspace(-0.9, 0.9, 7)
    for ch in AT.charts:
        assert np.all(ch.weight(z, z[::-1], 0.5) > 0)


def test_low_resolution_rejected():
    with pytest.raises(ValueError):
        atlas.build_atlas(4, 24)
    with pytest.raises(UnderResolved):
        atlas.build_atlas(16, 24)


def test_rotation_field_value():
    np.testing.assert_allclose(atlas.tangential_field("O12", np.array([1.0, 0, 0])), [0, 1, 0])


def test_flat_fields_vanish_in_collar(rng):
    pts = random_ball(rng, 200)
    r = np.linalg.norm(pts, axis=0)
    pts = pts[:, r >= 0.5]
    for t in ("d1", "d2", "d3"):
        assert np.all(atlas.tangential_field(t, pts) == 0.0)


def test_fields_tangent_on_sphere(rng):
    p = rng.standard_normal((3, 200))
    p /= np.linalg.norm(p, axis=0)
    for t in atlas.TANGENTIAL_IDS:
        assert np.max(np.abs(np.sum(atlas.tangential_field(t, p) * p, axis=0))) <= 1e-14


def test_family_spans_tangent_space(rng):
    p = rng.standard_normal((3, 50))
    p /= np.linalg.norm(p, axis=0)
    T = np.stack([atlas.tangential_field(t, p) for t in atlas.TANGENTIAL_IDS])  # (6, 3, n)
    for k in range(p.shape[1]):
        assert np.linalg.matrix_rank(T[:, :, k], tol=1e-10) == 2
    y = 0.1 * p
    T = np.stack([atlas.tangential_field(t, y) for t in atlas.TANGENTIAL_IDS])
    for k in range(p.shape[1]):
        assert np.linalg.matrix_rank(T[:, :, k], tol=1e-10) == 3


def test_unknown_field():
    with pytest.raises(KeyError):
        atlas.tangential_field("O99", np.zeros(3))


def test_extension_coefficients_s1():
    # Vandermonde oracle: l0 + l1 = 1, -l0 - 2 l1 = 1
    lam = atlas.extension_coefficients(1)
    np.testing.assert_allclose(lam, np.linalg.solve([[1, 1], [-1, -2]], [1, 1]), atol=1e-14)
    np.testing.assert_allclose(lam, [3, -2], atol=1e-14)


def test_extension_order_limit():
    with pytest.raises(ValueError):
        atlas.extension_coefficients(5)


def test_extension_matches_radial_derivatives():
    Ef = atlas.extend_profile(lambda r: r**2, 2)
    h = 1e-3
    r = 1.0 + h * np.arange(4)
    v = Ef(r)
    d1 = (-11 * v[0] + 18 * v[1] - 9 * v[2] + 2 * v[3]) / (6 * h)
    d2 = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
    assert abs(d1 - 2.0) < 1e-6
    assert abs(d2 - 2.0) < 1e-3


def test_extension_support():
    for s in range(5):
        Ef = atlas.extend_profile(lambda r: 1 + r, s)
        assert Ef(1.0 + 1.0 / (2 + 2 * s) + 1e-9) == 0.0


def test_extend_zero_linear_and_reproducing(small_grid, rng):
    g = small_grid
    probe = random_ball(rng, 40) * 1.45
    assert np.all(atlas.extend(g, np.zeros(g.shape), 2, probe) == 0.0)
    f1, f2 = np.cos(g.points[0]), g.points[1] ** 2 + g.points[2]
    lhs = atlas.extend(g, 2 * f1 - 3 * f2, 3, probe)
    rhs = 2 * atlas.extend(g, f1, 3, probe) - 3 * atlas.extend(g, f2, 3, probe)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)
    nodes = g.points.reshape(3, -1)[:, ::37]
    np.testing.assert_allclose(atlas.extend(g, f1, 2, nodes), f1.reshape(-1)[::37], atol=1e-12)


def test_extend_outside_enlarged_ball(small_grid):
    with pytest.raises(ValueError):
        atlas.extend(small_grid, np.zeros(small_grid.shape), 1, np.array([[1.6], [0], [0]]))
