import numpy as np
import pytest
from scipy.integrate import solve_bvp
from scipy.optimize import brentq

from gravdrop.eos import EquationOfState
from gravdrop.oracles import dirichlet_eigenvalues, hydrostatic_profile, reference_values


def _bvp_equilibrium(K=20.0):
    """Collocation solve for u = r h: u'' = -r exp(u / (r K)), u(0) = u(1) = 0.

    Returns (h(0), -h'(1), mass) with h(0) = u'(0) and h'(1) = u'(1).
    """
    r = np.linspace(0.0, 1.0, 200)

    def rhs(r, y):
        safe = np.where(r > 0, r, 1.0)
        h = np.where(r > 0, y[0] / safe, y[1])
        return np.vstack([y[1], -r * np.exp(h / K)])

    def bc(ya, yb):
        return np.array([ya[0], yb[0]])

    guess = np.vstack([r * (1 - r**2) / 6, (1 - 3 * r**2) / 6])
    sol = solve_bvp(rhs, bc, r, guess, tol=1e-11, max_nodes=100000)
    assert sol.success
    rr = np.linspace(0.0, 1.0, 20001)
    u, du = sol.sol(rr)
    h = np.where(rr > 0, u / np.where(rr > 0, rr, 1.0), du)
    mass = 4 * np.pi * np.trapezoid(np.exp(h / K) * rr**2, rr)
    return float(du[0]), float(-du[-1]), mass


def test_hydrostatic_matches_collocation(reference):
    h_center, margin, mass = _bvp_equilibrium()
    ref = reference["hydrostatic"]
    assert h_center == pytest.approx(ref["h_center"], rel=1e-7)
    assert margin == pytest.approx(ref["taylor_margin"], rel=1e-7)
    assert mass == pytest.approx(ref["mass"], rel=1e-6)


def test_hydrostatic_internal_identities(reference):
    hp = hydrostatic_profile(EquationOfState(20.0, 1.0))
    assert hp.h(1.0) == pytest.approx(0.0, abs=1e-10)
    assert hp.dh(0.0) == pytest.approx(0.0, abs=1e-6)
    # Gauss: the outward flux of -h' equals the enclosed mass / 4 pi
    assert hp.taylor_margin == pytest.approx(hp.mass / (4 * np.pi), rel=1e-10)
    # stiff limit K -> infinity is the uniform ball: h(0) = 1/6
    assert hydrostatic_profile(EquationOfState(1e8)).h_center == pytest.approx(1 / 6, rel=1e-6)


def test_dirichlet_eigenvalues(reference):
    # zeros of j_1 solve tan x = x, zeros of j_2 solve tan x = 3x / (3 - x^2)
    z1 = brentq(lambda x: np.tan(x) - x, 4.0, 4.6)
    z2 = brentq(lambda x: np.tan(x) - 3 * x / (3 - x * x), 5.5, 6.0)
    ev = dirichlet_eigenvalues(2, 3)
    assert ev[0] == pytest.approx(np.pi**2, rel=1e-14)
    assert ev[1] == pytest.approx(z1**2, rel=1e-12)
    assert ev[4] == pytest.approx(z2**2, rel=1e-12)
    np.testing.assert_allclose(ev[:10], reference["dirichlet_eigenvalues"], rtol=1e-12)


def test_frozen_reference_reproduced(reference):
    fresh = reference_values(20.0, 1.0)
    for key in ("h_center", "mass", "taylor_margin"):
        assert fresh["hydrostatic"][key] == pytest.approx(reference["hydrostatic"][key], rel=1e-9)
    pot = reference["uniform_ball_potential"]
    np.testing.assert_allclose(pot["phi"], [0.5, 11 / 24, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(pot["dphi"], [0.0, -1 / 6, -1 / 3], atol=1e-12)
    assert reference["uniform_ball_energy"] == pytest.approx(8 * np.pi / 15, rel=1e-14)
