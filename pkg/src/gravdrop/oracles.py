"""
Independent reference solutions used to pin tolerances.

* ``hydrostatic_profile``: radial equilibrium of a self-gravitating ball with
  the attractive sign, h'' + 2 h'/r = -rho(h), h'(0) = 0, h(1) = 0, found by
  shooting on h(0).
* ``radial_potential``: Newtonian potential of a radial density by 1D
  quadrature (re-exported from the gravity module).
* ``dirichlet_eigenvalues``: squared zeros of the spherical Bessel functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .gravity import homogeneous_ball_potential, radial_potential_oracle
from .wave import spherical_bessel_zeros


@dataclass
class HydrostaticProfile:
    """Radial equilibrium enthalpy with dense output.

    Attributes
    ----------
    h_center : float
    mass : float
        Total mass int rho dx.
    taylor_margin : float
        -h'(1) = mass / (4 pi).
    """

    h_center: float
    mass: float
    taylor_margin: float
    _sol: object

    def _eval(self, r, row):
        r = np.asarray(r, float)
        return self._sol.sol(np.clip(r, 0.0, 1.0).ravel())[row].reshape(r.shape)

    def h(self, r):
        return self._eval(r, 0)

    def dh(self, r):
        return self._eval(r, 1)


def _shoot(eos, hc: float, rtol: float = 1e-12, atol: float = 1e-14):
    r0 = 1e-6
    rho_c = float(eos.density_of_enthalpy(hc))
    # series start: h = hc - rho_c r^2 / 6
    y0 = [hc - rho_c * r0**2 / 6.0, -rho_c * r0 / 3.0, rho_c * r0**3 / 3.0]

    def rhs(r, y):
        rho = eos.density_of_enthalpy(y[0])
        return [y[1], -rho - 2.0 * y[1] / r, rho * r * r]

    # third component accumulates int rho r^2 dr
    return solve_ivp(rhs, (r0, 1.0), y0, method="DOP853", rtol=rtol, atol=atol, dense_output=True)


def hydrostatic_profile(eos) -> HydrostaticProfile:
    """Shooting solution of the attractive-sign equilibrium on the unit ball."""
    def miss(hc):
        return _shoot(eos, hc, rtol=1e-10, atol=1e-12).y[0, -1]

    hi = 1.0 / 6.0
    while miss(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("hydrostatic shooting failed to bracket")
    hc = brentq(miss, 0.0, hi, xtol=1e-15, rtol=1e-14)
    sol = _shoot(eos, hc)
    mass = 4.0 * np.pi * sol.y[2, -1]
    return HydrostaticProfile(hc, mass, -sol.y[1, -1], sol)


def dirichlet_eigenvalues(L_max: int, n_max: int) -> np.ndarray:
    """Sorted Dirichlet eigenvalues k_{ln}^2 of the unit ball (with multiplicity)."""
    vals = []
    for l in range(L_max + 1):
        k = spherical_bessel_zeros(l, n_max)
        vals.extend(list(np.repeat(k**2, 2 * l + 1)))
    return np.sort(np.array(vals))


def reference_values(K: float = 20.0, rho_bar: float = 1.0) -> dict:
    """All oracle numbers consumed by the tests."""
    from .eos import EquationOfState

    eos = EquationOfState(K=K, rho_bar=rho_bar)
    hp = hydrostatic_profile(eos)
    r = np.array([0.0, 0.5, 1.0])
    phi, dphi = radial_potential_oracle(lambda s: np.ones_like(s), r)
    return {
        "uniform_ball_potential": {"r": r.tolist(), "phi": phi.tolist(), "dphi": dphi.tolist(),
                                   "analytic": homogeneous_ball_potential(r).tolist()},
        "uniform_ball_energy": 8.0 * np.pi / 15.0,
        "hydrostatic": {"K": K, "rho_bar": rho_bar, "h_center": hp.h_center, "mass": hp.mass,
                        "taylor_margin": hp.taylor_margin},
        "dirichlet_eigenvalues": dirichlet_eigenvalues(2, 3)[:10].tolist(),
        "first_eigenvalue": float(np.pi**2),
    }


def write_reference(path, **kw) -> dict:
    ref = reference_values(**kw)
    with open(path, "w") as fh:
        json.dump(ref, fh, indent=2, sort_keys=True)
    return ref
