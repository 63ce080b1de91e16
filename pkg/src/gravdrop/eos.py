"""
Barotropic equation of state for a near-incompressible liquid.

The default law is the linear family p = K (rho - rho_bar).  The enthalpy
h(rho) = int_{rho_bar}^{rho} p'(s)/s ds vanishes at the free surface, and
e(h) = log rho(h) is affine in h, so e' = 1/K and every higher derivative
of e vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError


def _check_density(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~(rho > 0)):
        raise DomainError("density must be strictly positive")
    return rho


@dataclass(frozen=True)
class EquationOfState:
    """Linear liquid law ``p = K (rho - rho_bar)``.

    Parameters
    ----------
    K : float
        Stiffness (pressure per unit density).  ``1/K`` bounds ``e'(h)``.
    rho_bar : float
        Density at the free surface, where the pressure vanishes.
    """

    K: float = 20.0
    rho_bar: float = 1.0

    def __post_init__(self):
        if not self.K > 0:
            raise DomainError("K must be positive")
        if not self.rho_bar > 0:
            raise DomainError("rho_bar must be positive (liquid)")

    @property
    def delta0(self) -> float:
        return 1.0 / self.K

    def pressure(self, rho):
        rho = _check_density(rho)
        return self.K * (rho - self.rho_bar)

    def enthalpy_of_density(self, rho):
        rho = _check_density(rho)
        return self.K * np.log(rho / self.rho_bar)

    def density_of_enthalpy(self, h):
        return self.rho_bar * np.exp(np.asarray(h, dtype=float) / self.K)

    def e_of_h(self, h):
        return np.log(self.rho_bar) + np.asarray(h, dtype=float) / self.K

    def e_prime(self, h):
        return np.full(np.shape(h), 1.0 / self.K) if np.ndim(h) else 1.0 / self.K

    def e_second(self, h):
        return np.zeros(np.shape(h)) if np.ndim(h) else 0.0

    def Q_of_density(self, rho):
        """Internal energy density ``Q = 2 int p / rho^2``, normalized by ``Q(rho_bar) = 0``."""
        rho = _check_density(rho)
        return 2.0 * self.K * (np.log(rho / self.rho_bar) + self.rho_bar / rho - 1.0)

    def Q_prime(self, rho):
        rho = _check_density(rho)
        return 2.0 * self.pressure(rho) / rho**2


class CallableEOS:
    """Equation of state from a user-supplied pressure law.

    The enthalpy, its inverse and ``Q`` are obtained by adaptive quadrature
    and root finding, so this is meant for tests and small grids.

    Parameters
    ----------
    pressure : callable
        Strictly increasing ``p(rho)`` with ``p(rho_bar) = 0``.
    rho_bar : float
    dp : callable, optional
        ``p'(rho)``; central differences are used when omitted.
    """

    def __init__(self, pressure: Callable, rho_bar: float, dp: Callable | None = None):
        if not rho_bar > 0:
            raise DomainError("rho_bar must be positive (liquid)")
        self._p = pressure
        self.rho_bar = float(rho_bar)
        if dp is None:
            def dp(r, _p=pressure):
                d = 1e-6 * max(r, 1.0)
                return (_p(r + d) - _p(r - d)) / (2 * d)
        self._dp = dp

    def pressure(self, rho):
        rho = _check_density(rho)
        return np.vectorize(self._p, otypes=[float])(rho)

    def _h_scalar(self, rho):
        return quad(lambda s: self._dp(s) / s, self.rho_bar, rho)[0]

    def enthalpy_of_density(self, rho):
        rho = _check_density(rho)
        return np.vectorize(self._h_scalar, otypes=[float])(rho)

    def _rho_scalar(self, h):
        lo, hi = self.rho_bar, self.rho_bar
        while self._h_scalar(lo) > h:
            lo *= 0.5
        while self._h_scalar(hi) < h:
            hi *= 2.0
        if lo == hi:
            return lo
        return brentq(lambda r: self._h_scalar(r) - h, lo, hi, xtol=1e-14)

    def density_of_enthalpy(self, h):
        return np.vectorize(self._rho_scalar, otypes=[float])(h)

    def e_of_h(self, h):
        return np.log(self.density_of_enthalpy(h))

    def e_prime(self, h):
        # d log rho / dh = 1 / p'(rho) * rho / rho = 1 / p'(rho)
        rho = self.density_of_enthalpy(h)
        return 1.0 / np.vectorize(self._dp, otypes=[float])(rho)

    def e_second(self, h, dh: float = 1e-4):
        h = np.asarray(h, dtype=float)
        return (self.e_prime(h + dh) - self.e_prime(h - dh)) / (2 * dh)

    def Q_of_density(self, rho):
        rho = _check_density(rho)
        f = lambda r: 2.0 * quad(lambda s: self._p(s) / s**2, self.rho_bar, r)[0]
        return np.vectorize(f, otypes=[float])(rho)

    def Q_prime(self, rho):
        rho = _check_density(rho)
        return 2.0 * self.pressure(rho) / rho**2
