"""
Newtonian self-gravity of the deformed drop.

The potential in Lagrangian labels is

    phi(y) = 1/(4 pi) int rho(y') kappa~(y') / |x~(y) - x~(y')| dy'.

with f = rho kappa~.  ``Phi`` denotes the flat Newtonian potential in label
space, evaluated exactly per spherical harmonic through the Laplace
expansion of 1/|y - y'| with precomputed radial Green matrices.  Two
evaluations of the deformed potential are provided.

``series`` (near-identity maps)
    With u = x~ - y, expanding the kernel in u(y) - u(y') gives
    phi(x~(y)) = sum_k (-1)^k / k! Q_k(x~(y)),
    Q_k = d_{b1..bk} Phi[u_b1 .. u_bk f],
    each Q_k continued from y to x~(y) by its Taylor polynomial.  Truncated at
    total order N the error is O(|grad u|^{N+1}); only flat operators and
    spectral derivatives are used, so the result is consistent with the
    grid's derivatives.  The default N = 3: the next term differentiates
    four times and its roundoff at the innermost radial nodes outweighs its
    truncation gain on fine grids.  The expansion is taken about the mean displacement,
    so translations of the map leave phi unchanged.

``pairsum`` (any invertible map)
    phi = Phi[f] + C[f], where the kernel 1/|x~ - x~'| - 1/|y - y'| of C is
    summed directly over node pairs, excluding the self pair and adding the
    analytic integral over a volume-equivalent ball around the target node.
    Accurate to leading order in the cell size only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import quad

from .grid import BallGrid, lagrange_matrix

FOUR_PI = 4.0 * np.pi


def _fibonacci_directions(n: int = 96) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    t = np.pi * (1.0 + 5**0.5) * k
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(t), s * np.sin(t), z], axis=1)


_DIRS = _fibonacci_directions()


@numba.njit(cache=True, fastmath=True)
def _correction_sum(X, Y, fw, self_term):
    """Punctured sum of fw_k (K(x~_m - x~_k) - K(y_m - y_k)) with K = 1/(4 pi |.|).

    Also returns the punctured sums of the kernel gradients, in x~ for the
    first kernel and in y for the second.
    """
    n = X.shape[0]
    phi = np.zeros(n)
    gx = np.zeros((n, 3))
    gy = np.zeros((n, 3))
    c = 1.0 / (4.0 * np.pi)
    x0 = X[:, 0].copy()
    x1 = X[:, 1].copy()
    x2 = X[:, 2].copy()
    y0 = Y[:, 0].copy()
    y1 = Y[:, 1].copy()
    y2 = Y[:, 2].copy()
    w = fw.copy()
    for m in range(n):
        s = 0.0
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        b0 = 0.0
        b1 = 0.0
        b2 = 0.0
        # the self pair is masked by a zero weight
        wm = w[m]
        w[m] = 0.0
        xm0, xm1, xm2 = x0[m], x1[m], x2[m]
        ym0, ym1, ym2 = y0[m], y1[m], y2[m]
        x0[m] += 1.0
        y0[m] += 1.0
        for k in range(n):
            dx = xm0 - x0[k]
            dy = xm1 - x1[k]
            dz = xm2 - x2[k]
            ex = ym0 - y0[k]
            ey = ym1 - y1[k]
            ez = ym2 - y2[k]
            id_ = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            ie = 1.0 / np.sqrt(ex * ex + ey * ey + ez * ez)
            s += w[k] * (id_ - ie)
            cd = w[k] * id_ * id_ * id_
            ce = w[k] * ie * ie * ie
            a0 -= cd * dx
            a1 -= cd * dy
            a2 -= cd * dz
            b0 -= ce * ex
            b1 -= ce * ey
            b2 -= ce * ez
        w[m] = wm
        x0[m] = xm0
        y0[m] = ym0
        phi[m] = s * c + self_term[m]
        gx[m, 0] = a0 * c
        gx[m, 1] = a1 * c
        gx[m, 2] = a2 * c
        gy[m, 0] = b0 * c
        gy[m, 1] = b1 * c
        gy[m, 2] = b2 * c
    return phi, gx, gy


@numba.njit(cache=True)
def _direct_sum(P, X, fw):
    n = P.shape[0]
    out = np.zeros(n)
    for m in range(n):
        s = 0.0
        for k in range(X.shape[0]):
            dx = P[m, 0] - X[k, 0]
            dy = P[m, 1] - X[k, 1]
            dz = P[m, 2] - X[k, 2]
            s += fw[k] / np.sqrt(dx * dx + dy * dy + dz * dz)
        out[m] = s / (4.0 * np.pi)
    return out


def _radial_quadrature(r: float, n_gauss: int = 40):
    """Nodes and weights for int_0^r and int_r^1 (geometric panels away from 0)."""
    x, w = leggauss(n_gauss)
    lo_s = 0.5 * r * (x + 1.0)
    lo_w = 0.5 * r * w
    edges = [r]
    while edges[-1] < 1.0:
        edges.append(min(1.0, 2.0 * edges[-1]) if edges[-1] > 0 else 1.0)
    hi_s, hi_w = [np.zeros(0)], [np.zeros(0)]
    for a, b in zip(edges[:-1], edges[1:]):
        hi_s.append(a + 0.5 * (b - a) * (x + 1.0))
        hi_w.append(0.5 * (b - a) * w)
    return lo_s, lo_w, np.concatenate(hi_s), np.concatenate(hi_w)


class NewtonOperator:
    """Flat Newtonian potential on a ball grid via the Laplace expansion.

    For each degree l the coefficient profile of Phi[g] is
    phi_l(r) = (2l+1)^{-1} int_0^1 G_l(r, s) g_l(s) s^2 ds with
    G_l = r_<^l / r_>^{l+1}; ``Q[l]`` and ``dQ[l]`` map nodal profiles of
    g_l to phi_l and phi_l' at the radial nodes.
    """

    def __init__(self, grid: BallGrid):
        self.grid = grid
        self.Q, self.dQ = self._green_rows(grid.r)

    def _green_rows(self, radii):
        grid = self.grid
        L = grid.l_max
        ls = np.arange(L + 1)[:, None]
        Q = np.zeros((L + 1, len(radii), grid.n_r))
        dQ = np.zeros_like(Q)
        for i, r in enumerate(radii):
            if r <= 0.0:
                x, w = leggauss(40)
                s = 0.5 * (x + 1.0)
                Ls = lagrange_matrix(grid.r, s, grid.bary)
                Q[0, i] = (w * 0.5 * s) @ Ls
                continue
            lo_s, lo_w, hi_s, hi_w = _radial_quadrature(r)
            L_lo = lagrange_matrix(grid.r, lo_s, grid.bary)
            L_hi = lagrange_matrix(grid.r, hi_s, grid.bary)
            g_lo = lo_s[None] ** ls / r ** (ls + 1) * lo_s**2
            g_hi = r**ls / hi_s[None] ** (ls + 1) * hi_s**2
            dg_lo = -(ls + 1) * lo_s[None] ** ls / r ** (ls + 2) * lo_s**2
            dg_hi = ls * r ** np.maximum(ls - 1, 0) / hi_s[None] ** (ls + 1) * hi_s**2
            norm = 1.0 / (2 * ls + 1)
            Q[:, i] = norm * ((g_lo * lo_w) @ L_lo + (g_hi * hi_w) @ L_hi)
            dQ[:, i] = norm * ((dg_lo * lo_w) @ L_lo + (dg_hi * hi_w) @ L_hi)
        return Q, dQ

    def _apply(self, mats, a):
        out = np.empty_like(a)
        for l in range(self.grid.l_max + 1):
            sl = slice(l * l, (l + 1) * (l + 1))
            out[..., sl] = np.einsum("ij,...jk->...ik", mats[l], a[..., sl])
        return out

    def coefficients(self, g: np.ndarray):
        a = self.grid.analysis(g)
        return self._apply(self.Q, a), self._apply(self.dQ, a)

    def potential(self, g: np.ndarray) -> np.ndarray:
        return self.grid.synthesis(self.coefficients(g)[0])

    def potential_and_gradient(self, g: np.ndarray):
        c, dc = self.coefficients(g)
        return self.grid.synthesis(c), self.grid.grad_from_coeffs(c, dc)

    def gradient(self, g: np.ndarray) -> np.ndarray:
        return self.potential_and_gradient(g)[1]

    def hessian(self, g: np.ndarray) -> np.ndarray:
        """``H[i, j] = d_j d_i Phi[g]``."""
        return self.grid.grad(self.gradient(g))

    def at_radii(self, g: np.ndarray, radii, directions: np.ndarray) -> np.ndarray:
        """Phi[g] at points radii[k] * directions[:, k] with radii in [0, 1]."""
        from .grid import real_sph_harm

        radii = np.atleast_1d(np.asarray(radii, float))
        d = np.asarray(directions, float).reshape(3, -1)
        Q, _ = self._green_rows(radii)
        a = self.grid.analysis(g)
        theta = np.arccos(np.clip(d[2], -1, 1))
        phi = np.arctan2(d[1], d[0])
        Y = real_sph_harm(self.grid.l_max, theta, phi)
        out = np.zeros(len(radii))
        for l in range(self.grid.l_max + 1):
            sl = slice(l * l, (l + 1) * (l + 1))
            prof = Q[l] @ a[:, sl]  # (n_points, 2l+1)
            out += np.sum(prof * Y[:, sl], axis=1)
        return out


_OPERATORS: dict = {}


def newton_operator(grid: BallGrid) -> NewtonOperator:
    key = (grid.n_r, grid.l_max, grid.n_theta)
    if key not in _OPERATORS:
        _OPERATORS[key] = NewtonOperator(grid)
    return _OPERATORS[key]


@dataclass
class PotentialResult:
    """Potential, its smoothed-frame gradient and quadrature diagnostics."""

    phi: np.ndarray
    grad: np.ndarray
    self_fraction: float = 0.0
    correction_norm: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def cell_radius(grid: BallGrid) -> np.ndarray:
    """Volume-equivalent radius (3 w / 4 pi)^{1/3} of each node's quadrature weight."""
    return (3.0 * grid.weights / FOUR_PI) ** (1.0 / 3.0)


def _self_term(f, A, a_cell):
    # int over |d| < a of (1/|A d| - 1/|d|) dd / (4 pi) = a^2/2 (<1/|A e|> - 1)
    M = np.moveaxis(A, (0, 1), (-2, -1))  # (..., 3, 3)
    Ae = np.einsum("...ij,kj->...ki", M, _DIRS)
    mean_inv = np.mean(1.0 / np.linalg.norm(Ae, axis=-1), axis=-1)
    return f * 0.5 * a_cell**2 * (mean_inv - 1.0)


SERIES_ORDER = 3
SERIES_MAX_STRAIN = 0.2


def _divergence_power(grid: BallGrid, T: np.ndarray, k: int) -> np.ndarray:
    # contract d_{b1..bk} against the k leading tensor indices of T
    for _ in range(k):
        D = grid.grad(T)  # D[..., b, c] = d_c T[..., b]
        T = np.trace(D, axis1=D.ndim - 4, axis2=D.ndim - 3)
    return T


def _frozen_taylor(grid: BallGrid, q: np.ndarray, u: np.ndarray, order: int) -> np.ndarray:
    # sum_m (u . d)^m q / m! with u held fixed at each node
    out = q.copy()
    D = q
    fact = 1.0
    for m in range(1, order + 1):
        D = grid.grad(D)  # leading m derivative indices
        fact *= m
        C = D
        for _ in range(m):
            C = np.einsum("i...,i...->...", u, C)
        out = out + C / fact
    return out


def series_potential(f: np.ndarray, u: np.ndarray, grid: BallGrid,
                     order: int = SERIES_ORDER) -> np.ndarray:
    """phi(y + u(y)) for the density ``f`` (already weighted by kappa~).

    Parameters
    ----------
    f : ndarray
        Mass density per unit label volume.
    u : ndarray, shape (3, ...)
        Displacement x~ - y.
    order : int
        Total truncation order N in u.
    """
    op = newton_operator(grid)
    phi = np.zeros(grid.shape)
    T = np.asarray(f, float)
    fact = 1.0
    for k in range(order + 1):
        if k:
            T = u.reshape((3,) + (1,) * (k - 1) + grid.shape) * T[None]
            fact *= k
        Qk = _divergence_power(grid, op.potential(T), k)
        phi += (-1) ** k / fact * _frozen_taylor(grid, Qk, u, order - k)
    return phi


def max_strain(J) -> float:
    """Largest spectral norm of grad x~ - I over the nodes."""
    M = np.moveaxis(J.A, (0, 1), (-2, -1)) - np.eye(3)
    return float(np.max(np.linalg.norm(M, ord=2, axis=(-2, -1))))


def potential(rho: np.ndarray, J, method: str = "auto",
              order: int = SERIES_ORDER) -> PotentialResult:
    """Gravitational potential and its gradient d~phi for density ``rho``.

    Parameters
    ----------
    rho : ndarray
        Density at the grid nodes, shape (n_r, n_ang).
    J : Jacobian
        Jacobian of the smoothed map (supplies x~ and kappa~).
    method : {"auto", "series", "pairsum"}
        ``auto`` uses the series when the strain is below
        ``SERIES_MAX_STRAIN`` and the pair sum otherwise.
    order : int
        Truncation order of the series.
    """
    grid = J.grid
    f = np.asarray(rho, float) * J.kappa
    op = newton_operator(grid)
    if J.is_identity:
        phi, grad_y = op.potential_and_gradient(f)
        return PotentialResult(phi, grad_y)
    if method not in ("auto", "series", "pairsum"):
        raise ValueError(f"unknown gravity method {method!r}")
    strain = max_strain(J)
    if method == "series" or (method == "auto" and strain < SERIES_MAX_STRAIN):
        u = J.x - grid.points
        # phi only sees differences of x~: expand about the mean displacement
        u = u - np.array([grid.integrate(c) for c in u])[:, None, None] / grid.integrate(np.ones(grid.shape))
        phi = series_potential(f, u, grid, order)
        grad = np.einsum("aipq,apq->ipq", J.Ainv, grid.grad(phi))
        return PotentialResult(phi, grad, diagnostics={"method": "series", "strain": strain,
                                                       "order": order})
    phi, grad_y = op.potential_and_gradient(f)
    # flat part is a function of y; its x~ gradient follows the chain rule
    grad = np.einsum("aipq,apq->ipq", J.Ainv, grad_y)
    X = np.ascontiguousarray(J.x.reshape(3, -1).T)
    Y = np.ascontiguousarray(grid.points.reshape(3, -1).T)
    fw = (f * grid.weights).ravel()
    self_term = _self_term(f, J.A, cell_radius(grid)).ravel()
    c_phi, gx, gy = _correction_sum(X, Y, fw, self_term)
    c_phi = c_phi.reshape(grid.shape)
    gx = gx.T.reshape((3,) + grid.shape)
    gy = gy.T.reshape((3,) + grid.shape)
    # d~ of the deformed kernel is direct; the flat kernel term is a function of y
    c_grad = gx - np.einsum("aipq,apq->ipq", J.Ainv, gy)
    phi = phi + c_phi
    grad = grad + c_grad
    denom = np.sqrt(grid.inner(phi, phi)) or 1.0
    return PotentialResult(
        phi,
        grad,
        self_fraction=float(np.sqrt(grid.inner(self_term.reshape(grid.shape),
                                               self_term.reshape(grid.shape))) / denom),
        correction_norm=float(np.sqrt(grid.inner(c_phi, c_phi)) / denom),
        diagnostics={"method": "pairsum", "strain": strain},
    )


def probe(rho: np.ndarray, J, points: np.ndarray) -> np.ndarray:
    """Potential at arbitrary Eulerian points by direct summation (diagnostic).

    Accurate for probes at distance of several cells from the drop, e.g.
    exterior points.
    """
    grid = J.grid
    fw = (np.asarray(rho, float) * J.kappa * grid.weights).ravel()
    X = np.ascontiguousarray(J.x.reshape(3, -1).T)
    P = np.ascontiguousarray(np.asarray(points, float).reshape(3, -1).T)
    return _direct_sum(P, X, fw)


def radial_potential_oracle(rho, r, breakpoints=()):
    """Potential of a spherically symmetric density on the unit ball.

    phi(r) = r^{-1} int_0^r rho s^2 ds + int_r^1 rho s ds,
    phi'(r) = -r^{-2} int_0^r rho s^2 ds.

    Parameters
    ----------
    rho : callable or ndarray
        Density profile ``rho(s)``; an array is taken as nodal values at
        ``r`` and interpolated linearly.
    r : array_like
        Evaluation radii in [0, 1].
    breakpoints : sequence of float
        Radii where ``rho`` jumps (integration panel edges).

    Returns
    -------
    phi, dphi : ndarray
    """
    r = np.atleast_1d(np.asarray(r, float))
    if not callable(rho):
        vals = np.asarray(rho, float)
        nodes = r.copy()
        rho = lambda s: np.interp(s, nodes, vals)
        breakpoints = tuple(breakpoints) + tuple(nodes)
    cuts = sorted(set([0.0, 1.0] + [b for b in breakpoints if 0.0 < b < 1.0]))

    def integral(g, a, b):
        pts = [a] + [c for c in cuts if a < c < b] + [b]
        return sum(quad(g, p, q, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
                   for p, q in zip(pts[:-1], pts[1:]))

    phi = np.empty_like(r)
    dphi = np.empty_like(r)
    for k, rk in enumerate(r):
        inner = integral(lambda s: rho(s) * s * s, 0.0, rk)
        outer = integral(lambda s: rho(s) * s, rk, 1.0)
        phi[k] = (inner / rk if rk > 0 else 0.0) + outer
        dphi[k] = -inner / rk**2 if rk > 0 else 0.0
    return phi, dphi


def homogeneous_ball_potential(r, density: float = 1.0, radius: float = 1.0):
    """Potential of a uniform ball: rho (3R^2 - r^2)/6 inside, rho R^3/(3 r) outside."""
    r = np.asarray(r, float)
    inside = density * (3.0 * radius**2 - r**2) / 6.0
    outside = density * radius**3 / (3.0 * np.where(r > 0, r, 1.0))
    return np.where(r <= radius, inside, outside)


def dump_ray_csv(path, grid: BallGrid, phi: np.ndarray, grad: np.ndarray,
                 direction=(0.0, 0.0, 1.0), n: int = 101) -> None:
    """Write (r, phi, phi') along a ray from the centre."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    r = np.linspace(0.0, 1.0, n)
    pts = d[:, None] * r[None]
    vals = grid.evaluate(phi, pts)
    dr = np.einsum("i,ip->p", d, grid.evaluate(grad, pts))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "phi", "dphi_dr"])
        for row in zip(r, vals, dr):
            w.writerow([repr(float(v)) for v in row])
