"""
Pseudospectral discretization of the closed unit ball.

Nodes are a tensor product of Gauss-Legendre radial nodes on (0, 1) and a
Gauss-Legendre x uniform angular grid.  Angular transforms use orthonormal
real spherical harmonics up to degree ``l_max``; the angular grid is
oversampled by 3/2 so that quadratic products of band-limited fields are
projected without aliasing.

Array conventions
-----------------
scalar field : shape (n_r, n_ang)
vector field : shape (3, n_r, n_ang)
boundary field (values at r = 1) : shape (n_ang,)
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import sph_legendre_p


def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def real_sph_harm(l_max: int, theta, phi, derivatives: bool = False):
    """Orthonormal real spherical harmonics at the given directions.

    Returns ``Y`` of shape (n_points, (l_max+1)**2).  With ``derivatives``
    also returns ``dY/dtheta`` and ``(1/sin theta) dY/dphi``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    n_lm = (l_max + 1) ** 2
    Y = np.empty((theta.size, n_lm))
    if derivatives:
        Yt = np.empty_like(Y)
        Yp = np.empty_like(Y)
        sin_t = np.sin(theta)
    sq2 = np.sqrt(2.0)
    for l in range(l_max + 1):
        for m in range(l + 1):
            if derivatives:
                P, dP = sph_legendre_p(l, m, theta, diff_n=1)
            else:
                P = sph_legendre_p(l, m, theta)
            if m == 0:
                Y[:, lm_index(l, 0)] = P
                if derivatives:
                    Yt[:, lm_index(l, 0)] = dP
                    Yp[:, lm_index(l, 0)] = 0.0
                continue
            c, s = np.cos(m * phi), np.sin(m * phi)
            Y[:, lm_index(l, m)] = sq2 * P * c
            Y[:, lm_index(l, -m)] = sq2 * P * s
            if derivatives:
                Yt[:, lm_index(l, m)] = sq2 * dP * c
                Yt[:, lm_index(l, -m)] = sq2 * dP * s
                # P_l^m / sin(theta) is regular for m >= 1
                Ps = P / sin_t
                Yp[:, lm_index(l, m)] = -m * sq2 * Ps * s
                Yp[:, lm_index(l, -m)] = m * sq2 * Ps * c
    if derivatives:
        return Y, Yt, Yp
    return Y


def degrees(l_max: int) -> np.ndarray:
    """Degree ``l`` of every column of the harmonic tables."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(l_max + 1)])


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # scaled product, avoids overflow for large node counts
    w = 1.0 / np.prod(diff * (2.0 / (x.max() - x.min() + 1e-300)), axis=1)
    return w / np.abs(w).max()


def lagrange_matrix(nodes: np.ndarray, points, weights=None) -> np.ndarray:
    """Interpolation matrix from values at ``nodes`` to ``points``."""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    if weights is None:
        weights = barycentric_weights(nodes)
    diff = points[:, None] - nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    terms = weights[None, :] / diff
    M = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    M[rows] = exact[rows].astype(float)
    return M


def differentiation_matrix(nodes: np.ndarray, weights=None) -> np.ndarray:
    if weights is None:
        weights = barycentric_weights(nodes)
    n = nodes.size
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (weights[None, :] / weights[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    D[np.arange(n), np.arange(n)] = -D.sum(axis=1)
    return D


class BallGrid:
    """Tensor-product pseudospectral grid on the unit ball."""

    def __init__(self, n_radial: int = 24, l_max: int = 15, n_theta: int | None = None):
        if n_radial < 2 or l_max < 1:
            raise ValueError("need n_radial >= 2 and l_max >= 1")
        self.n_r = int(n_radial)
        self.l_max = int(l_max)
        xr, wr = leggauss(self.n_r)
        self.r = 0.5 * (xr + 1.0)
        self.w_r = 0.5 * wr

        self.n_theta = int(n_theta or int(np.ceil(1.5 * (self.l_max + 1))))
        self.n_phi = 2 * self.n_theta
        xt, wt = leggauss(self.n_theta)
        self.theta = np.arccos(xt[::-1])
        wt = wt[::-1]
        self.phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        T, P = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.ang_theta = T.ravel()
        self.ang_phi = P.ravel()
        self.n_ang = self.ang_theta.size
        self.w_ang = np.outer(wt, np.full(self.n_phi, 2.0 * np.pi / self.n_phi)).ravel()

        st, ct = np.sin(self.ang_theta), np.cos(self.ang_theta)
        sp, cp = np.sin(self.ang_phi), np.cos(self.ang_phi)
        self.e_r = np.stack([st * cp, st * sp, ct])
        self.e_theta = np.stack([ct * cp, ct * sp, -st])
        self.e_phi = np.stack([-sp, cp, np.zeros_like(sp)])

        self.Y, self.Y_theta, self.Y_phi = real_sph_harm(
            self.l_max, self.ang_theta, self.ang_phi, derivatives=True
        )
        self.n_lm = self.Y.shape[1]
        self.ell = degrees(self.l_max)
        self._analysis = self.w_ang[:, None] * self.Y

        self.bary = barycentric_weights(self.r)
        self.D_r = differentiation_matrix(self.r, self.bary)
        self.to_boundary = lagrange_matrix(self.r, [1.0], self.bary)[0]
        self.d_boundary = self.to_boundary @ self.D_r

        self.weights = (self.r**2 * self.w_r)[:, None] * self.w_ang[None, :]
        self.shape = (self.n_r, self.n_ang)
        self.n_nodes = self.n_r * self.n_ang

    # -- geometry ---------------------------------------------------------
    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (3, n_r, n_ang)."""
        return self.r[None, :, None] * self.e_r[:, None, :]

    @property
    def boundary_points(self) -> np.ndarray:
        return self.e_r

    def radius(self) -> np.ndarray:
        return np.broadcast_to(self.r[:, None], self.shape)

    def __repr__(self) -> str:
        return f"BallGrid(n_radial={self.n_r}, l_max={self.l_max}, nodes={self.n_nodes})"

    # -- transforms ---------------------------------------------------------
    def analysis(self, f: np.ndarray) -> np.ndarray:
        """Harmonic coefficients per radial layer, shape (..., n_r, n_lm)."""
        return f @ self._analysis

    def synthesis(self, a: np.ndarray) -> np.ndarray:
        return a @ self.Y.T

    def filter(self, f: np.ndarray) -> np.ndarray:
        """Project onto harmonics of degree <= l_max."""
        return self.synthesis(self.analysis(f))

    # -- calculus ---------------------------------------------------------
    def grad_from_coeffs(self, a: np.ndarray, da_dr: np.ndarray | None = None) -> np.ndarray:
        """Cartesian gradient from harmonic coefficients and, optionally, their exact radial derivative."""
        if da_dr is None:
            da_dr = np.einsum("ij,...jk->...ik", self.D_r, a)
        f_r = self.synthesis(da_dr)
        inv_r = (1.0 / self.r)[:, None]
        f_t = (a @ self.Y_theta.T) * inv_r
        f_p = (a @ self.Y_phi.T) * inv_r
        er, et, ep = self.e_r, self.e_theta, self.e_phi
        return np.stack([er[c] * f_r + et[c] * f_t + ep[c] * f_p for c in range(3)], axis=-3)

    def grad(self, f: np.ndarray) -> np.ndarray:
        """Cartesian gradient of a scalar (or stack of scalars): (..., 3, n_r, n_ang)."""
        return self.grad_from_coeffs(self.analysis(f))

    def div(self, q: np.ndarray) -> np.ndarray:
        """Flat divergence of a vector field of shape (3, n_r, n_ang)."""
        g = self.grad(q)  # (3, 3, n_r, n_ang): g[c, a] = d_a q^c
        return g[0, 0] + g[1, 1] + g[2, 2]

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.div(self.grad(f))

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(self.weights * f))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(self.weights * f * g))

    def l2_norm(self, f: np.ndarray) -> float:
        f = np.asarray(f)
        if f.ndim == 2:
            return float(np.sqrt(np.sum(self.weights * f * f)))
        return float(np.sqrt(np.sum(self.weights * np.sum(f * f, axis=tuple(range(f.ndim - 2))))))

    # -- boundary ---------------------------------------------------------
    def boundary_values(self, f: np.ndarray) -> np.ndarray:
        """Values extrapolated to r = 1, shape (..., n_ang)."""
        return self.synthesis(np.einsum("j,...jk->...k", self.to_boundary, self.analysis(f)))

    def boundary_radial_derivative(self, f: np.ndarray) -> np.ndarray:
        return self.synthesis(np.einsum("j,...jk->...k", self.d_boundary, self.analysis(f)))

    def boundary_integrate(self, f_b: np.ndarray) -> float:
        return float(np.sum(self.w_ang * f_b))

    # -- interpolation ------------------------------------------------------
    def evaluate(self, f: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Spectral interpolation of ``f`` at Cartesian ``points`` (3, n) or (n, 3)."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[0] != 3 and pts.shape[-1] == 3:
            pts = pts.T
        pts = pts.reshape(3, -1)
        rr = np.linalg.norm(pts, axis=0)
        safe = np.where(rr > 0, rr, 1.0)
        theta = np.arccos(np.clip(pts[2] / safe, -1.0, 1.0))
        phi = np.arctan2(pts[1], pts[0])
        a = self.analysis(f)
        L = lagrange_matrix(self.r, rr, self.bary)
        Yp = real_sph_harm(self.l_max, theta, phi)
        coeff = np.einsum("pi,...ik->...pk", L, a)
        return np.einsum("...pk,pk->...p", coeff, Yp)

    def radial_interpolation(self, other_r: np.ndarray) -> np.ndarray:
        return lagrange_matrix(self.r, other_r, self.bary)

    def transfer(self, f: np.ndarray, other: "BallGrid") -> np.ndarray:
        """Resample a field onto another ball grid (spectral, truncating harmonics)."""
        a = self.analysis(f)
        n = min(self.n_lm, other.n_lm)
        b = np.zeros(a.shape[:-2] + (self.n_r, other.n_lm))
        b[..., :n] = a[..., :n]
        M = self.radial_interpolation(other.r)
        b = np.einsum("ij,...jk->...ik", M, b)
        return other.synthesis(b)

    def constant(self, value: float = 1.0) -> np.ndarray:
        return np.full(self.shape, float(value))
