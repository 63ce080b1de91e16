"""
Lagrangian differential calculus on the ball grid.

Spatial derivatives are taken spectrally in the label coordinates ``y``.
Derivatives in the smoothed frame use the chain rule through the Jacobian
``A^i_a = d x~^i / d y^a`` of the smoothed flow map:

    d~_i f = A^a_i d_a f,
    Lap~ f = kappa~^{-1} d_a (kappa~ g~^{ab} d_b f),   g~^{ab} = A^a_i A^b_i.

Tensor index convention: ``A[i, a]`` is d x~^i / d y^a and ``Ainv[a, i]`` its
inverse, each with trailing grid axes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NonInvertible
from .grid import BallGrid


@dataclass
class Field:
    """Nodal values of a scalar or vector field on a ball grid.

    Attributes
    ----------
    values : ndarray
        Shape (n_r, n_ang) for scalars or (3, n_r, n_ang) for vectors.
    grid : BallGrid
    t : float
        Time stamp.
    """

    values: np.ndarray
    grid: BallGrid
    t: float = 0.0
    _coeffs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-2:] != self.grid.shape:
            raise ValueError("field shape does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[0]

    def harmonic_coefficients(self) -> np.ndarray:
        return self.grid.analysis(self.values)

    def coefficients(self, basis) -> np.ndarray:
        """Coefficients in a Dirichlet eigenbasis (cached per basis)."""
        key = id(basis)
        if key not in self._coeffs:
            self._coeffs[key] = basis.project(self.values, self.grid)
        return self._coeffs[key]

    @classmethod
    def from_coefficients(cls, coeffs, basis, grid: BallGrid, t: float = 0.0) -> "Field":
        return cls(basis.synthesize(coeffs, grid), grid, t)


def flat_grad(grid: BallGrid, f: np.ndarray) -> np.ndarray:
    """Label-space gradient d_a f; vector input gives ``out[c, a] = d_a f^c``."""
    return grid.grad(f)


@dataclass
class Jacobian:
    """Jacobian data of a smoothed flow map sampled on the grid.

    Attributes
    ----------
    x : ndarray
        The map x~ itself, shape (3, n_r, n_ang).
    A : ndarray
        ``A[i, a] = d x~^i / d y^a``.
    Ainv : ndarray
        ``Ainv[a, i]``, the inverse matrix at each node.
    kappa : ndarray
        det A.
    g : ndarray
        Cometric ``g[a, b] = Ainv[a, i] Ainv[b, i]``.
    """

    grid: BallGrid
    x: np.ndarray
    A: np.ndarray
    Ainv: np.ndarray
    kappa: np.ndarray
    g: np.ndarray

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.x, self.grid.points))


def _invert(A: np.ndarray):
    M = np.moveaxis(A, (0, 1), (-2, -1))
    det = np.linalg.det(M)
    inv = np.moveaxis(np.linalg.inv(M), (-2, -1), (0, 1))
    return inv, det


def jacobian(grid: BallGrid, x_tilde: np.ndarray) -> Jacobian:
    """Jacobian of the map ``x_tilde`` (3, n_r, n_ang).

    Raises
    ------
    NonInvertible
        If the determinant is not positive at some node.
    """
    x_tilde = np.asarray(x_tilde, float)
    A = grid.grad(x_tilde)
    M = np.moveaxis(A, (0, 1), (-2, -1))
    kappa = np.linalg.det(M)
    if not np.all(kappa > 0):
        bad = int(np.count_nonzero(~(kappa > 0)))
        raise NonInvertible(f"volume element nonpositive at {bad} nodes (min {kappa.min():.3e})")
    Ainv = np.moveaxis(np.linalg.inv(M), (-2, -1), (0, 1))
    g = np.einsum("ai...,bi...->ab...", Ainv, Ainv)
    return Jacobian(grid, x_tilde, A, Ainv, kappa, g)


def identity_jacobian(grid: BallGrid) -> Jacobian:
    eye = np.broadcast_to(np.eye(3)[:, :, None, None], (3, 3) + grid.shape).copy()
    return Jacobian(grid, grid.points.copy(), eye, eye.copy(), np.ones(grid.shape), eye.copy())


def tilde_grad(f: np.ndarray, J: Jacobian) -> np.ndarray:
    """d~_i f.  For vector ``f`` returns ``out[c, i] = d~_i f^c``."""
    return _contract_grad(J.Ainv, J.grid.grad(f))


def _contract_grad(Ainv: np.ndarray, df: np.ndarray) -> np.ndarray:
    # df has shape (..., 3, n_r, n_ang) with the derivative axis third from last
    return np.einsum("aipq,...apq->...ipq", Ainv, df)


def tilde_laplacian(f: np.ndarray, J: Jacobian) -> np.ndarray:
    grid = J.grid
    df = grid.grad(f)
    flux = J.kappa * np.einsum("abpq,bpq->apq", J.g, df)
    return grid.div(flux) / J.kappa


def div(alpha: np.ndarray, J: Jacobian) -> np.ndarray:
    """d~_i alpha^i."""
    D = _contract_grad(J.Ainv, J.grid.grad(alpha))
    return D[0, 0] + D[1, 1] + D[2, 2]


def curl(alpha: np.ndarray, J: Jacobian) -> np.ndarray:
    """Antisymmetric tensor ``c[i, j] = d~_i alpha_j - d~_j alpha_i``."""
    D = _contract_grad(J.Ainv, J.grid.grad(alpha))  # D[j, i] = d~_i alpha_j
    return np.swapaxes(D, 0, 1) - D


def tilde_jacobian_of(alpha: np.ndarray, J: Jacobian) -> np.ndarray:
    """``out[i, j] = d~_i alpha^j``."""
    return np.swapaxes(_contract_grad(J.Ainv, J.grid.grad(alpha)), 0, 1)


def commutator_dt_tilde(grid: BallGrid, f_pair, x_pair, vs_pair, dt: float) -> np.ndarray:
    """Pointwise residual of the identity [D_t, d~_i] f = -(d~_i V~^j) d~_j f.

    Parameters
    ----------
    f_pair, x_pair, vs_pair : pair of ndarray
        ``f``, the smoothed map ``x~`` and the smoothed velocity ``V~`` at two
        consecutive times ``t`` and ``t + dt``.

    Returns
    -------
    ndarray
        |FD(D_t d~f) - d~(D_t f) + (d~ V~) d~ f| per node, with every term
        centred at ``t + dt/2`` so the residual is O(dt^2).
    """
    f0, f1 = f_pair
    J0, J1 = jacobian(grid, x_pair[0]), jacobian(grid, x_pair[1])
    g0, g1 = tilde_grad(f0, J0), tilde_grad(f1, J1)
    dtf = (f1 - f0) / dt
    lhs = (g1 - g0) / dt
    grad_dtf = 0.5 * (tilde_grad(dtf, J0) + tilde_grad(dtf, J1))
    c0 = np.einsum("ijpq,jpq->ipq", tilde_jacobian_of(vs_pair[0], J0), g0)
    c1 = np.einsum("ijpq,jpq->ipq", tilde_jacobian_of(vs_pair[1], J1), g1)
    res = lhs - grad_dtf + 0.5 * (c0 + c1)
    return np.sqrt(np.sum(res * res, axis=0))


@dataclass
class BoundaryFrame:
    """Normal, tangential projector and area weight on the boundary nodes.

    ``N`` has shape (3, n_ang), ``gamma`` (3, 3, n_ang), ``nu`` (n_ang,).
    """

    N: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    kappa: np.ndarray
    Ainv: np.ndarray


def boundary_frame(J: Jacobian) -> BoundaryFrame:
    """Frame built from the defining function d(y) = |y| - 1 of the boundary."""
    grid = J.grid
    A_b = grid.boundary_values(J.A)
    M = np.moveaxis(A_b, (0, 1), (-2, -1))
    kappa_b = np.linalg.det(M)
    Ainv_b = np.moveaxis(np.linalg.inv(M), (-2, -1), (0, 1))
    n = grid.e_r  # d_a d on the unit sphere
    m = np.einsum("ai...,a...->i...", Ainv_b, n)
    norm = np.sqrt(np.sum(m * m, axis=0))
    N = m / norm
    gamma = np.eye(3)[:, :, None] - N[:, None] * N[None, :]
    return BoundaryFrame(N, gamma, kappa_b * norm, kappa_b, Ainv_b)


def dump_fields_csv(path, grid: BallGrid, fields: dict) -> None:
    """Write node coordinates and field values as CSV.

    Columns are ``x, y, z`` followed by one column per scalar field and
    ``name_0, name_1, name_2`` per vector field.
    """
    pts = grid.points.reshape(3, -1)
    cols, names = [pts[0], pts[1], pts[2]], ["x", "y", "z"]
    for name, val in fields.items():
        val = np.asarray(val)
        if val.ndim == 2:
            cols.append(val.ravel())
            names.append(name)
        else:
            for c in range(val.shape[0]):
                cols.append(val[c].ravel())
                names.append(f"{name}_{c}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])
