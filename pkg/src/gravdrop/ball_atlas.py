"""
Charts, cutoffs and tangential vector fields on the unit ball.

Six gnomonic (cube-sphere) charts cover the boundary sphere.  Each chart maps
the parameter square (-1, 1)^2 to the sphere by

    Phi(z) = normalize(c + a z1 u + a z2 v),   a = 1.3,

so the cube face proper is the sub-square |z|_inf <= 1/a and neighbouring
charts overlap.  The shell chart is Psi(z, z3) = z3 Phi(z).  Chart 0 is the
identity on the ball of radius 3/4.

Cutoffs are smooth bumps in the chart parameters, normalized pointwise so
that sum_mu chi_mu^2 = 1 holds to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import UnderResolved

CHART_SCALE = 1.3
# bump plateaus and support edges, in chart parameter units
CUT_INNER, CUT_OUTER = 0.77, 0.87
FAT_INNER, FAT_OUTER = 0.87, 0.97
# radial cutoff: eta = 0 below R_LO, eta = 1 above R_HI
R_LO, R_HI = 0.25, 0.5
INTERIOR_RADIUS = 0.75
MAX_EXTENSION_ORDER = 4
EXTENSION_MARGIN = 0.5

_FACES = [
    # center, u, v (right-handed: u x v = c)
    ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
    ((0, 1, 0), (0, 0, 1), (1, 0, 0)),
    ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
    ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    ((0, 0, -1), (0, 1, 0), (1, 0, 0)),
]


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(x, a: float, b: float):
    """C-infinity step: 0 for x <= a, 1 for x >= b."""
    t = (np.asarray(x, dtype=float) - a) / (b - a)
    p, q = _psi(t), _psi(1.0 - t)
    return p / (p + q)


def plateau(s, inner: float, outer: float):
    """Even bump in one variable: 1 on |s| <= inner, 0 on |s| >= outer."""
    return 1.0 - smooth_step(np.abs(s), inner, outer)


def radial_eta(r):
    """Boundary-collar cutoff: 0 for r <= 1/4, 1 for r >= 1/2."""
    return np.sin(0.5 * np.pi * smooth_step(r, R_LO, R_HI))


def interior_cutoff(r):
    """Interior chart cutoff chi_0 with chi_0^2 + eta^2 = 1."""
    return np.cos(0.5 * np.pi * smooth_step(r, R_LO, R_HI))


@dataclass(frozen=True)
class Chart:
    """One boundary chart of the atlas.

    Attributes
    ----------
    index : int
        Chart number, 1..6 (0 is the interior identity chart).
    center, u, v : ndarray
        Face center and in-face directions.
    """

    index: int
    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    scale: float = CHART_SCALE

    def phi(self, z1, z2) -> np.ndarray:
        """Chart map to the unit sphere; returns (3, ...)."""
        z1, z2 = np.asarray(z1, float), np.asarray(z2, float)
        q = (self.center[:, None] + self.scale * (np.ravel(z1)[None] * self.u[:, None]
                                                  + np.ravel(z2)[None] * self.v[:, None]))
        q = q / np.linalg.norm(q, axis=0)
        return q.reshape((3,) + np.shape(z1))

    def psi(self, z1, z2, z3) -> np.ndarray:
        return np.asarray(z3, float) * self.phi(z1, z2)

    def area_factor(self, z1, z2):
        """|det Phi'|, the surface area density in chart parameters."""
        w2 = self.scale**2 * (np.asarray(z1) ** 2 + np.asarray(z2) ** 2)
        return self.scale**2 * (1.0 + w2) ** (-1.5)

    def weight(self, z1, z2, z3):
        """m_mu = r |det Phi'|^{1/2}."""
        return np.asarray(z3) * np.sqrt(self.area_factor(z1, z2))

    def inverse(self, points: np.ndarray):
        """Chart coordinates (z1, z2, r, covered) of points (3, ...)."""
        p = np.asarray(points, float)
        r = np.linalg.norm(p, axis=0)
        c = np.tensordot(self.center, p, axes=1)
        covered = c > 1e-12 * np.maximum(r, 1e-300)
        safe = np.where(covered, c, 1.0)
        z1 = np.tensordot(self.u, p, axes=1) / (safe * self.scale)
        z2 = np.tensordot(self.v, p, axes=1) / (safe * self.scale)
        covered &= (np.abs(z1) < 1.0) & (np.abs(z2) < 1.0)
        return z1, z2, r, covered


@dataclass
class ChartGrid:
    """Cell-centred n x n quadrature grid of one chart, restricted to supp of the fattened cutoff."""

    chart: Chart
    n: int
    dz: float
    mask: np.ndarray          # (n, n) bool, points kept
    z1: np.ndarray            # kept points
    z2: np.ndarray
    points: np.ndarray        # (3, n_c) on the unit sphere
    sqrt_area: np.ndarray     # |det Phi'|^{1/2}
    chi: np.ndarray           # normalized cutoff chi^b
    chi_fat: np.ndarray       # fattened cutoff

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Place kept-point values (..., n_c) onto the full (..., n, n) grid."""
        out = np.zeros(values.shape[:-1] + (self.n, self.n))
        out[..., self.mask] = values
        return out


class Atlas:
    """Boundary charts, interior chart and the squared partition of unity.

    Parameters
    ----------
    angular_resolution : int
        Nodes per chart axis used for chart quadrature.
    radial_resolution : int
        Number of Gauss shell layers on (0, 1).
    """

    def __init__(self, angular_resolution: int = 96, radial_resolution: int = 24):
        if angular_resolution < 8 or radial_resolution < 8:
            raise ValueError("atlas resolutions must be >= 8")
        dz = 2.0 / angular_resolution
        if CUT_OUTER - CUT_INNER < 2 * dz:
            raise UnderResolved(
                f"chart grid spacing {dz:.3g} cannot resolve the cutoff transition "
                f"of width {CUT_OUTER - CUT_INNER:.3g}"
            )
        x, _ = leggauss(radial_resolution)
        layers = 0.5 * (x + 1.0)
        if np.count_nonzero((layers > R_LO) & (layers < R_HI)) < 2:
            raise UnderResolved("radial resolution cannot resolve the collar cutoff")
        self.angular_resolution = int(angular_resolution)
        self.radial_resolution = int(radial_resolution)
        self.layers = layers
        self.charts = [
            Chart(i + 1, np.array(c, float), np.array(u, float), np.array(v, float))
            for i, (c, u, v) in enumerate(_FACES)
        ]
        self._grids: dict[int, list[ChartGrid]] = {}

    @property
    def n_charts(self) -> int:
        return len(self.charts) + 1

    # -- cutoffs ------------------------------------------------------------
    def _bumps(self, points, inner=CUT_INNER, outer=CUT_OUTER):
        p = np.asarray(points, float)
        out = []
        for ch in self.charts:
            z1, z2, _, cov = ch.inverse(p)
            b = np.where(cov, plateau(z1, inner, outer) * plateau(z2, inner, outer), 0.0)
            out.append(b)
        return np.stack(out)

    def boundary_cutoffs(self, directions: np.ndarray) -> np.ndarray:
        """Normalized angular cutoffs chi^b_mu, shape (6, ...); sum of squares is 1."""
        b = self._bumps(directions)
        return b / np.sqrt(np.sum(b * b, axis=0))

    def fattened_cutoffs(self, directions: np.ndarray) -> np.ndarray:
        return self._bumps(directions, FAT_INNER, FAT_OUTER)

    def cutoffs(self, points: np.ndarray) -> np.ndarray:
        """All cutoffs chi_0..chi_6 at points (3, ...) in the ball, shape (7, ...)."""
        p = np.asarray(points, float)
        r = np.linalg.norm(p, axis=0)
        safe = np.where(r > 0, r, 1.0)
        d = np.where(r > 0, p / safe, np.array([0.0, 0.0, 1.0]).reshape((3,) + (1,) * (p.ndim - 1)))
        chi_b = self.boundary_cutoffs(d)
        return np.concatenate([interior_cutoff(r)[None], radial_eta(r)[None] * chi_b])

    def partition_sum(self, points: np.ndarray) -> np.ndarray:
        c = self.cutoffs(points)
        return np.sum(c * c, axis=0)

    # -- chart quadrature ---------------------------------------------------
    def chart_grids(self, n: int | None = None) -> list[ChartGrid]:
        n = int(n or self.angular_resolution)
        if n in self._grids:
            return self._grids[n]
        dz = 2.0 / n
        z = -1.0 + dz * (np.arange(n) + 0.5)
        Z1, Z2 = np.meshgrid(z, z, indexing="ij")
        grids = []
        for ch in self.charts:
            fat = plateau(Z1, FAT_INNER, FAT_OUTER) * plateau(Z2, FAT_INNER, FAT_OUTER)
            mask = fat > 0
            z1, z2 = Z1[mask], Z2[mask]
            pts = ch.phi(z1, z2)
            chi = self.boundary_cutoffs(pts)[ch.index - 1]
            grids.append(ChartGrid(ch, n, dz, mask, z1, z2, pts,
                                   np.sqrt(ch.area_factor(z1, z2)), chi, fat[mask]))
        self._grids[n] = grids
        return grids


def build_atlas(angular_resolution: int = 96, radial_resolution: int = 24) -> Atlas:
    """Construct the 6+1 chart atlas."""
    return Atlas(angular_resolution, radial_resolution)


# -- tangential vector fields ---------------------------------------------
TANGENTIAL_IDS = ("O12", "O13", "O23", "d1", "d2", "d3")
_ROT_PAIRS = {"O12": (0, 1), "O13": (0, 2), "O23": (1, 2)}


def tangential_field(T_id, point) -> np.ndarray:
    """Value of a field of the tangential family at point(s) (3, ...).

    ``T_id`` is a name from ``TANGENTIAL_IDS`` or its index: eta * Omega_ab
    with Omega_ab = y^a d_b - y^b d_a, or (1 - eta) d_a.
    """
    if isinstance(T_id, (int, np.integer)):
        T_id = TANGENTIAL_IDS[T_id]
    y = np.asarray(point, float)
    r = np.linalg.norm(y, axis=0)
    out = np.zeros_like(y)
    if T_id in _ROT_PAIRS:
        a, b = _ROT_PAIRS[T_id]
        eta = radial_eta(r)
        out[b] = eta * y[a]
        out[a] = -eta * y[b]
    elif T_id in ("d1", "d2", "d3"):
        out[int(T_id[1]) - 1] = 1.0 - radial_eta(r)
    else:
        raise KeyError(f"unknown tangential field {T_id!r}")
    return out


def tangential_derivative(T_id, grad_f: np.ndarray, points: np.ndarray) -> np.ndarray:
    """T f = T^a d_a f given the flat gradient (3, ...) of f."""
    T = tangential_field(T_id, points)
    return np.sum(T * grad_f, axis=0)


# -- extension operator ---------------------------------------------------
def extension_coefficients(s: int) -> np.ndarray:
    """Solve sum_j lambda_j (-(j+1))^l = 1 for l = 0..s."""
    if not 0 <= s <= MAX_EXTENSION_ORDER:
        raise ValueError(f"extension order must be in 0..{MAX_EXTENSION_ORDER}")
    j = np.arange(s + 1)
    V = (-(j[None, :] + 1.0)) ** np.arange(s + 1)[:, None]
    return np.linalg.solve(V, np.ones(s + 1))


def extension_cutoff(r, s: int):
    """1 for r <= 1 + 1/(4+4s), 0 for r >= 1 + 1/(2+2s)."""
    return 1.0 - smooth_step(r, 1.0 + 1.0 / (4 + 4 * s), 1.0 + 1.0 / (2 + 2 * s))


def extend_profile(f, s: int):
    """Extension of a function ``f(r, ...)`` of the radius past r = 1.

    Returns a callable ``Ef(r, ...)`` equal to ``f`` for r <= 1 and to the
    reflected combination  cutoff(r) sum_j lambda_j f(1 - (j+1)(r-1), ...)
    outside, matching s radial derivatives at r = 1.
    """
    lam = extension_coefficients(s)

    def Ef(r, *args):
        r = np.asarray(r, float)
        inside = r <= 1.0
        rin = np.where(inside, r, 1.0)
        out = np.where(inside, f(rin, *args), 0.0)
        rout = np.where(inside, 1.0, r)
        acc = 0.0
        for j, lj in enumerate(lam):
            acc = acc + lj * f(1.0 - (j + 1) * (rout - 1.0), *args)
        return np.where(inside, out, extension_cutoff(rout, s) * acc)

    return Ef


def extend(grid, f: np.ndarray, s: int, points: np.ndarray) -> np.ndarray:
    """Evaluate the order-``s`` extension of a grid field at points of the ball of radius 3/2.

    Points with |y| <= 1 reproduce the spectral interpolant of ``f``.
    """
    pts = np.asarray(points, float).reshape(3, -1)
    if np.any(np.linalg.norm(pts, axis=0) > 1.0 + EXTENSION_MARGIN + 1e-12):
        raise ValueError("points outside the enlarged ball")
    lam = extension_coefficients(s)
    r = np.linalg.norm(pts, axis=0)
    inside = r <= 1.0
    out = np.zeros(pts.shape[1])
    if np.any(inside):
        out[inside] = grid.evaluate(f, pts[:, inside])
    outside = ~inside
    cut = extension_cutoff(r, s)
    live = outside & (cut > 0)
    if np.any(live):
        d = pts[:, live] / r[live]
        acc = np.zeros(np.count_nonzero(live))
        for j, lj in enumerate(lam):
            rr = 1.0 - (j + 1) * (r[live] - 1.0)
            acc += lj * grid.evaluate(f, d * rr)
        out[live] = cut[live] * acc
    return out
