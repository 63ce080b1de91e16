"""
Tangential smoothing and fractional tangential derivatives.

The single-chart mollifier is T f = chi m^{-1} T'[m chi f] with T' the
convolution in chart parameters against an even C-infinity bump of radius
eps, and m = r |det Phi'|^{1/2} the square root of the volume density, so
each chart term is symmetric in L^2(dy).  Boundary charts convolve in the
two tangential parameters at fixed radius; the interior chart convolves in
all three variables.  S = sum_mu T_mu and J = S S.

Discretization
--------------
Fields are represented by spherical-harmonic profiles on the radial nodes.
A boundary chart term is evaluated on a cell-centred chart grid and
projected back onto harmonics with the chart quadrature, which produces a
symmetric matrix per radial layer.  The interior term is the functional
calculus bump_hat(eps sqrt(-Lap)) on Dirichlet Bessel modes of each degree.
Because the kernel has radius eps and chi_0 vanishes near the sphere, this
equals free-space convolution on the support of chi_0.  A symmetric
exponential filter in the radial polynomial basis r^l P_j(2 r^2 - 1) is
applied on both sides, removing the endpoint oscillation that nodal
products with the radial cutoffs leave behind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.integrate import quad
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve
from scipy.special import spherical_jn

from .ball_atlas import Atlas, build_atlas, interior_cutoff, radial_eta, smooth_step
from .errors import UnderResolved
from .grid import BallGrid, real_sph_harm
from .wave import spherical_bessel_zeros


# interior eigenmodes are kept up to wavenumber INTERIOR_MODE_CAP * n_r
INTERIOR_MODE_CAP = 1.5


def bump(t):
    """exp(-1/(1 - t^2)) on |t| < 1, zero outside."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def chart_kernel(eps: float, dz: float) -> np.ndarray:
    """Even 2D bump kernel as convolution weights at chart-grid offsets.

    The weights already include the cell area and sum to one, so the
    discrete mass of the kernel is exactly one.
    """
    k = int(np.floor(eps / dz))
    off = dz * np.arange(-k, k + 1)
    Z1, Z2 = np.meshgrid(off, off, indexing="ij")
    K = bump(np.sqrt(Z1**2 + Z2**2) / eps)
    return K / K.sum()


_BUMP3_MASS = 4.0 * np.pi * quad(lambda t: np.exp(-1.0 / (1.0 - t * t)) * t * t, 0.0, 1.0,
                                 epsabs=1e-15)[0]


def bump3(s, eps: float):
    """3D bump of radius eps with unit mass, as a function of the distance s."""
    return bump(np.asarray(s) / eps) / (_BUMP3_MASS * eps**3)


_T, _TW = leggauss(200)
_T = 0.5 * (_T + 1.0)
_TW = 0.5 * _TW * bump(_T) * _T**2 * 4.0 * np.pi / _BUMP3_MASS


def bump3_hat(k):
    """Fourier transform of the unit-mass radius-1 3D bump at |xi| = k."""
    k = np.asarray(k, float)
    return np.sinc(np.multiply.outer(k, _T) / np.pi) @ _TW


def fattened_radial(r):
    """Radial factor of the fattened cutoffs: 1 on r >= 1/4."""
    return smooth_step(r, 0.125, 0.25)


@dataclass
class _ChartTables:
    grid: object          # ChartGrid
    Y: np.ndarray         # harmonics at kept chart points (n_c, n_lm)


class TangentialSmoother:
    """Smoothing operators S_eps, J_eps = S_eps S_eps on a ball grid.

    Parameters
    ----------
    grid : BallGrid
    eps : float
        Smoothing length in chart units.
    atlas : Atlas, optional
    chart_resolution : int
        Cells per axis of each chart grid.
    radial_filter : float or None
        Band limit, as a fraction of the radial degree, of the symmetric
        exponential filter applied to the cutoff correction; None disables it.
    """

    def __init__(self, grid: BallGrid, eps: float = 0.1, atlas: Atlas | None = None,
                 chart_resolution: int = 96, radial_filter: float | None = 0.3):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.grid = grid
        self.eps = float(eps)
        self.atlas = atlas or build_atlas(chart_resolution, max(grid.n_r, 8))
        self.n = int(chart_resolution)
        self.dz = 2.0 / self.n
        if self.eps < 2.0 * self.dz:
            raise UnderResolved(
                f"eps={self.eps} is below two chart grid spacings ({2 * self.dz:.4g})"
            )
        self.kernel = chart_kernel(self.eps, self.dz)
        self.charts = [_ChartTables(cg, real_sph_harm(grid.l_max, *_angles(cg.points)))
                       for cg in self.atlas.chart_grids(self.n)]
        self.eta2 = radial_eta(grid.r) ** 2
        self.chi0 = interior_cutoff(grid.r)
        self.W_r = grid.r**2 * grid.w_r
        self._F = self._interior_multipliers()
        self._interior = [self.chi0[:, None] * F * self.chi0[None, :] for F in self._F]
        self.radial_filter = radial_filter
        self.Phi = None if radial_filter is None else exponential_filter(grid, radial_filter)
        # the chart sum acts identically on every radial layer: tabulate it
        self.boundary_matrix = self._chart_sum(np.eye(grid.n_lm))

    # -- assembly -------------------------------------------------------------
    def _interior_multipliers(self):
        """F_l = bump_hat(eps sqrt(-Lap_D)) on degree-l radial profiles.

        The 3D convolution with the radial bump is the Fourier multiplier
        bump_hat(eps |xi|).  Since the bump has radius eps, the same
        multiplier of the Dirichlet Laplacian of the unit ball coincides
        with the free-space convolution at distance > eps from the sphere,
        which covers the support of chi_0.  It is applied in the exact
        eigenfunctions N j_l(k r), regular at the origin, projected with the
        grid quadrature W, so F_l is exactly W-self-adjoint.
        """
        grid = self.grid
        W = self.W_r
        k_cap = INTERIOR_MODE_CAP * grid.n_r
        mats = []
        for l in range(grid.l_max + 1):
            k = spherical_bessel_zeros(l, grid.n_r)
            k = k[k <= k_cap]
            norm = np.sqrt(2.0) / np.abs(spherical_jn(l + 1, k))
            Psi = spherical_jn(l, np.outer(grid.r, k)) * norm
            mats.append((Psi * bump3_hat(self.eps * k)) @ Psi.T * W[None, :])
        return mats

    def _boundary_apply(self, a: np.ndarray) -> np.ndarray:
        return a @ self.boundary_matrix

    def _chart_sum(self, a: np.ndarray) -> np.ndarray:
        """Angular chart sum on harmonic coefficients a (..., n_lm)."""
        out = np.zeros_like(a)
        dz2 = self.dz**2
        for ct in self.charts:
            cg = ct.grid
            wgt = cg.sqrt_area * cg.chi
            u = cg.scatter((a @ ct.Y.T) * wgt)
            Ku = fftconvolve(u, self.kernel[(None,) * (u.ndim - 2)], mode="same", axes=(-2, -1))
            v = Ku[..., cg.mask] * (wgt * dz2)
            out += v @ ct.Y
        return out

    def _volume_apply_coeffs(self, a: np.ndarray) -> np.ndarray:
        if self.Phi is not None:
            a = _radial(self.Phi, a)
        out = self.eta2[:, None] * self._boundary_apply(a)
        for l, M in enumerate(self._interior):
            sl = slice(l * l, (l + 1) * (l + 1))
            out[..., sl] += np.einsum("ij,...jk->...ik", M, a[..., sl])
        if self.Phi is not None:
            out = _radial(self.Phi, out)
        return out

    # -- public operators -----------------------------------------------------
    def S(self, f: np.ndarray) -> np.ndarray:
        """S_eps f for a volume field (..., n_r, n_ang)."""
        return self.grid.synthesis(self._volume_apply_coeffs(self.grid.analysis(f)))

    def J(self, f: np.ndarray) -> np.ndarray:
        """J_eps f = S_eps(S_eps f)."""
        a = self.grid.analysis(f)
        return self.grid.synthesis(self._volume_apply_coeffs(self._volume_apply_coeffs(a)))

    def S_boundary(self, fb: np.ndarray) -> np.ndarray:
        """S_eps on boundary fields (..., n_ang)."""
        g = self.grid
        return g.synthesis(self._boundary_apply(np.asarray(fb) @ g._analysis))

    def J_boundary(self, fb: np.ndarray) -> np.ndarray:
        g = self.grid
        a = np.asarray(fb) @ g._analysis
        return g.synthesis(self._boundary_apply(self._boundary_apply(a)))

    def __call__(self, f: np.ndarray) -> np.ndarray:
        return self.J(f)


def _radial(mats: list, a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    for l, M in enumerate(mats):
        sl = slice(l * l, (l + 1) * (l + 1))
        out[..., sl] = np.einsum("ij,...jk->...ik", M, a[..., sl])
    return out


def exponential_filter(grid: BallGrid, cut: float = 0.5, order: int = 4) -> list:
    """W-self-adjoint exponential filters on degree-l radial profiles.

    Degree-l profiles are expanded in r^l P_j(2 r^2 - 1), j < n_r, made
    orthonormal for the radial weight W = r^2 w_r, so that the retained
    modes are regular at the origin.  Modes with j / (n_r - 1) above ``cut``
    are damped by exp(-36 ((j / (n_r - 1) - cut) / (1 - cut))^order).
    """
    n = grid.n_r
    W = grid.r**2 * grid.w_r
    sw = np.sqrt(W)
    j = np.arange(n) / (n - 1)
    sig = np.exp(-36.0 * (np.maximum(j - cut, 0.0) / (1.0 - cut)) ** order)
    out = []
    for l in range(grid.l_max + 1):
        V = grid.r[:, None] ** l * legvander(2.0 * grid.r**2 - 1.0, n - 1)
        Qh, _ = np.linalg.qr(sw[:, None] * V)
        out.append((Qh * sig) @ Qh.T / sw[:, None] * sw[None, :])
    return out


def smooth(op: TangentialSmoother, f: np.ndarray, boundary: bool = False) -> np.ndarray:
    """J_eps f; ``boundary`` selects the variant acting on functions on the sphere."""
    return op.J_boundary(f) if boundary else op.J(f)


def _angles(points):
    p = np.asarray(points, float)
    theta = np.arccos(np.clip(p[2], -1.0, 1.0))
    phi = np.arctan2(p[1], p[0])
    return theta, phi


# -- fractional tangential derivatives ---------------------------------------
def fourier_multiplier_2d(values: np.ndarray, dz: float, s: float = 0.5) -> np.ndarray:
    """<xi>^s applied to chart-supported data on the last two axes, zero-padded."""
    n1, n2 = values.shape[-2:]
    N1, N2 = 2 * n1, 2 * n2
    F = np.fft.fft2(values, s=(N1, N2), axes=(-2, -1))
    k1 = 2 * np.pi * np.fft.fftfreq(N1, d=dz)
    k2 = 2 * np.pi * np.fft.fftfreq(N2, d=dz)
    mult = (1.0 + k1[:, None] ** 2 + k2[None, :] ** 2) ** (s / 2)
    out = np.fft.ifft2(F * mult, axes=(-2, -1)).real
    return out[..., :n1, :n2]


def fourier_multiplier_3d(values: np.ndarray, h: float, s: float = 0.5) -> np.ndarray:
    n = values.shape
    N = tuple(2 * m for m in n)
    F = np.fft.fftn(values, s=N, axes=(0, 1, 2))
    ks = [2 * np.pi * np.fft.fftfreq(m, d=h) for m in N]
    K2 = ks[0][:, None, None] ** 2 + ks[1][None, :, None] ** 2 + ks[2][None, None, :] ** 2
    out = np.fft.ifftn(F * (1.0 + K2) ** (s / 2), axes=(0, 1, 2)).real
    return out[: n[0], : n[1], : n[2]]


class FractionalDerivative:
    """Chart-wise fractional tangential derivatives <d_theta>^s_mu.

    For boundary charts the multiplier acts in the two chart parameters on
    every radial layer; chart 0 uses a Cartesian grid and the multiplier in
    all three variables.
    """

    def __init__(self, smoother: TangentialSmoother, s: float = 0.5, interior_cells: int = 40):
        self.sm = smoother
        self.grid = smoother.grid
        self.s = float(s)
        self.h0 = 1.1 / interior_cells
        self.cart = -0.55 + self.h0 * (np.arange(interior_cells) + 0.5)

    def chart_values(self, f: np.ndarray, mu: int) -> np.ndarray:
        """(chi_mu f) o Psi_mu on the chart grid for every radial layer: (..., n_r, n, n)."""
        ct = self.sm.charts[mu - 1]
        a = self.grid.analysis(f)
        vals = (a @ ct.Y.T) * ct.grid.chi
        vals = vals * radial_eta(self.grid.r)[:, None]
        return ct.grid.scatter(vals)

    def _project(self, mu: int, h_full: np.ndarray) -> np.ndarray:
        ct = self.sm.charts[mu - 1]
        cg = ct.grid
        vals = h_full[..., cg.mask] * cg.chi_fat * cg.sqrt_area**2 * self.sm.dz**2
        return vals @ ct.Y

    def apply(self, f: np.ndarray, mu: int) -> np.ndarray:
        """<d_theta>^s_mu f for a volume field, as nodal values."""
        g = self.grid
        if mu == 0:
            return self._apply_interior(f)
        h = fourier_multiplier_2d(self.chart_values(f, mu), self.sm.dz, self.s)
        b = self._project(mu, h) * fattened_radial(g.r)[:, None]
        return g.synthesis(b)

    def apply_boundary(self, fb: np.ndarray, mu: int) -> np.ndarray:
        """Boundary variant on functions of the sphere (mu >= 1)."""
        g = self.grid
        ct = self.sm.charts[mu - 1]
        a = np.asarray(fb) @ g._analysis
        vals = ct.grid.scatter((a @ ct.Y.T) * ct.grid.chi)
        h = fourier_multiplier_2d(vals, self.sm.dz, self.s)
        return g.synthesis(self._project(mu, h))

    def _apply_interior(self, f: np.ndarray) -> np.ndarray:
        g = self.grid
        c = self.cart
        X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()])
        r = np.linalg.norm(pts, axis=0)
        live = r < 0.5
        vals = np.zeros(pts.shape[1])
        idx = np.nonzero(live)[0]
        for start in range(0, idx.size, 8192):
            sel = idx[start:start + 8192]
            vals[sel] = g.evaluate(f, pts[:, sel]) * interior_cutoff(r[sel])
        h = fourier_multiplier_3d(vals.reshape(X.shape), self.h0, self.s)
        y = g.points.reshape(3, -1)
        ry = np.linalg.norm(y, axis=0)
        out = np.zeros(y.shape[1])
        near = ry < 0.5
        coords = (y[:, near] - c[0]) / self.h0
        out[near] = map_coordinates(h, coords, order=3, mode="constant") * interior_cutoff(ry[near])
        return out.reshape(g.shape)


def frac_half(fd: FractionalDerivative, f: np.ndarray, mu: int) -> np.ndarray:
    """<d_theta>^{1/2}_mu f."""
    return fd.apply(f, mu)


# -- norms ---------------------------------------------------------------------
def _hk_volume(grid: BallGrid, f: np.ndarray, k: int) -> float:
    total = grid.inner(f, f)
    d = f
    for _ in range(k):
        d = grid.grad(d)
        total += float(np.sum(grid.weights * np.sum(d * d, axis=tuple(range(d.ndim - 2)))))
    return float(np.sqrt(total))


def sphere_sobolev(grid: BallGrid, fb: np.ndarray, k: float) -> float:
    """Spectral H^k norm on the unit sphere: sum (1 + l(l+1))^k |a_lm|^2."""
    a = np.asarray(fb) @ grid._analysis
    w = (1.0 + grid.ell * (grid.ell + 1.0)) ** k
    return float(np.sqrt(np.sum(w * a * a)))


def sobolev_norm(fd: FractionalDerivative, f: np.ndarray, k: int = 0, s: float = 0.0,
                 boundary: bool = False) -> float:
    """Chart-sum norm ||f||_{H^(k,s)(Omega)}, or ||f||_{H^s(boundary)} when ``boundary``.

    The volume norm is sum_mu ||<d_theta>^s_mu f||_{H^k}, with the s = 0
    operator reducing to multiplication by chi_mu.
    """
    if k not in range(5) or s not in (0, 0.0, 0.5):
        raise ValueError(f"unsupported Sobolev index (k={k}, s={s})")
    grid = fd.grid
    if boundary:
        if k != 0:
            raise ValueError("boundary norm takes k = 0")
        total = 0.0
        for mu in range(1, 7):
            if s == 0:
                chi = fd.sm.atlas.boundary_cutoffs(grid.e_r)[mu - 1]
                part = chi * np.asarray(f, float)
            else:
                part = fd.apply_boundary(f, mu)
            total += np.sqrt(grid.boundary_integrate(part * part))
        return float(total)
    total = 0.0
    chis = fd.sm.atlas.cutoffs(grid.points)
    for mu in range(7):
        part = chis[mu] * f if s == 0 else fd.apply(f, mu)
        total += _hk_volume(grid, part, k)
    return float(total)


def smoothing_norm_checks(op: TangentialSmoother, f: np.ndarray, k: int, m: int,
                          g: np.ndarray | None = None) -> dict:
    """Measured constants of the smoothing estimates for a boundary field ``f``.

    Returns
    -------
    dict
        ``gain``: ||J f||_{H^k} eps^{k-m} / ||f||_{H^m};
        ``commutator``: ||J(f g) - f J g||_{L^2} / (eps ||f||_{C^1} ||g||_{L^2})
        (only when ``g`` is given).
    """
    if k < m:
        raise ValueError("need k >= m")
    grid = op.grid
    f = np.asarray(f, float)
    out = {}
    nf = sphere_sobolev(grid, f, m)
    Jf = op.J_boundary(f)
    out["gain"] = 0.0 if nf == 0 else sphere_sobolev(grid, Jf, k) * op.eps ** (k - m) / nf
    if g is not None:
        g = np.asarray(g, float)
        comm = op.J_boundary(f * g) - f * op.J_boundary(g)
        lhs = np.sqrt(grid.boundary_integrate(comm * comm))
        grad_t = _surface_gradient(grid, f)
        c1 = np.max(np.abs(f)) + np.max(np.sqrt(np.sum(grad_t**2, axis=0)))
        ng = np.sqrt(grid.boundary_integrate(g * g))
        out["commutator"] = 0.0 if c1 * ng == 0 else float(lhs / (op.eps * c1 * ng))
    return out


def _surface_gradient(grid: BallGrid, fb: np.ndarray) -> np.ndarray:
    a = np.asarray(fb) @ grid._analysis
    ft = a @ grid.Y_theta.T
    fp = a @ grid.Y_phi.T
    return grid.e_theta * ft + grid.e_phi * fp
