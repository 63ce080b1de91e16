"""
Galerkin solver for the enthalpy wave equation

    e'(h) D_t^2 h - Lap~ h = F,   h = 0 on the boundary,
    F = (d~_i V~^j)(d~_j V^i) - s_g rho(h) - e''(h) (D_t h)^2,

in the Dirichlet eigenbasis e_k = N j_l(k r) Y_lm of the flat Laplacian on
the unit ball (s_g = +1 for the literal sign convention, -1 for attractive
gravity).  Testing against e_k / e'(h) gives an identity mass matrix and the
stiffness form  int kappa~ g~ dh . d(e_k sigma) dy  with sigma = 1/(e' kappa~).

The solution is written h = h0 + t (h1 - P h1) + w with the initial data
kept exactly and w = sum d_k e_k, w(0) = 0, D_t w(0) = P h1.  Radial factors are
evaluated analytically, angular factors through the grid's harmonic
transforms, so no dense basis tables are formed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import spherical_jn

from .errors import CFLViolation
from .grid import BallGrid


def spherical_bessel_zeros(l: int, n: int) -> np.ndarray:
    """First ``n`` positive zeros of j_l."""
    zeros = []
    x = max(l, 1) * 0.5
    step = 0.1
    f_prev = spherical_jn(l, x)
    while len(zeros) < n:
        x_next = x + step
        f_next = spherical_jn(l, x_next)
        if f_prev == 0.0:
            zeros.append(x)
        elif f_prev * f_next < 0:
            zeros.append(brentq(lambda s: spherical_jn(l, s), x, x_next, xtol=1e-15, rtol=1e-15))
        x, f_prev = x_next, f_next
        if x > 10.0 * (n + l + 10):
            raise RuntimeError(f"zeros of j_{l} not found")
    return np.array(zeros[:n])


class DirichletBasis:
    """Eigenfunctions of -Laplacian on the unit ball with zero boundary values.

    Coefficients are stored with index ``lm * n_max + n`` where
    ``lm = l^2 + l + m`` follows the real harmonic ordering of the grid.

    Parameters
    ----------
    L_max : int
        Largest harmonic degree.
    n_max : int
        Radial modes per degree.
    """

    def __init__(self, L_max: int = 7, n_max: int = 6):
        if L_max < 0 or n_max < 1:
            raise ValueError("truncation sizes must be >= 1")
        self.L_max = int(L_max)
        self.n_max = int(n_max)
        self.k = np.stack([spherical_bessel_zeros(l, self.n_max) for l in range(self.L_max + 1)])
        self.norm = np.sqrt(2.0) / np.abs(spherical_jn(np.arange(self.L_max + 1)[:, None] + 1, self.k))
        self.n_lm = (self.L_max + 1) ** 2
        self.size = self.n_lm * self.n_max
        ell = np.concatenate([np.full(2 * l + 1, l) for l in range(self.L_max + 1)])
        self.ell = np.repeat(ell, self.n_max)
        self.eigenvalues = (self.k[self.ell, np.tile(np.arange(self.n_max), self.n_lm)]) ** 2
        self._tables: dict = {}

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues.max())

    def sorted_eigenvalues(self) -> np.ndarray:
        return np.sort(self.eigenvalues)

    def radial(self, r) -> tuple[np.ndarray, np.ndarray]:
        """R_ln(r) and R_ln'(r), shape (L+1, n_max, len(r))."""
        r = np.atleast_1d(np.asarray(r, float))
        l = np.arange(self.L_max + 1)[:, None, None]
        kr = self.k[:, :, None] * r[None, None, :]
        R = self.norm[:, :, None] * spherical_jn(l, kr)
        dR = self.norm[:, :, None] * self.k[:, :, None] * spherical_jn(l, kr, derivative=True)
        return R, dR

    def _grid_tables(self, grid: BallGrid):
        key = (grid.n_r, grid.l_max, grid.n_theta)
        if key not in self._tables:
            if grid.l_max < self.L_max:
                raise ValueError("grid harmonic degree below basis degree")
            R, dR = self.radial(grid.r)
            # per lm column: (n_r, n_max)
            Rc = R[self.ell[:: self.n_max]].transpose(0, 2, 1)
            dRc = dR[self.ell[:: self.n_max]].transpose(0, 2, 1)
            self._tables[key] = (Rc, dRc)
        return self._tables[key]

    def _profiles(self, d, grid, deriv=False):
        Rc, dRc = self._grid_tables(grid)
        d = np.asarray(d, float).reshape(np.shape(d)[:-1] + (self.n_lm, self.n_max))
        c = np.zeros(d.shape[:-2] + (grid.n_r, grid.n_lm))
        c[..., : self.n_lm] = np.einsum("kin,...kn->...ik", Rc, d)
        if not deriv:
            return c
        dc = np.zeros_like(c)
        dc[..., : self.n_lm] = np.einsum("kin,...kn->...ik", dRc, d)
        return c, dc

    def synthesize(self, d, grid: BallGrid) -> np.ndarray:
        return grid.synthesis(self._profiles(d, grid))

    def gradient(self, d, grid: BallGrid) -> np.ndarray:
        c, dc = self._profiles(d, grid, deriv=True)
        return grid.grad_from_coeffs(c, dc)

    def value_and_gradient(self, d, grid: BallGrid):
        c, dc = self._profiles(d, grid, deriv=True)
        return grid.synthesis(c), grid.grad_from_coeffs(c, dc)

    def project(self, f: np.ndarray, grid: BallGrid) -> np.ndarray:
        """<f, e_k> by grid quadrature."""
        Rc, _ = self._grid_tables(grid)
        a = grid.analysis(f)[..., : self.n_lm]
        Wr = grid.r**2 * grid.w_r
        out = np.einsum("kin,i,...ik->...kn", Rc, Wr, a)
        return out.reshape(out.shape[:-2] + (self.size,))

    def project_gradient(self, q: np.ndarray, grid: BallGrid) -> np.ndarray:
        """<q, grad e_k> by grid quadrature for a vector field q (3, n_r, n_ang)."""
        Rc, dRc = self._grid_tables(grid)
        wa = grid.w_ang
        qr = np.einsum("c...a,ca->...a", q, grid.e_r)
        qt = np.einsum("c...a,ca->...a", q, grid.e_theta)
        qp = np.einsum("c...a,ca->...a", q, grid.e_phi)
        n = self.n_lm
        Ar = (qr * wa) @ grid.Y[:, :n]
        At = (qt * wa) @ grid.Y_theta[:, :n] + (qp * wa) @ grid.Y_phi[:, :n]
        Wr = grid.r**2 * grid.w_r
        out = (np.einsum("kin,i,...ik->...kn", dRc, Wr, Ar)
               + np.einsum("kin,i,...ik->...kn", Rc, Wr / grid.r, At))
        return out.reshape(out.shape[:-2] + (self.size,))

    def gram(self, grid: BallGrid) -> np.ndarray:
        """Quadrature Gram matrix of the basis on a grid."""
        eye = np.eye(self.size)
        return np.stack([self.project(self.synthesize(row, grid), grid) for row in eye])


def build_basis(L_max: int = 7, n_max: int = 6) -> DirichletBasis:
    return DirichletBasis(L_max, n_max)


def wave_grid_for(basis: DirichletBasis, like: BallGrid | None = None, n_radial: int | None = None) -> BallGrid:
    """Quadrature grid resolving products of basis functions with coefficient fields."""
    l_max = max(basis.L_max, like.l_max if like is not None else basis.L_max)
    n_r = n_radial or int(max(24, np.ceil(basis.k.max() / 1.2) + 12))
    return BallGrid(n_r, l_max)


@dataclass
class FrameCoefficients:
    """Geometric coefficients of the wave operator at one time, on the wave grid."""

    kappa: np.ndarray
    g: np.ndarray           # (3, 3, n_r, n_ang)
    forcing: np.ndarray     # F1 = (d~ V~)(d~ V)
    rho_scale: np.ndarray   # multiplies rho(h) in the source (1 when kappa is exact)

    @staticmethod
    def identity(grid: BallGrid) -> "FrameCoefficients":
        eye = np.broadcast_to(np.eye(3)[:, :, None, None], (3, 3) + grid.shape).copy()
        return FrameCoefficients(np.ones(grid.shape), eye, np.zeros(grid.shape), np.ones(grid.shape))

    def lerp(self, other: "FrameCoefficients", s: float) -> "FrameCoefficients":
        return FrameCoefficients(
            (1 - s) * self.kappa + s * other.kappa,
            (1 - s) * self.g + s * other.g,
            (1 - s) * self.forcing + s * other.forcing,
            (1 - s) * self.rho_scale + s * other.rho_scale,
        )


class CoefficientTrack:
    """Time-dependent coefficients from samples (piecewise-linear in time)."""

    def __init__(self, times, frames: list[FrameCoefficients], forcing: Callable | None = None):
        self.times = np.asarray(times, float)
        self.frames = frames
        self.extra_forcing = forcing

    @classmethod
    def static(cls, frame: FrameCoefficients, forcing: Callable | None = None):
        return cls([0.0], [frame], forcing)

    def at(self, t: float) -> FrameCoefficients:
        if len(self.frames) == 1:
            return self.frames[0]
        j = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        s = (t - self.times[j]) / (self.times[j + 1] - self.times[j])
        return self.frames[j].lerp(self.frames[j + 1], float(np.clip(s, 0.0, 1.0)))


@dataclass
class WaveTrajectory:
    """Sampled Galerkin solution h = h0 + t h1r + sum d_k e_k.

    ``h1r = h1 - P h1`` is the part of the initial rate outside the basis, so
    D_t h(0) = h1 holds exactly.
    """

    basis: DirichletBasis
    grid: BallGrid
    times: np.ndarray
    d: np.ndarray           # (n_t, M)
    d_dot: np.ndarray       # (n_t, M)
    h0: np.ndarray          # lift on the wave grid
    h1r: np.ndarray
    lifts: dict = field(default_factory=dict)

    def h(self, k: int, grid: BallGrid | None = None) -> np.ndarray:
        grid = grid or self.grid
        h0, h1r = self._lift(grid)
        return h0 + self.times[k] * h1r + self.basis.synthesize(self.d[k], grid)

    def dt_h(self, k: int, grid: BallGrid | None = None) -> np.ndarray:
        grid = grid or self.grid
        return self._lift(grid)[1] + self.basis.synthesize(self.d_dot[k], grid)

    def _lift(self, grid):
        if grid is self.grid:
            return self.h0, self.h1r
        key = id(grid)
        if key not in self.lifts:
            self.lifts[key] = (self.grid.transfer(self.h0, grid), self.grid.transfer(self.h1r, grid))
        return self.lifts[key]

    def set_lift(self, grid: BallGrid, h0: np.ndarray, h1r: np.ndarray) -> None:
        """Register the exact lift on another grid (avoids re-interpolation)."""
        self.lifts[id(grid)] = (h0, h1r)


class WaveSolver:
    """RK4 integrator of the Galerkin system.

    Parameters
    ----------
    basis : DirichletBasis
    grid : BallGrid
        Quadrature grid (see ``wave_grid_for``).
    eos : equation of state
    gravity_sign : {"paper", "attractive", None}
        Sign of the rho(h) source; None drops it.
    cfl : float
        Internal steps satisfy dt * sqrt(lambda_max / e') <= cfl.
    """

    def __init__(self, basis: DirichletBasis, grid: BallGrid, eos, gravity_sign: str | None = "paper",
                 cfl: float = 0.5):
        self.basis = basis
        self.grid = grid
        self.eos = eos
        if gravity_sign not in ("paper", "attractive", None):
            raise ValueError("gravity_sign must be 'paper', 'attractive' or None")
        self.s_g = {"paper": 1.0, "attractive": -1.0, None: 0.0}[gravity_sign]
        self.linear_eos = hasattr(eos, "K")
        self.cfl = float(cfl)

    def stable_dt(self, kappa_min: float = 1.0) -> float:
        e_min = 1.0 / self.eos.K if self.linear_eos else 1e-3
        return self.cfl / np.sqrt(self.basis.lambda_max / (e_min * kappa_min))

    def _rhs(self, t, d, d_dot, track: CoefficientTrack, lift, cache):
        grid, basis = self.grid, self.basis
        h0, grad_h0, h1r, grad_h1r = lift
        fr = track.at(t)
        w, grad_w = basis.value_and_gradient(d, grid)
        h = h0 + t * h1r + w
        grad_h = grad_h0 + t * grad_h1r + grad_w
        h_dot = h1r + basis.synthesize(d_dot, grid)
        e1 = self.eos.e_prime(h)
        sig = 1.0 / (e1 * fr.kappa)
        if self.linear_eos and len(track.frames) == 1:
            if "grad_sig" not in cache:
                cache["grad_sig"] = grid.grad(sig)
            grad_sig = cache["grad_sig"]
        else:
            grad_sig = grid.grad(sig)
        q = fr.kappa * np.einsum("abpq,bpq->apq", fr.g, grad_h)
        stiff = basis.project_gradient(sig * q, grid) + basis.project(np.sum(q * grad_sig, axis=0), grid)
        F = fr.forcing - self.s_g * fr.rho_scale * self.eos.density_of_enthalpy(h)
        if not self.linear_eos:
            F = F - self.eos.e_second(h) * h_dot**2
        if track.extra_forcing is not None:
            F = F + track.extra_forcing(t, grid)
        load = basis.project(F / e1, grid)
        return load - stiff, stiff

    def solve(self, h0: np.ndarray, h1: np.ndarray, T: float, dt: float,
              track: CoefficientTrack | None = None, rate_lift: bool = False) -> WaveTrajectory:
        """Integrate from (h0, h1) on the wave grid over [0, T], sampling every ``dt``.

        With ``rate_lift`` the out-of-basis part of h1 is carried as t (h1 - P h1)
        so that D_t h(0) = h1 exactly; intended for short windows.
        """
        grid, basis = self.grid, self.basis
        track = track or CoefficientTrack.static(FrameCoefficients.identity(grid))
        n_samples = int(round(T / dt)) if T > 0 else 0
        if n_samples and abs(n_samples * dt - T) > 1e-9 * max(T, 1.0):
            raise ValueError("T must be a multiple of dt")
        kmin = min(float(fr.kappa.min()) for fr in track.frames)
        n_sub = max(1, int(np.ceil(dt / self.stable_dt(kmin)))) if n_samples else 1
        h = dt / n_sub
        h0 = np.asarray(h0, float)
        v = basis.project(h1, grid)
        h1r = np.asarray(h1, float) - basis.synthesize(v, grid) if rate_lift else np.zeros(grid.shape)
        lift = (h0, grid.grad(h0), h1r, grid.grad(h1r))
        d = np.zeros(basis.size)
        times = [0.0]
        ds, vs = [d.copy()], [v.copy()]
        cache: dict = {}
        t = 0.0
        energy = None
        for _ in range(n_samples):
            for _ in range(n_sub):
                a1, stiff = self._rhs(t, d, v, track, lift, cache)
                k1d, k1v = v, a1
                a2, _ = self._rhs(t + h / 2, d + h / 2 * k1d, v + h / 2 * k1v, track, lift, cache)
                k2d, k2v = v + h / 2 * k1v, a2
                a3, _ = self._rhs(t + h / 2, d + h / 2 * k2d, v + h / 2 * k2v, track, lift, cache)
                k3d, k3v = v + h / 2 * k2v, a3
                a4, _ = self._rhs(t + h, d + h * k3d, v + h * k3v, track, lift, cache)
                k4d, k4v = v + h * k3v, a4
                d = d + h / 6 * (k1d + 2 * k2d + 2 * k3d + k4d)
                v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
                t += h
                e_new = 0.5 * float(v @ v + np.abs(d @ stiff))
                if energy is not None and energy > 1e-12 and e_new > 10.0 * energy:
                    raise CFLViolation(f"wave energy grew from {energy:.3e} to {e_new:.3e} in one step")
                energy = e_new
            times.append(t)
            ds.append(d.copy())
            vs.append(v.copy())
        return WaveTrajectory(basis, grid, np.array(times), np.array(ds), np.array(vs), h0, h1r)


def solve_wave(basis: DirichletBasis, grid: BallGrid, eos, h0, h1, T: float, dt: float,
               track: CoefficientTrack | None = None, gravity_sign: str | None = "paper",
               rate_lift: bool = False) -> WaveTrajectory:
    """Convenience wrapper around ``WaveSolver.solve``."""
    return WaveSolver(basis, grid, eos, gravity_sign).solve(h0, h1, T, dt, track, rate_lift)


def wave_energy(traj: WaveTrajectory, s: int = 0, eos=None, track: CoefficientTrack | None = None,
                grid: BallGrid | None = None) -> np.ndarray:
    """W_s at every sample.

    W_s^2 = 1/2 sum_{k<=s} int (e' |D_t^{k+1} h|^2 + |D_t^k d~h|^2) kappa~ dy,
    with time derivatives beyond the first taken by finite differences of
    the samples.
    """
    if s not in (0, 1, 2):
        raise ValueError("energy order must be 0, 1 or 2")
    grid = grid or traj.grid
    n_t = len(traj.times)
    track = track or CoefficientTrack.static(FrameCoefficients.identity(grid))
    hs = np.array([traj.h(k, grid) for k in range(n_t)])
    hd = np.array([traj.dt_h(k, grid) for k in range(n_t)])
    levels_v = [hd]
    levels_h = [hs]
    for _ in range(s):
        if n_t < 3:
            raise ValueError("need at least three samples for higher energies")
        levels_v.append(np.gradient(levels_v[-1], traj.times, axis=0, edge_order=2))
        levels_h.append(levels_v[-2])
    out = np.zeros(n_t)
    for k in range(n_t):
        fr = track.at(traj.times[k])
        kap = fr.kappa
        ginv = fr.g
        total = 0.0
        for lv, lh in zip(levels_v, levels_h):
            e1 = eos.e_prime(hs[k]) if eos is not None else 1.0
            dh = grid.grad(lh[k])
            g2 = np.einsum("apq,abpq,bpq->pq", dh, ginv, dh)
            total += grid.integrate((e1 * lv[k] ** 2 + g2) * kap)
        out[k] = np.sqrt(0.5 * total)
    return out


def dump_trajectory_csv(path, traj: WaveTrajectory, W0=None, W1=None, n_coeffs: int = 4) -> None:
    """Columns: t, W0, W1, d_0 .. d_{n-1} (coefficients ordered by eigenvalue)."""
    order = np.argsort(traj.basis.eigenvalues, kind="stable")[:n_coeffs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "W0", "W1"] + [f"d_{i}" for i in range(len(order))])
        for k, t in enumerate(traj.times):
            row = [t, W0[k] if W0 is not None else "", W1[k] if W1 is not None else ""]
            row += list(traj.d[k, order])
            w.writerow([repr(float(x)) if x != "" else "" for x in row])
