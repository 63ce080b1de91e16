"""
Coupled window stepper for the smoothed problem.

Given a candidate velocity trajectory V on a window [t0, t0 + T] sampled
every dt, the map Lambda builds

    x~ = x~0 + int J V,            (J = S S, the tangential smoothing)
    h  = wave solution driven by x~ and V,
    phi = potential of rho(h) kappa~ in the x~ frame,
    Lambda[V] = V0 - int d~(h + s_g phi),

with both integrals accumulated by the trapezoid rule.  Picard iteration
from the Taylor polynomial of the compatibility coefficients converges for
short windows; windows are chained by restarting from the terminal state.
The momentum equation reads D_t V = -d~h - s_g d~phi with s_g = +1 for the
literal sign convention and -1 for attractive gravity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import gravity
from .errors import IncompatibleData, NoConvergence
from .fields import (Jacobian, identity_jacobian, jacobian, tilde_grad, tilde_jacobian_of,
                     tilde_laplacian)
from .grid import BallGrid
from .smoothing import TangentialSmoother
from .wave import (CoefficientTrack, DirichletBasis, FrameCoefficients, WaveSolver,
                   wave_grid_for)

GRAVITY_SIGNS = {"paper": 1.0, "attractive": -1.0, None: 0.0, "off": 0.0}
MAX_ORDER = 3
CHECKPOINT_VERSION = 1


@dataclass
class Problem:
    """Fixed ingredients of a run.

    Parameters
    ----------
    grid : BallGrid
    eos : equation of state
    smoother : TangentialSmoother
    basis : DirichletBasis
    gravity_sign : {"paper", "attractive", None}
    wave_grid : BallGrid, optional
        Quadrature grid of the wave solver (derived from the basis if omitted).
    rate_lift : bool
        Carry the out-of-basis part of the initial rate h1 as t (h1 - P h1).
    gravity_method : {"auto", "series", "pairsum"}
        Evaluation method of the potential on deformed maps.
    """

    grid: BallGrid
    eos: object
    smoother: TangentialSmoother
    basis: DirichletBasis
    gravity_sign: str | None = "paper"
    wave_grid: BallGrid | None = None
    rate_lift: bool = False
    gravity_method: str = "auto"

    def __post_init__(self):
        if self.gravity_sign not in GRAVITY_SIGNS:
            raise ValueError(f"unknown gravity_sign {self.gravity_sign!r}")
        if self.gravity_sign == "off":
            self.gravity_sign = None
        if self.wave_grid is None:
            self.wave_grid = wave_grid_for(self.basis, self.grid)
        self.wave = WaveSolver(self.basis, self.wave_grid, self.eos, self.gravity_sign)

    @property
    def s_g(self) -> float:
        return GRAVITY_SIGNS[self.gravity_sign]

    @property
    def eps(self) -> float:
        return self.smoother.eps

    def jacobian(self, x_tilde: np.ndarray) -> Jacobian:
        if np.array_equal(x_tilde, self.grid.points):
            return identity_jacobian(self.grid)
        return jacobian(self.grid, x_tilde)

    def potential(self, h: np.ndarray, J: Jacobian):
        """(phi, d~phi); zeros when gravity is off."""
        if self.s_g == 0.0:
            z = np.zeros(self.grid.shape)
            return z, np.zeros((3,) + self.grid.shape)
        res = gravity.potential(self.eos.density_of_enthalpy(h), J, method=self.gravity_method)
        return res.phi, res.grad


# -- state containers ----------------------------------------------------------
@dataclass
class FlowState:
    """Snapshot of the flow at one time (all arrays on the problem grid)."""

    t: float
    x: np.ndarray
    x_tilde: np.ndarray
    V: np.ndarray
    h: np.ndarray
    dt_h: np.ndarray
    phi: np.ndarray | None = None
    jac: Jacobian | None = field(default=None, repr=False)


@dataclass
class Trajectory:
    """Samples of a window (or a concatenation of windows)."""

    times: np.ndarray
    x: np.ndarray
    x_tilde: np.ndarray
    V: np.ndarray
    h: np.ndarray
    dt_h: np.ndarray
    phi: np.ndarray
    grad_H: np.ndarray
    jacs: list = field(default_factory=list, repr=False)
    poisson_defect: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.times)

    def state(self, k: int) -> FlowState:
        jac = self.jacs[k] if self.jacs else None
        return FlowState(float(self.times[k]), self.x[k], self.x_tilde[k], self.V[k], self.h[k],
                         self.dt_h[k], self.phi[k], jac)

    def final(self) -> FlowState:
        return self.state(len(self) - 1)

    def extend(self, other: "Trajectory") -> "Trajectory":
        """Concatenate a following window (its first sample duplicates our last)."""
        cat = lambda a, b: np.concatenate([a, b[1:]])
        return Trajectory(cat(self.times, other.times), cat(self.x, other.x),
                          cat(self.x_tilde, other.x_tilde), cat(self.V, other.V),
                          cat(self.h, other.h), cat(self.dt_h, other.dt_h),
                          cat(self.phi, other.phi), cat(self.grad_H, other.grad_H),
                          self.jacs + other.jacs[1:] if self.jacs and other.jacs else [],
                          None if self.poisson_defect is None or other.poisson_defect is None
                          else cat(self.poisson_defect, other.poisson_defect))


@dataclass
class CompatibilitySet:
    """Time-Taylor coefficients of the data at the initial time."""

    V: list
    h: list
    phi: list
    residuals: list

    @property
    def order(self) -> int:
        return len(self.V) - 1


@dataclass
class WindowData:
    """Data at the start of a window."""

    t0: float
    x0: np.ndarray
    x_tilde0: np.ndarray
    V0: np.ndarray
    h0: np.ndarray
    h1: np.ndarray
    seed: list                     # Taylor coefficients V_0, V_1, ... for the seed


@dataclass
class PicardReport:
    iterations: int
    distances: list
    ratios: list
    converged: bool
    T: float
    halvings: int = 0

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    def contraction(self, skip: int = 1) -> float:
        """Geometric mean of the ratios after the first ``skip`` (seed transient)."""
        r = self.ratios[skip:] or self.ratios
        if not r:
            return 0.0
        return float(np.exp(np.mean(np.log(np.maximum(r, 1e-300)))))


# -- commutator coefficients and compatibility ---------------------------------
def commutator_coeffs(W: list, J0: Jacobian, k: int) -> list:
    """Coefficients S^k_l (l = 0..k) of D_t^k d~_i f = sum_l S^k_l[i, j] d~_j D_t^l f.

    Parameters
    ----------
    W : list of ndarray
        Time-Taylor coefficients D_t^p (J V) at the expansion time, p < k.
    J0 : Jacobian
        Jacobian of x~ at the expansion time.
    k : int
        Derivative order, at most 3.

    Notes
    -----
    The coefficients follow from the power series of A^{-1} along
    x~(t) = x~0 + sum_p t^{p+1}/(p+1)! W_p: with c_p the Taylor coefficients
    of A^{-1}, S^k_l = C(k, l) (k - l)! c_{k-l} A0.
    """
    if k > MAX_ORDER:
        raise ValueError(f"commutator order {k} exceeds {MAX_ORDER}")
    if len(W) < k:
        raise ValueError("need W_0 .. W_{k-1}")
    grid = J0.grid
    b = [None] + [grid.grad(W[p - 1]) / math.factorial(p) for p in range(1, k + 1)]
    c = [J0.Ainv]
    for p in range(1, k + 1):
        acc = sum(np.einsum("aipq,ibpq->abpq", c[p - q], b[q]) for q in range(1, p + 1))
        c.append(-np.einsum("abpq,bipq->aipq", acc, J0.Ainv))
    out = []
    for l in range(k + 1):
        coef = math.comb(k, l) * math.factorial(k - l)
        # S[i, j] = coef * c_{k-l}[a, i] A0[j, a]
        out.append(coef * np.einsum("aipq,japq->ijpq", c[k - l], J0.A))
    return out


def _apply_S(S: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return np.einsum("ijpq,jpq->ipq", S, grad)


def _faa_di_bruno(eos, h: list, k: int) -> np.ndarray:
    """D_t^{k+1} e(h) - e'(h0) h_{k+1}, for k <= 2."""
    if k == 0:
        return np.zeros_like(h[0])
    e2 = eos.e_second(h[0])
    if k == 1:
        return e2 * h[1] ** 2
    d = 1e-4
    e3 = (eos.e_second(h[0] + d) - eos.e_second(h[0] - d)) / (2 * d)
    return 3.0 * e2 * h[1] * h[2] + e3 * h[1] ** 3


def harmonic_extension(grid: BallGrid, fb: np.ndarray) -> np.ndarray:
    """Harmonic function on the ball with boundary values ``fb``."""
    a = np.asarray(fb) @ grid._analysis
    prof = grid.r[:, None] ** grid.ell[None, :] * a[None, :]
    return grid.synthesis(prof)


def compatibility(problem: Problem, V0: np.ndarray, h0: np.ndarray, order: int = 2,
                  x_tilde0: np.ndarray | None = None, strict: bool = False, tol: float = 1e-6,
                  project: bool = False, tau: float = 1e-2) -> CompatibilitySet:
    """Compatibility coefficients V_k, h_k, phi_k up to ``order``.

    Parameters
    ----------
    order : int
        Highest k of V_k and h_k (at most 3).
    strict : bool
        Raise IncompatibleData when some max |h_k| on the boundary exceeds ``tol``.
    project : bool
        Replace h0 by h0 minus the harmonic extension of its boundary trace.
    tau : float
        Step of the symmetric finite differences giving phi_k for k >= 1.
    """
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in 0..{MAX_ORDER}")
    grid, eos, sm = problem.grid, problem.eos, problem.smoother
    x_tilde0 = grid.points if x_tilde0 is None else x_tilde0
    J0 = problem.jacobian(x_tilde0)
    h0 = np.asarray(h0, float)
    if project:
        h0 = h0 - harmonic_extension(grid, grid.boundary_values(h0))
    Vs, hs, Ws = [np.asarray(V0, float)], [h0], [sm.J(V0)]
    phis = [problem.potential(h0, J0)[0]]
    e1 = eos.e_prime(h0)
    for k in range(order):
        if k >= 1:
            phis.append(_phi_derivative(problem, x_tilde0, Ws, hs, k, tau))
        S = commutator_coeffs(Ws, J0, k)
        # continuity: e'(h0) h_{k+1} = -D_t^k div V - G_k
        div_k = sum(np.einsum("ijpq,ijpq->pq", S[l], tilde_grad(Vs[l], J0)) for l in range(k + 1))
        hs.append((-div_k - _faa_di_bruno(eos, hs, k)) / e1)
        # momentum: V_{k+1} = -sum_l S^k_l d~H_l
        V_next = -sum(_apply_S(S[l], tilde_grad(hs[l] + problem.s_g * phis[l], J0))
                      for l in range(k + 1))
        Vs.append(V_next)
        Ws.append(sm.J(V_next))
    residuals = [float(np.max(np.abs(grid.boundary_values(hk)))) for hk in hs]
    if strict and max(residuals) > tol:
        raise IncompatibleData(f"boundary residuals {residuals} exceed {tol}")
    return CompatibilitySet(Vs, hs, phis, residuals)


def _phi_derivative(problem: Problem, x_tilde0, Ws, hs, k: int, tau: float) -> np.ndarray:
    """D_t^k phi at the expansion time along the Taylor trajectory (k = 1, 2)."""
    if problem.s_g == 0.0:
        return np.zeros(problem.grid.shape)

    def phi_at(s):
        xt = x_tilde0 + sum(s ** (p + 1) / math.factorial(p + 1) * W for p, W in enumerate(Ws))
        h = sum(s**p / math.factorial(p) * hp for p, hp in enumerate(hs))
        return gravity.potential(problem.eos.density_of_enthalpy(h), jacobian(problem.grid, xt),
                                 method=problem.gravity_method).phi

    p1, m1, p2, m2 = phi_at(tau), phi_at(-tau), phi_at(2 * tau), phi_at(-2 * tau)
    if k == 1:
        return (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * tau)
    if k == 2:
        return (p2 + m2 - p1 - m1) / (3.0 * tau * tau)
    raise ValueError("phi derivatives are available for k <= 2")


def initial_window_data(problem: Problem, compat: CompatibilitySet, x0=None) -> WindowData:
    grid = problem.grid
    x0 = grid.points.copy() if x0 is None else x0
    return WindowData(0.0, x0, x0.copy(), compat.V[0], compat.h[0],
                      compat.h[1] if len(compat.h) > 1 else np.zeros(grid.shape),
                      list(compat.V))


# -- fixed-point map -----------------------------------------------------------
def taylor_seed(data: WindowData, times: np.ndarray) -> np.ndarray:
    s = times - times[0]
    return sum(np.multiply.outer(s**k / math.factorial(k), Vk) for k, Vk in enumerate(data.seed))


def _cumtrap(f: np.ndarray, times: np.ndarray) -> np.ndarray:
    return cumulative_trapezoid(f, times, axis=0, initial=0.0)


def lambda_map(problem: Problem, V: np.ndarray, data: WindowData, times: np.ndarray,
               poisson_defect: np.ndarray | None = None):
    """Apply Lambda to the candidate ``V`` (n_t, 3, n_r, n_ang) on ``times``.

    The wave equation takes its gravity source as -s_g rho(h) + s_g delta with
    delta = Lap~ phi + rho the discrete Poisson defect, supplied per sample
    from the previous iterate.  At a fixed point the source is exactly
    s_g Lap~ phi, so the enthalpy equation is the discrete divergence of the
    momentum equation.

    Returns
    -------
    V_new : ndarray
    traj : Trajectory
        Geometry, enthalpy and potential generated by the candidate.
    """
    grid, wg, sm = problem.grid, problem.wave_grid, problem.smoother
    n_t = len(times)
    JV = sm.J(V)
    x_tilde = data.x_tilde0 + _cumtrap(JV, times)
    x = data.x0 + _cumtrap(V, times)
    jacs = [problem.jacobian(x_tilde[n]) for n in range(n_t)]
    frames = []
    for n in range(n_t):
        Jn = jacs[n]
        F1 = np.einsum("ijpq,jipq->pq", tilde_jacobian_of(JV[n], Jn), tilde_jacobian_of(V[n], Jn))
        if poisson_defect is not None:
            F1 = F1 + problem.s_g * poisson_defect[n]
        g = Jn.g.reshape((9,) + grid.shape)
        frames.append(FrameCoefficients(grid.transfer(Jn.kappa, wg),
                                        grid.transfer(g, wg).reshape((3, 3) + wg.shape),
                                        grid.transfer(F1, wg), np.ones(wg.shape)))
    rel = times - times[0]
    track = CoefficientTrack(rel, frames)
    dt = float(rel[1] - rel[0]) if n_t > 1 else 1.0
    wt = problem.wave.solve(grid.transfer(data.h0, wg), grid.transfer(data.h1, wg),
                            float(rel[-1]), dt, track, rate_lift=problem.rate_lift)
    h1r_main = (data.h1 - problem.basis.synthesize(wt.d_dot[0], grid) if problem.rate_lift
                else np.zeros(grid.shape))
    wt.set_lift(grid, data.h0, h1r_main)
    h = np.array([wt.h(n, grid) for n in range(n_t)])
    dth = np.array([wt.dt_h(n, grid) for n in range(n_t)])
    phi = np.zeros((n_t,) + grid.shape)
    grad_H = np.zeros_like(V)
    defect = np.zeros((n_t,) + grid.shape)
    for n in range(n_t):
        phi[n], gphi = problem.potential(h[n], jacs[n])
        grad_H[n] = tilde_grad(h[n], jacs[n]) + problem.s_g * gphi
        if problem.s_g:
            defect[n] = (tilde_laplacian(phi[n], jacs[n])
                         + problem.eos.density_of_enthalpy(h[n]))
    V_new = data.V0 - _cumtrap(grad_H, times)
    traj = Trajectory(np.asarray(times, float), x, x_tilde, V, h, dth, phi, grad_H, jacs, defect)
    return V_new, traj


def proxy_norm(grid: BallGrid, dV: np.ndarray, times: np.ndarray) -> float:
    """max_t (||dV|| + ||d_y dV||) + max_t ||D_t dV||, L^2 norms on the grid."""
    def l2(f):
        return np.sqrt(np.sum(grid.weights * np.sum(f * f, axis=tuple(range(f.ndim - 2)))))

    space = max(l2(dV[n]) + l2(grid.grad(dV[n])) for n in range(len(times)))
    if len(times) < 2:
        return float(space)
    dtV = np.gradient(dV, times, axis=0)
    return float(space + max(l2(dtV[n]) for n in range(len(times))))


def picard_solve(problem: Problem, data: WindowData, T: float, dt: float, tol: float = 1e-8,
                 max_iter: int = 12, raise_on_failure: bool = True):
    """Picard iteration V^(N) = Lambda(V^(N-1)) from the Taylor seed.

    Returns
    -------
    traj : Trajectory
        Generated by the last candidate.
    report : PicardReport
    """
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ValueError("window T must be a positive multiple of dt")
    times = data.t0 + dt * np.arange(n + 1)
    V = taylor_seed(data, times)
    distances, ratios = [], []
    traj = None
    for it in range(1, max_iter + 1):
        V_new, traj = lambda_map(problem, V, data, times,
                                 None if traj is None else traj.poisson_defect)
        dist = proxy_norm(problem.grid, V_new - V, times)
        if distances and distances[-1] > 0:
            ratios.append(dist / distances[-1])
        distances.append(dist)
        if dist <= tol:
            return traj, PicardReport(it, distances, ratios, True, T)
        V = V_new
    report = PicardReport(max_iter, distances, ratios, False, T)
    if raise_on_failure:
        raise NoConvergence(f"Picard iteration did not reach tol={tol} in {max_iter} iterates",
                            ratios, distances)
    return traj, report


def adaptive_picard(problem: Problem, data: WindowData, T: float, dt: float, tol: float = 1e-8,
                    max_iter: int = 12, max_ratio: float = 0.5, max_halvings: int = 4):
    """Halve the window until the measured contraction ratio is at most ``max_ratio``.

    ``dt`` is halved with ``T`` once the window would hold fewer than two steps.
    """
    halvings = 0
    while True:
        try:
            traj, rep = picard_solve(problem, data, T, dt, tol, max_iter)
            if rep.max_ratio <= max_ratio:
                rep.halvings = halvings
                return traj, rep
        except NoConvergence:
            if halvings >= max_halvings:
                raise
        if halvings >= max_halvings:
            raise NoConvergence(f"contraction ratio above {max_ratio} after {halvings} halvings",
                                rep.ratios, rep.distances)
        T /= 2.0
        if T < 2 * dt - 1e-12:
            dt /= 2.0
        halvings += 1


def next_window_data(traj: Trajectory, problem: Problem) -> WindowData:
    """Restart data from the terminal state; the seed uses D_t V = -d~H and a
    one-sided second difference for D_t^2 V."""
    k = len(traj) - 1
    V1 = -traj.grad_H[k]
    seed = [traj.V[k], V1]
    if k >= 2:
        dt = traj.times[k] - traj.times[k - 1]
        seed.append(-(3 * traj.grad_H[k] - 4 * traj.grad_H[k - 1] + traj.grad_H[k - 2]) / (2 * dt))
    return WindowData(float(traj.times[k]), traj.x[k], traj.x_tilde[k], traj.V[k], traj.h[k],
                      traj.dt_h[k], seed)


@dataclass
class RunResult:
    trajectory: Trajectory | None
    reports: list
    failed_window: int | None = None
    error: Exception | None = None


def continue_windows(problem: Problem, data: WindowData, T_total: float, T: float, dt: float,
                     tol: float = 1e-8, max_iter: int = 12, adaptive: bool = False,
                     callback=None) -> RunResult:
    """Chain windows of length T up to T_total.

    On failure the partial trajectory is returned with the failing window index.
    """
    n_win = int(round(T_total / T))
    if abs(n_win * T - T_total) > 1e-9 * max(T_total, 1.0):
        raise ValueError("T_total must be a multiple of the window length")
    full, reports = None, []
    for w in range(n_win):
        try:
            if adaptive:
                traj, rep = adaptive_picard(problem, data, T, dt, tol, max_iter)
            else:
                traj, rep = picard_solve(problem, data, T, dt, tol, max_iter)
        except Exception as exc:  # propagate with the partial trajectory
            return RunResult(full, reports, w, exc)
        reports.append(rep)
        full = traj if full is None else full.extend(traj)
        if callback is not None:
            callback(w, traj, rep)
        data = next_window_data(traj, problem)
        if adaptive and rep.T < T:
            # the shortened window continues until the nominal window end
            while data.t0 < (w + 1) * T - 1e-12:
                traj, rep = picard_solve(problem, data, rep.T, dt, tol, max_iter)
                reports.append(rep)
                full = full.extend(traj)
                data = next_window_data(traj, problem)
    return RunResult(full, reports)


# -- checkpoints ---------------------------------------------------------------
def save_checkpoint(path, state: FlowState, meta: dict | None = None) -> None:
    """Binary snapshot (numpy .npz) with a format version."""
    arrays = dict(version=np.array(CHECKPOINT_VERSION), t=np.array(state.t), x=state.x,
                  x_tilde=state.x_tilde, V=state.V, h=state.h, dt_h=state.dt_h)
    if state.phi is not None:
        arrays["phi"] = state.phi
    if meta:
        arrays["meta"] = np.array(repr(sorted(meta.items())))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> FlowState:
    with np.load(path) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(z['version'])}")
        phi = z["phi"] if "phi" in z else None
        return FlowState(float(z["t"]), z["x"], z["x_tilde"], z["V"], z["h"], z["dt_h"], phi)


def window_data_from_state(state: FlowState, problem: Problem) -> WindowData:
    """Restart data from a checkpoint; the seed is V + t D_t V with D_t V = -d~H."""
    J = problem.jacobian(state.x_tilde)
    _, gphi = problem.potential(state.h, J)
    V1 = -(tilde_grad(state.h, J) + problem.s_g * gphi)
    return WindowData(state.t, state.x, state.x_tilde, state.V, state.h, state.dt_h, [state.V, V1])
