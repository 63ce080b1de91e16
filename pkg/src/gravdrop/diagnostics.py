"""
Monitored quantities of a run.

* ``physical_energy``: E = int (|V|^2 + Q(rho) + s_g phi) rho_0 kappa_0 dy, with
  the conserved mass density rho kappa = rho_0 kappa_0 of the unsmoothed flow.
* ``taylor_sign``: min over the boundary of -N . d~h.
* ``continuity_residual``: max |D_t e(h) + div~ V|, by a time difference over
  consecutive samples or from the sampled rate D_t h.
* ``div_curl_check``: largest ratio |d~alpha| / (|div~ alpha| + |curl~ alpha| + |T alpha|).
* ``boundary_energy``: low-order energies built from half tangential derivatives.
* ``DiagnosticsRecord`` rows and their CSV stream.
"""

from __future__ import annotations

import csv
from itertools import product
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ball_atlas import TANGENTIAL_IDS, tangential_field
from .fields import Jacobian, boundary_frame, curl, div, identity_jacobian, jacobian, tilde_grad
from .fields import tilde_jacobian_of
from .grid import BallGrid
from .smoothing import FractionalDerivative

DENOMINATOR_FLOOR = 1e-12
# spectral differentiation of a constant leaves ~1e-11 relative roundoff
ROUNDOFF_FLOOR = 1e-9
CSV_COLUMNS = ("t", "E", "drift", "W0", "W1", "taylor_margin", "continuity_residual",
               "picard_ratio")


def _sq(v: np.ndarray) -> np.ndarray:
    """Pointwise squared norm over all leading (component) axes."""
    return np.sum(v * v, axis=tuple(range(v.ndim - 2)))


def _jac(grid: BallGrid, x: np.ndarray) -> Jacobian:
    if np.array_equal(x, grid.points):
        return identity_jacobian(grid)
    return jacobian(grid, x)


# -- energy --------------------------------------------------------------------
def mass_density(grid: BallGrid, eos, h: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
    """rho(h) kappa with kappa = det d_y x (1 for the identity map)."""
    rho = eos.density_of_enthalpy(h)
    if x is None:
        return rho
    return rho * _jac(grid, x).kappa


def physical_energy(grid: BallGrid, eos, V: np.ndarray, h: np.ndarray, phi: np.ndarray | None,
                    m0: np.ndarray, gravity_sign: float = 1.0) -> float:
    """E = int (|V|^2 + Q(rho) + s_g phi) m0 dy.

    Parameters
    ----------
    m0 : ndarray
        Mass density rho_0 kappa_0 of the initial state (see ``mass_density``).
    gravity_sign : float
        +1, -1 or 0; multiplies the potential term.
    """
    rho = eos.density_of_enthalpy(h)
    integrand = _sq(np.asarray(V, float)) + eos.Q_of_density(rho)
    if phi is not None and gravity_sign:
        integrand = integrand + gravity_sign * phi
    return grid.integrate(integrand * m0)


def state_energy(problem, state, m0: np.ndarray) -> float:
    """``physical_energy`` of a FlowState under a Problem; computes phi if missing."""
    phi = state.phi
    if phi is None and problem.s_g:
        J = state.jac if state.jac is not None else problem.jacobian(state.x_tilde)
        phi, _ = problem.potential(state.h, J)
    return physical_energy(problem.grid, problem.eos, state.V, state.h, phi, m0, problem.s_g)


def trajectory_energy(problem, traj, m0: np.ndarray | None = None) -> np.ndarray:
    """E at every sample; m0 defaults to the mass density of the first sample."""
    if m0 is None:
        m0 = mass_density(problem.grid, problem.eos, traj.h[0], traj.x[0])
    return np.array([physical_energy(problem.grid, problem.eos, traj.V[k], traj.h[k],
                                     traj.phi[k], m0, problem.s_g) for k in range(len(traj))])


def energy_drift(E) -> float:
    """max_t |E(t) - E(0)| / |E(0)|."""
    E = np.atleast_1d(np.asarray(E, float))
    if E.size < 2:
        return 0.0
    scale = abs(E[0]) if E[0] != 0 else 1.0
    return float(np.max(np.abs(E - E[0])) / scale)


def energy_rate(E, times) -> np.ndarray:
    """dE/dt by centred differences of the samples."""
    E = np.asarray(E, float)
    if E.size < 2:
        return np.zeros_like(E)
    return np.gradient(E, np.asarray(times, float), edge_order=2 if E.size > 2 else 1)


def flow_wave_energy(problem, traj, s: int = 0) -> np.ndarray:
    """W_s of the enthalpy along a flow trajectory.

    W_s^2 = 1/2 sum_{k<=s} int (e' |D_t^{k+1} h|^2 + |d~ D_t^k h|^2) kappa~ dy,
    higher time derivatives by finite differences of the samples.
    """
    if s not in (0, 1, 2):
        raise ValueError("energy order must be 0, 1 or 2")
    grid, eos = problem.grid, problem.eos
    n_t = len(traj)
    lv, lh = [np.asarray(traj.dt_h)], [np.asarray(traj.h)]
    for _ in range(s):
        if n_t < 3:
            raise ValueError("need at least three samples for higher energies")
        lv.append(np.gradient(lv[-1], traj.times, axis=0, edge_order=2))
        lh.append(lv[-2])
    out = np.zeros(n_t)
    for k in range(n_t):
        J = traj.jacs[k] if traj.jacs else problem.jacobian(traj.x_tilde[k])
        e1 = eos.e_prime(traj.h[k])
        total = 0.0
        for v, h in zip(lv, lh):
            total += grid.integrate((e1 * v[k] ** 2 + _sq(tilde_grad(h[k], J))) * J.kappa)
        out[k] = np.sqrt(0.5 * total)
    return out


# -- sign condition and residuals ----------------------------------------------
def taylor_sign(grid: BallGrid, h: np.ndarray, J: Jacobian | None = None) -> float:
    """delta = min over boundary nodes of -N . d~h (negative means violation)."""
    J = J if J is not None else identity_jacobian(grid)
    frame = boundary_frame(J)
    dh = grid.boundary_values(tilde_grad(h, J))
    return float(np.min(-np.sum(frame.N * dh, axis=0)))


def continuity_residual(eos, traj, method: str = "fd") -> np.ndarray:
    """Per-step max |D_t e(h) + div~ V|.

    ``fd``: (e(h_{n+1}) - e(h_n)) / dt + (div~ V_n + div~ V_{n+1}) / 2, one value
    per step.  ``rate``: e'(h) D_t h + div~ V, one value per sample.
    """
    n_t = len(traj)
    divs = [div(traj.V[n], traj.jacs[n]) for n in range(n_t)]
    if method == "rate":
        return np.array([np.max(np.abs(eos.e_prime(traj.h[n]) * traj.dt_h[n] + divs[n]))
                         for n in range(n_t)])
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    e = [eos.e_of_h(traj.h[n]) for n in range(n_t)]
    out = np.zeros(max(n_t - 1, 0))
    for n in range(n_t - 1):
        dt = traj.times[n + 1] - traj.times[n]
        out[n] = np.max(np.abs((e[n + 1] - e[n]) / dt + 0.5 * (divs[n] + divs[n + 1])))
    return out


def tangential_magnitude(grid: BallGrid, alpha: np.ndarray) -> np.ndarray:
    """|T alpha| = (sum over the tangential family of |T^a d_a alpha|^2)^(1/2)."""
    D = grid.grad(alpha)
    total = np.zeros(grid.shape)
    for tid in TANGENTIAL_IDS:
        total += _sq(np.einsum("apq,...apq->...pq", tangential_field(tid, grid.points), D))
    return np.sqrt(total)


def div_curl_check(grid: BallGrid, alpha: np.ndarray, J: Jacobian | None = None) -> float:
    """Largest pointwise ratio |d~alpha| / (|div~ alpha| + |curl~ alpha| + |T alpha|).

    Nodes where the denominator falls below ``DENOMINATOR_FLOOR`` (raised to
    ``ROUNDOFF_FLOOR * max|alpha|`` when that is larger) are skipped; a field
    with no admissible node gives 0.
    """
    J = J if J is not None else identity_jacobian(grid)
    num = np.sqrt(_sq(tilde_jacobian_of(alpha, J)))
    den = (np.abs(div(alpha, J)) + np.sqrt(_sq(curl(alpha, J)))
           + tangential_magnitude(grid, alpha))
    ok = den >= max(DENOMINATOR_FLOOR, ROUNDOFF_FLOOR * float(np.max(np.abs(alpha))))
    if not np.any(ok):
        return 0.0
    return float(np.max(num[ok] / den[ok]))


# -- boundary energies ---------------------------------------------------------
def _multi_indices(s: int) -> list:
    return [I for n in range(s + 1) for I in product(TANGENTIAL_IDS, repeat=n)]


def _apply_T(grid: BallGrid, I, f: np.ndarray) -> np.ndarray:
    """T^I f = T_1 ... T_n f for the flat derivatives along the tangential fields."""
    for tid in reversed(I):
        f = np.einsum("apq,...apq->...pq", tangential_field(tid, grid.points), grid.grad(f))
    return f


@dataclass
class BoundaryEnergy:
    """Parts of the order-s energy; all are sums of squares with nonnegative weights."""

    interior: float
    boundary_normal: float
    tangential: float

    @property
    def total(self) -> float:
        return self.interior + self.boundary_normal + self.tangential


def boundary_energy(problem, state, s: int = 0, fd: FractionalDerivative | None = None
                    ) -> BoundaryEnergy:
    """Energy of order ``s`` <= 2 with half tangential derivatives per chart.

    interior: sum int (|T^I D V|^2 + e' |T^I D h|^2) kappa~ dy with D = <d_theta>^{1/2}_mu;
    boundary_normal: sum int (N . T^I D S x)^2 |d~h| nu~ dS;
    tangential: sum int gamma_ij T^I V^i T^I V^j nu~ dS.
    Multi-indices run over the tangential family with |I| <= s.
    """
    if s not in (0, 1, 2):
        raise ValueError("energy order must be 0, 1 or 2")
    grid, eos, sm = problem.grid, problem.eos, problem.smoother
    fd = fd or FractionalDerivative(sm)
    J = state.jac if state.jac is not None else problem.jacobian(state.x_tilde)
    frame = boundary_frame(J)
    dh_b = grid.boundary_values(tilde_grad(state.h, J))
    weight_b = np.sqrt(_sq(dh_b[:, None, :])) * frame.nu
    e1 = eos.e_prime(state.h)
    Sx = sm.S(state.x)
    idx = _multi_indices(s)
    interior = normal = tangential = 0.0
    for mu in range(7):
        DV = np.array([fd.apply(state.V[i], mu) for i in range(3)])
        Dh = fd.apply(state.h, mu)
        DSx = np.array([fd.apply(Sx[i], mu) for i in range(3)])
        for I in idx:
            TV, Th = _apply_T(grid, I, DV), _apply_T(grid, I, Dh)
            interior += grid.integrate((_sq(TV) + e1 * Th**2) * J.kappa)
            TSx = grid.boundary_values(_apply_T(grid, I, DSx))
            normal += grid.boundary_integrate(np.sum(frame.N * TSx, axis=0) ** 2 * weight_b)
    for I in idx:
        TV = grid.boundary_values(_apply_T(grid, I, state.V))
        gam = np.einsum("ijk,ik,jk->k", frame.gamma, TV, TV)
        tangential += grid.boundary_integrate(gam * frame.nu)
    return BoundaryEnergy(float(interior), float(normal), float(tangential))


# -- records -------------------------------------------------------------------
@dataclass
class DiagnosticsRecord:
    """One row of the diagnostics stream."""

    t: float
    E: float
    drift: float
    W0: float
    W1: float
    taylor_margin: float
    continuity_residual: float
    picard_ratio: float


def records_from_trajectory(problem, traj, picard_ratios=None, m0=None) -> list:
    """One DiagnosticsRecord per sample.

    The continuity column holds the time-difference residual of the step
    ending at the sample (0 at the first sample).  ``picard_ratios`` is a
    per-sample sequence (NaN where unknown).
    """
    n_t = len(traj)
    E = trajectory_energy(problem, traj, m0)
    W0 = flow_wave_energy(problem, traj, 0)
    W1 = flow_wave_energy(problem, traj, 1) if n_t >= 3 else np.full(n_t, np.nan)
    cont = np.concatenate([[0.0], continuity_residual(problem.eos, traj)]) if n_t > 1 else [0.0]
    ratios = np.full(n_t, np.nan) if picard_ratios is None else np.asarray(picard_ratios, float)
    scale = abs(E[0]) if E[0] != 0 else 1.0
    out = []
    for k in range(n_t):
        J = traj.jacs[k] if traj.jacs else problem.jacobian(traj.x_tilde[k])
        out.append(DiagnosticsRecord(float(traj.times[k]), float(E[k]),
                                     float(abs(E[k] - E[0]) / scale), float(W0[k]), float(W1[k]),
                                     taylor_sign(problem.grid, traj.h[k], J), float(cont[k]),
                                     float(ratios[k])))
    return out


def _fmt(v) -> str:
    return repr(float(v) + 0.0)  # no "-0.0"


def write_records_csv(path, records) -> None:
    """Write records with the fixed column order ``CSV_COLUMNS``.

    Floats are written with ``repr`` so equal runs give identical bytes.
    """
    prev = -np.inf
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            if not rec.t > prev:
                raise ValueError("record times must increase strictly")
            prev = rec.t
            row = asdict(rec)
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = [f.name for f in fields(DiagnosticsRecord)]
    return [DiagnosticsRecord(*(float(r[n]) for n in names)) for r in rows]
