"""
Named property checks run by ``gravdrop --mode verify``.

Each check returns ``(value, threshold)`` and passes when value <= threshold.
The suite is sized to run in about a minute; the long acceptance runs live
in the test suite.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import ball_atlas as atlas, diagnostics, gravity
from .eos import EquationOfState
from .evolution import compatibility
from .fields import identity_jacobian, jacobian, tilde_laplacian
from .grid import BallGrid
from .oracles import reference_values
from .smoothing import TangentialSmoother
from .wave import build_basis, wave_grid_for


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.threshold)


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _random_ball(rng, n):
    p = rng.standard_normal((3, n))
    return p / np.linalg.norm(p, axis=0) * rng.random(n) ** (1 / 3)


def run_checks(cfg, reference: dict | None = None, rng=None) -> list:
    """Evaluate every check; ``reference`` is a dict written by the oracle mode."""
    rng = rng or np.random.default_rng(cfg.seed)
    out = []

    def check(name, value, threshold):
        out.append(CheckResult(name, float(value), float(threshold)))

    # ball_atlas
    at = atlas.build_atlas(cfg.grid_chart, max(cfg.grid_n_r, 8))
    pts = _random_ball(rng, 1000)
    check("atlas.partition_of_unity", np.max(np.abs(at.partition_sum(pts) - 1.0)), 1e-12)
    sph = pts / np.linalg.norm(pts, axis=0)
    tang = max(np.max(np.abs(np.sum(atlas.tangential_field(t, sph) * sph, axis=0)))
               for t in atlas.TANGENTIAL_IDS)
    check("atlas.tangential_fields_tangent", tang, 1e-14)
    check("atlas.extension_coefficients", np.max(np.abs(atlas.extension_coefficients(1) - [3, -2])),
          1e-12)
    g = BallGrid(12, 6)
    f1, f2 = np.cos(g.points[0]), g.points[1] ** 2
    probe = _random_ball(rng, 50) * 1.4
    lhs = atlas.extend(g, 2 * f1 - 3 * f2, 2, probe)
    rhs = 2 * atlas.extend(g, f1, 2, probe) - 3 * atlas.extend(g, f2, 2, probe)
    check("atlas.extension_linear", _rel(lhs, rhs), 1e-12)

    # eos
    eos = EquationOfState(cfg.eos_K, cfg.eos_rho_bar)
    rho = 1.0 + 0.2 * rng.random(100)
    check("eos.enthalpy_roundtrip", _rel(eos.density_of_enthalpy(eos.enthalpy_of_density(rho)), rho),
          1e-13)
    dr = 1e-6
    dQ = (eos.Q_of_density(rho + dr) - eos.Q_of_density(rho - dr)) / (2 * dr)
    check("eos.Q_prime_is_2p_over_rho2", _rel(dQ, 2 * eos.pressure(rho) / rho**2), 1e-6)

    # smoothing
    grid = BallGrid(cfg.grid_n_r, cfg.grid_l_max)
    sm = TangentialSmoother(grid, cfg.smoothing_eps, chart_resolution=cfg.grid_chart,
                            radial_filter=cfg.smoothing_radial_filter or None)
    worst = 0.0
    for _ in range(10):
        a, b = rng.standard_normal((2,) + grid.shape)
        l, r = grid.inner(sm.J(a), b), grid.inner(a, sm.J(b))
        worst = max(worst, abs(l - r) / max(abs(l), 1e-300))
    check("smoothing.symmetry", worst, 1e-10)

    # gravity
    g24 = BallGrid(24, 15)
    Id = identity_jacobian(g24)
    r24 = np.linalg.norm(g24.points, axis=0)
    phi = gravity.potential(np.ones(g24.shape), Id).phi
    check("gravity.uniform_ball", _rel(phi, gravity.homogeneous_ball_potential(r24)), 1e-3)
    ra, rb = rng.random(g24.shape), np.cos(g24.points[2])
    pa, pb = gravity.potential(ra, Id).phi, gravity.potential(rb, Id).phi
    check("gravity.linearity", _rel(gravity.potential(2 * ra - rb, Id).phi, 2 * pa - pb), 1e-12)
    gs = BallGrid(12, 8)
    warp = gs.points + 0.01 * np.sin(gs.points[[1, 2, 0]])
    rs = np.exp(-np.sum(gs.points**2, axis=0))
    p0 = gravity.potential(rs, jacobian(gs, warp)).phi
    p1 = gravity.potential(rs, jacobian(gs, warp + np.array([0.3, -0.2, 0.1])[:, None, None])).phi
    check("gravity.translation_covariance", _rel(p1, p0), 1e-9)
    gp = BallGrid(16, 8)  # (12, 8) under-resolves the second derivatives of the warp
    Jd = jacobian(gp, gp.points + 1e-3 * np.sin(np.pi * gp.points))
    phid = gravity.potential(np.ones(gp.shape), Jd).phi
    inner = np.linalg.norm(gp.points, axis=0) < 0.8
    check("gravity.poisson_identity", np.max(np.abs(tilde_laplacian(phid, Jd) + 1.0)[inner]), 1e-4)

    # wave
    basis = build_basis(cfg.basis_l_max, cfg.basis_n_max)
    G = basis.gram(wave_grid_for(basis))
    check("wave.orthonormal", np.max(np.abs(G - np.eye(len(G)))), 1e-10)
    check("wave.first_eigenvalue", abs(basis.sorted_eigenvalues()[0] - np.pi**2), 1e-12)

    # diagnostics
    m0 = diagnostics.mass_density(g24, eos, np.zeros(g24.shape))
    E = diagnostics.physical_energy(g24, EquationOfState(cfg.eos_K, 1.0), np.zeros((3,) + g24.shape),
                                    np.zeros(g24.shape), phi, m0, 1.0)
    check("diagnostics.uniform_ball_energy", abs(E - 8 * np.pi / 15), 1e-3)
    hq = 1 - np.sum(grid.points**2, axis=0)
    check("diagnostics.taylor_sign_quadratic", abs(diagnostics.taylor_sign(grid, hq) - 2.0), 1e-9)
    check("diagnostics.div_curl_identity",
          diagnostics.div_curl_check(grid, grid.points.copy()) - np.sqrt(3) / 3, 1e-12)
    check("diagnostics.div_curl_constant", diagnostics.div_curl_check(grid, np.ones((3,) + grid.shape)),
          0.0)

    # evolution: compatibility of the configured preset
    from .cli import build_problem, initial_fields

    prob = build_problem(cfg)
    V0, h0 = initial_fields(cfg, prob)
    comp = compatibility(prob, V0, h0, order=2)
    check("evolution.compatibility_h0_h1", max(comp.residuals[:2]), 1e-8)

    # oracle file
    ref = reference or reference_values(cfg.eos_K, cfg.eos_rho_bar)
    fresh = reference_values(cfg.eos_K, cfg.eos_rho_bar)
    for key in ("h_center", "mass", "taylor_margin"):
        check(f"oracle.hydrostatic.{key}",
              abs(ref["hydrostatic"][key] - fresh["hydrostatic"][key]), 1e-9)
    check("oracle.dirichlet_eigenvalues",
          _rel(ref["dirichlet_eigenvalues"], fresh["dirichlet_eigenvalues"]), 1e-12)
    return out


def load_reference(out_dir) -> dict | None:
    path = os.path.join(out_dir, "reference.json")
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        return json.load(fh)
