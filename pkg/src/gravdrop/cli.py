"""
Command line driver.

Modes
-----
simulate   chain Picard windows and write diagnostics.csv, trajectory.csv,
           summary.json and per-window checkpoints
verify     run the named property checks (nonzero exit on failure)
eps_sweep  simulate for each smoothing length and tabulate ||x~ - x|| against eps
oracle     write the reference values consumed by the tests (reference.json)
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import diagnostics
from .config import SimConfig, parse_config
from .eos import EquationOfState
from .errors import GravdropError
from .evolution import (Problem, Trajectory, compatibility, continue_windows, initial_window_data,
                        save_checkpoint)
from .fields import identity_jacobian, tilde_grad
from .grid import BallGrid
from .oracles import hydrostatic_profile, write_reference
from .smoothing import TangentialSmoother
from .wave import build_basis

MODES = ("simulate", "verify", "eps_sweep", "oracle")
TRAJECTORY_COLUMNS = ("t", "V_l2", "h_center", "dt_h_l2", "mean_radius", "radius_spread")


# -- setup ---------------------------------------------------------------------
def build_problem(cfg: SimConfig, eps: float | None = None) -> Problem:
    grid = BallGrid(cfg.grid_n_r, cfg.grid_l_max)
    sm = TangentialSmoother(grid, cfg.smoothing_eps if eps is None else eps,
                            chart_resolution=cfg.grid_chart,
                            radial_filter=cfg.smoothing_radial_filter or None)
    eos = EquationOfState(cfg.eos_K, cfg.eos_rho_bar)
    return Problem(grid, eos, sm, build_basis(cfg.basis_l_max, cfg.basis_n_max), cfg.gravity_sign,
                   gravity_method=cfg.gravity_method)


def initial_fields(cfg: SimConfig, problem: Problem):
    """(V0, h0) of the configured preset."""
    grid = problem.grid
    y = grid.points
    r = np.linalg.norm(y, axis=0)
    a = cfg.preset_amplitude
    if cfg.gravity_sign == "attractive":
        h0 = hydrostatic_profile(problem.eos).h(r)
    else:
        h0 = np.zeros(grid.shape)
    name = cfg.preset_name
    if name in ("equilibrium", "uniform_rest"):
        V0 = np.zeros((3,) + grid.shape)
        if name == "uniform_rest":
            h0 = np.zeros(grid.shape)
    elif name == "breathing":
        V0 = a * y * (1 - r**2) ** 4
    elif name == "shear":
        V0 = a * (1 - r**2) ** 2 * np.stack([-y[1], y[0], np.zeros_like(r)])
    else:
        raise ValueError(f"unknown preset {name!r}")
    return V0, h0


def initial_trajectory(problem: Problem, compat) -> Trajectory:
    """Single-sample trajectory at t = 0."""
    grid = problem.grid
    J = identity_jacobian(grid)
    h0 = compat.h[0]
    phi, gphi = problem.potential(h0, J)
    dth = compat.h[1] if len(compat.h) > 1 else np.zeros(grid.shape)
    one = lambda a: np.asarray(a)[None]
    return Trajectory(np.zeros(1), one(grid.points), one(grid.points), one(compat.V[0]), one(h0),
                      one(dth), one(phi), one(tilde_grad(h0, J) + problem.s_g * gphi), [J])


def _ratios_per_sample(traj: Trajectory, reports) -> np.ndarray:
    out = np.full(len(traj), np.nan)
    t_end, k = 0.0, 1
    for rep in reports:
        t_end += rep.T
        while k < len(traj) and traj.times[k] <= t_end + 1e-12:
            out[k] = rep.max_ratio
            k += 1
    return out


# -- outputs -------------------------------------------------------------------
def _fmt(v) -> str:
    return repr(float(v) + 0.0)  # no "-0.0"


def write_trajectory_csv(path, grid: BallGrid, traj: Trajectory) -> None:
    origin = np.zeros((3, 1))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(len(traj)):
            R = np.linalg.norm(grid.boundary_values(traj.x[k]), axis=0)
            w.writerow([_fmt(v) for v in (
                traj.times[k], grid.l2_norm(np.linalg.norm(traj.V[k], axis=0)),
                grid.evaluate(traj.h[k], origin)[0], grid.l2_norm(traj.dt_h[k]),
                np.mean(R), np.max(R) - np.min(R))])


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _json_safe(v):
    return None if isinstance(v, float) and not np.isfinite(v) else v


# -- modes ---------------------------------------------------------------------
def simulate(cfg: SimConfig, out: str, eps: float | None = None, tag: str = "") -> dict:
    """Run the configured preset; returns the summary dict (also written as JSON)."""
    os.makedirs(out, exist_ok=True)
    problem = build_problem(cfg, eps)
    V0, h0 = initial_fields(cfg, problem)
    compat = compatibility(problem, V0, h0, order=2)
    data = initial_window_data(problem, compat)
    ck_dir = os.path.join(out, f"checkpoints{tag}")

    def on_window(w, traj, rep):
        if cfg.output_checkpoints:
            os.makedirs(ck_dir, exist_ok=True)
            save_checkpoint(os.path.join(ck_dir, f"window_{w:03d}.npz"), traj.final(),
                            {"window": w, "eps": problem.eps})

    reports, failed, error = [], None, None
    if cfg.run_T_total > 0:
        res = continue_windows(problem, data, cfg.run_T_total, cfg.run_T_window, cfg.run_dt,
                               tol=cfg.picard_tol, max_iter=cfg.picard_max_iter,
                               adaptive=cfg.picard_adaptive, callback=on_window)
        traj, reports, failed, error = res.trajectory, res.reports, res.failed_window, res.error
        if traj is None:
            traj = initial_trajectory(problem, compat)
    else:
        traj = initial_trajectory(problem, compat)
    records = diagnostics.records_from_trajectory(problem, traj, _ratios_per_sample(traj, reports))
    diagnostics.write_records_csv(os.path.join(out, f"diagnostics{tag}.csv"), records)
    write_trajectory_csv(os.path.join(out, f"trajectory{tag}.csv"), problem.grid, traj)
    xdiff = problem.grid.l2_norm(np.linalg.norm(traj.x_tilde[-1] - traj.x[-1], axis=0))
    summary = {
        "mode": "simulate",
        "config": cfg.to_dict(),
        "eps": problem.eps,
        "status": "ok" if error is None else "failed",
        "failed_window": failed,
        "error": None if error is None else f"{type(error).__name__}: {error}",
        "compatibility_residuals": compat.residuals,
        "samples": len(traj),
        "t_final": float(traj.times[-1]),
        "energy_drift": max(r.drift for r in records),
        "continuity_max": max(r.continuity_residual for r in records),
        "taylor_margin_min": min(r.taylor_margin for r in records),
        "x_tilde_minus_x_l2": xdiff,
        "picard": [{"T": rep.T, "iterations": rep.iterations, "max_ratio": rep.max_ratio,
                    "converged": rep.converged} for rep in reports],
    }
    summary = {k: _json_safe(v) for k, v in summary.items()}
    _write_json(os.path.join(out, f"summary{tag}.json"), summary)
    return summary


def eps_sweep(cfg: SimConfig, out: str, eps_list=None) -> dict:
    """Simulate per eps; tabulate ||x~ - x||_{L2} at the final time and the measured order."""
    eps_list = list(eps_list or cfg.smoothing_eps_sweep)
    rows = []
    for e in eps_list:
        s = simulate(cfg, out, eps=e, tag=f"_eps{e:g}")
        rows.append((e, s["x_tilde_minus_x_l2"], s["energy_drift"], s["continuity_max"], s["status"]))
    orders = [float("nan")]
    for (e0, n0, *_), (e1, n1, *_) in zip(rows, rows[1:]):
        orders.append(float(np.log(n0 / n1) / np.log(e0 / e1)) if n0 > 0 and n1 > 0 else float("nan"))
    with open(os.path.join(out, "eps_sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("eps", "x_tilde_minus_x_l2", "energy_drift", "continuity_max", "order"))
        for (e, n, dr, c, _), o in zip(rows, orders):
            w.writerow([_fmt(e), _fmt(n), _fmt(dr), _fmt(c), _fmt(o)])
    print(f"{'eps':>8} {'|x~-x|':>12} {'drift':>10} {'continuity':>11} {'order':>6}")
    for (e, n, dr, c, st), o in zip(rows, orders):
        print(f"{e:8.4g} {n:12.4e} {dr:10.2e} {c:11.2e} {o:6.2f}" + ("" if st == "ok" else f"  {st}"))
    summary = {"mode": "eps_sweep", "eps": eps_list, "x_tilde_minus_x_l2": [r[1] for r in rows],
               "orders": [_json_safe(o) for o in orders]}
    _write_json(os.path.join(out, "eps_sweep.json"), summary)
    return summary


def verify(cfg: SimConfig, out: str, rng=None) -> tuple[bool, list]:
    from .verify import load_reference, run_checks

    os.makedirs(out, exist_ok=True)
    results = run_checks(cfg, load_reference(out), rng)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.value:.3e} (<= {r.threshold:.1e})")
    ok = all(r.passed for r in results)
    _write_json(os.path.join(out, "verify.json"),
                {"passed": ok, "checks": [{"name": r.name, "value": r.value,
                                           "threshold": r.threshold, "passed": r.passed}
                                          for r in results]})
    return ok, results


def oracle(cfg: SimConfig, out: str) -> dict:
    os.makedirs(out, exist_ok=True)
    return write_reference(os.path.join(out, "reference.json"), K=cfg.eos_K, rho_bar=cfg.eos_rho_bar)


def run(cfg: SimConfig, mode: str, out: str | None = None, eps_list=None, seed: int | None = None
        ) -> int:
    """Dispatch a mode; returns the process exit status."""
    out = out or cfg.output_dir
    if seed is not None:
        cfg.seed = int(seed)
    rng = np.random.default_rng(cfg.seed)
    if mode == "simulate":
        s = simulate(cfg, out, eps=eps_list[0] if eps_list else None)
        return 0 if s["status"] == "ok" else 2
    if mode == "verify":
        ok, _ = verify(cfg, out, rng)
        return 0 if ok else 1
    if mode == "eps_sweep":
        eps_sweep(cfg, out, eps_list)
        return 0
    if mode == "oracle":
        oracle(cfg, out)
        return 0
    raise ValueError(f"unknown mode {mode!r}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gravdrop", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--mode", choices=MODES, default="simulate")
    ap.add_argument("--out", help="output directory (default: output.dir)")
    ap.add_argument("--seed", type=int, help="RNG seed for randomized checks")
    ap.add_argument("--eps", help="comma separated smoothing lengths")
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        eps_list = [float(v) for v in args.eps.split(",")] if args.eps else None
        if eps_list is not None and not all(0 < e < 1 for e in eps_list):
            raise ValueError("--eps entries must lie in (0, 1)")
        return run(cfg, args.mode, args.out, eps_list, args.seed)
    except (GravdropError, ValueError, OSError) as exc:
        report = {"status": "error", "type": type(exc).__name__, "message": str(exc)}
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
