"""Coupled time marching, the Picard iteration and the a priori report.

Time levels: the species step from ``t_m`` to ``t_{m+1}`` uses ``u(t_m)``;
the momentum step from ``t_m`` to ``t_{m+1}`` uses the species at ``t_m``.
The Picard iteration uses the same levels, so its fixed point is exactly the
``simulate`` trajectory for the same ``dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .errors import GuardError
from .grid import Grid, VectorField, lp_norm_array, magnitude_array, random_smooth_array, random_solenoidal_array
from .momentum import FlowState, momentum_forcing_parts, nonlinear_momentum_step, single_mode_field, \
    skew_convection, weighted_energy
from .norms import w21_parts
from .reactions import SpeciesState, ViscosityModel
from .trajectory import Trajectory
from .transport import BDecomposition, diagnostics_row, grad_power_norm, species_mass, transport_react_step_full


# -- initial data --------------------------------------------------------------

def taylor_green(grid: Grid, amplitude: float = 1.0, t: float = 0.0, nu: float = 0.0) -> np.ndarray:
    """2D vortex ``(sin x cos y, -cos x sin y) e^{-2 nu t}`` on a ``2 pi`` box (rescaled otherwise)."""
    x, y = grid.coordinates
    kx, ky = 2 * np.pi / grid.extent[0], 2 * np.pi / grid.extent[1]
    decay = math.exp(-nu * (kx**2 + ky**2) * t)
    return amplitude * decay * np.stack([ky * np.sin(kx * x) * np.cos(ky * y),
                                         -kx * np.cos(kx * x) * np.sin(ky * y)]) / max(kx, ky)


def initial_state(cfg: RunConfig) -> tuple[SpeciesState, np.ndarray]:
    """Species and velocity at ``t = 0`` from the config recipe."""
    grid = cfg.make_grid()
    model, _ = cfg.models()
    ini = cfg.initial
    rng = np.random.default_rng(ini.seed)
    delta = ini.scale
    shape = grid.shape
    if ini.velocity == "random" and ini.u_amplitude:
        u0 = random_solenoidal_array(grid, rng, ini.u_kmax, ini.u_amplitude)
    elif ini.velocity == "taylor-green":
        u0 = taylor_green(grid, ini.u_amplitude)
    elif ini.velocity == "mode" and ini.u_amplitude:
        u0 = single_mode_field(grid, ini.u_mode[:grid.dim], ini.u_amplitude)
    else:
        u0 = np.zeros((grid.dim,) + shape)
    u0 = delta * u0
    # species perturbations drawn after the velocity so the velocity stays seed-stable
    w = 1.0 + delta * ini.w_perturbation * random_smooth_array(grid, rng, ini.kmax)
    a = np.stack([delta * ini.a_amplitude * (1.0 + ini.a_variation * random_smooth_array(grid, rng, ini.kmax))
                  for _ in range(model.k)])
    b = np.stack([delta * ini.b_amplitude * (1.0 + 0.5 * random_smooth_array(grid, rng, ini.kmax))
                  for _ in range(model.l)])
    return SpeciesState(grid, w, a, b, model), u0


# -- direct simulation ------------------------------------------------------------

def _step_count(cfg: RunConfig) -> int:
    n = int(round(cfg.time.t_max / cfg.time.dt))
    if abs(n * cfg.time.dt - cfg.time.t_max) > 1e-9 * cfg.time.t_max:
        raise ValueError(f"t_max={cfg.time.t_max} is not a multiple of dt={cfg.time.dt}")
    return n


def _record_step(traj: Trajectory, t: float, grid: Grid, u: np.ndarray, species: SpeciesState, mass0: float,
                 clamp: float, decomp: Optional[BDecomposition]) -> None:
    row = diagnostics_row(t, species, mass0, clamp, decomp)
    row.pop("t")
    mag = magnitude_array(u, grid.dim)
    traj.record(t, grad_u_sup=float(np.max(magnitude_array(grid.jacobian_array(u), grid.dim))),
                u_l2=lp_norm_array(mag, 2.0, grid.cell_volume),
                u_l3=lp_norm_array(mag, 3.0, grid.cell_volume),
                u_sup=float(np.max(mag)),
                energy=weighted_energy(species, u), **row)


def simulate(cfg: RunConfig, species0: Optional[SpeciesState] = None, u0: Optional[np.ndarray] = None,
             t0: float = 0.0) -> Trajectory:
    """March the coupled system to ``t_max``.

    On a guard trip a ``GuardError`` is raised with the partial trajectory
    attached as ``exc.trajectory``.
    """
    if species0 is None or u0 is None:
        s_ini, u_ini = initial_state(cfg)
        species0 = s_ini if species0 is None else species0
        u0 = u_ini if u0 is None else u0
    model, vmodel = cfg.models()
    tcfg = cfg.transport_config()
    grid = species0.grid
    dt = cfg.time.dt
    nsteps = _step_count(cfg)
    cadence = cfg.time.cadence
    keep_species = cfg.diagnostics.species_snapshots

    traj = Trajectory(grid, nu=vmodel.nu_bar, meta={"dt": dt, "cadence": cadence})
    species = species0
    decomp = BDecomposition.start(species) if cfg.diagnostics.decomposition else None
    mass0 = species_mass(species)
    budget = tcfg.positivity_tolerance * mass0
    state = FlowState(VectorField(grid, np.asarray(u0, dtype=float)), FlowState.at_rest(grid).pi, t0)
    traj.append(t0, state.u.values, None, species if keep_species else None)
    _record_step(traj, t0, grid, state.u.values, species, mass0, 0.0, decomp)
    traj.meta["clamp_masses"] = []
    traj.meta["b_split_error"] = 0.0

    u_prev = None
    F_prev = None
    try:
        for m in range(nsteps):
            t_next = t0 + (m + 1) * dt
            new_species, decomp, info = transport_react_step_full(species, state.u, dt, tcfg, decomp, budget)
            new_state, F, _ = nonlinear_momentum_step(state, species, vmodel, dt, u_prev=u_prev,
                                                      order=cfg.time.momentum_order, F_prev=F_prev)
            new_state.t = t_next
            u_t = (new_state.u.values - state.u.values) / dt
            u_prev, F_prev = state.u.values, F
            state, species = new_state, new_species
            traj.meta["clamp_masses"].append(info.clamp_mass)
            if decomp is not None:
                traj.meta["b_split_error"] = max(traj.meta["b_split_error"], decomp.split_error(species))
            _record_step(traj, t_next, grid, state.u.values, species, mass0, info.clamp_mass, decomp)
            if (m + 1) % cadence == 0 or m + 1 == nsteps:
                traj.append(t_next, state.u.values, u_t, species if keep_species else None)
    except GuardError as exc:
        if math.isnan(exc.t):
            exc.t = t0 + (len(traj.step_times)) * dt
        exc.trajectory = traj
        raise
    traj.meta["final_species"] = species
    traj.meta["decomposition"] = decomp
    return traj


def navier_stokes_reference(grid: Grid, u0: np.ndarray, nu: float, dt: float, nsteps: int) -> list[np.ndarray]:
    """Constant-density, constant-viscosity Navier-Stokes by the same IMEX step, written directly."""
    u = np.asarray(u0, dtype=float)
    out = [u]
    denom = 1.0 + nu * grid.k2 * dt
    for _ in range(nsteps):
        F = -grid.dealias(skew_convection(grid, u, u))
        uh = (grid.fft(u) + dt * grid.project_spectral(grid.fft(F))) / denom
        u = grid.ifft(uh)
        out.append(u)
    return out


def step_error(cfg: RunConfig) -> float:
    """``max_t ||u_dt - u_{dt/2}||_2`` at the common stamps, the reference for Picard agreement."""
    fine_cfg = replace(cfg, time=replace(cfg.time, dt=cfg.time.dt / 2, cadence=1))
    coarse_cfg = replace(cfg, time=replace(cfg.time, cadence=1))
    a = simulate(coarse_cfg)
    b = simulate(fine_cfg)
    g = a.grid
    return max(lp_norm_array(magnitude_array(a.u[i] - b.u[2 * i], g.dim), 2.0, g.cell_volume)
               for i in range(len(a)))


# -- Picard iteration --------------------------------------------------------------

@dataclass
class PicardReport:
    metrics: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    flagged: bool = False

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "ratios": self.ratios, "converged": self.converged,
                "iterations": self.iterations, "flagged": self.flagged}


def contraction_metric(times: Sequence[float], delta_rho: Sequence[np.ndarray], delta_u: Sequence[np.ndarray],
                       grid: Grid) -> float:
    """``||t^{-1/2} d_rho||_{L_inf(L_2)} + ||d_u||_{L_inf(L_2)} + ||grad d_u||_{L_2(L_2)}``.

    The weighted term skips ``t = 0``; the time integral is trapezoidal.
    """
    t = np.asarray(times, dtype=float)
    if not (len(t) == len(delta_rho) == len(delta_u)):
        raise ValueError("misaligned difference series")
    if len(t) < 2:
        raise ValueError("need at least two stamps")
    if np.any(np.diff(t) <= 0):
        raise ValueError("stamps must increase")
    cv = grid.cell_volume
    w_rho = max((lp_norm_array(magnitude_array(np.asarray(d), grid.dim), 2.0, cv) / math.sqrt(ti)
                 for ti, d in zip(t, delta_rho) if ti > 0), default=0.0)
    u_sup = max(lp_norm_array(magnitude_array(d, grid.dim), 2.0, cv) for d in delta_u)
    g2 = np.array([lp_norm_array(magnitude_array(grid.jacobian_array(d), grid.dim), 2.0, cv) ** 2
                   for d in delta_u])
    grad_l2 = math.sqrt(float(np.sum(0.5 * (g2[1:] + g2[:-1]) * np.diff(t))))
    return float(w_rho + u_sup + grad_l2)


def _picard_iterate(cfg: RunConfig, species0: SpeciesState, u0: np.ndarray, u_old: list[np.ndarray],
                    rho_old: list[SpeciesState]) -> tuple[list[SpeciesState], list[np.ndarray]]:
    """One sweep: species with frozen ``u^n``, then the linearized momentum equation."""
    _, vmodel = cfg.models()
    tcfg = cfg.transport_config()
    dt = cfg.time.dt
    budget = tcfg.positivity_tolerance * species_mass(species0)
    rho_new = [species0]
    for m in range(len(u_old) - 1):
        s, _, _ = transport_react_step_full(rho_new[-1], VectorField(species0.grid, u_old[m]), dt, tcfg, None, budget)
        rho_new.append(s)
    u_new = [np.asarray(u0, dtype=float)]
    u_prev = None
    F_prev = None
    grid = species0.grid
    for m in range(len(u_old) - 1):
        state = FlowState(VectorField(grid, u_new[-1]), FlowState.at_rest(grid).pi, m * dt)
        new, F, _ = nonlinear_momentum_step(state, rho_new[m], vmodel, dt, u_prev=u_prev,
                                            order=cfg.time.momentum_order, F_prev=F_prev,
                                            u_conv=u_old[m], visc_species=rho_old[m])
        u_prev, F_prev = u_new[-1], F
        u_new.append(new.u.values)
    return rho_new, u_new


def picard_segment(cfg: RunConfig, species0: Optional[SpeciesState] = None, u0: Optional[np.ndarray] = None,
                   horizon: Optional[float] = None, flag_ratio: float = 0.5,
                   flag_iteration: int = 3) -> tuple[Trajectory, PicardReport]:
    """Picard iteration over ``[0, horizon]`` starting from ``u^0 = 0`` and ``rho^0 = rho_0``.

    Stops when the contraction metric of successive differences is at most
    ``atol + rtol * metric_1`` or after ``max_iterations``.  ``flagged`` is
    set when no ratio up to ``flag_iteration`` reached ``flag_ratio``.
    """
    if species0 is None or u0 is None:
        s_ini, u_ini = initial_state(cfg)
        species0 = s_ini if species0 is None else species0
        u0 = u_ini if u0 is None else u0
    T = (cfg.picard.segment or cfg.time.t_max) if horizon is None else horizon
    dt = cfg.time.dt
    nsteps = int(round(T / dt))
    grid = species0.grid
    times = [m * dt for m in range(nsteps + 1)]
    u_cur = [np.zeros((grid.dim,) + grid.shape) for _ in times]
    rho_cur = [species0 for _ in times]
    report = PicardReport()
    for it in range(1, cfg.picard.max_iterations + 1):
        rho_new, u_new = _picard_iterate(cfg, species0, u0, u_cur, rho_cur)
        d_rho = [a.rho_vec() - b.rho_vec() for a, b in zip(rho_new, rho_cur)]
        d_u = [a - b for a, b in zip(u_new, u_cur)]
        metric = contraction_metric(times, d_rho, d_u, grid)
        if not math.isfinite(metric):
            raise GuardError("nan", f"non-finite Picard metric at iteration {it}")
        report.metrics.append(metric)
        if len(report.metrics) > 1 and report.metrics[-2] > 0:
            report.ratios.append(metric / report.metrics[-2])
        report.iterations = it
        u_cur, rho_cur = u_new, rho_new
        if metric <= cfg.picard.atol + cfg.picard.rtol * report.metrics[0]:
            report.converged = True
            break
    early = report.ratios[:max(flag_iteration - 1, 0)]
    report.flagged = not report.converged and not any(r <= flag_ratio for r in early)
    traj = Trajectory(grid, nu=cfg.models()[1].nu_bar, meta={"dt": dt})
    for m, t in enumerate(times):
        traj.append(t, u_cur[m], None if m == 0 else (u_cur[m] - u_cur[m - 1]) / dt, rho_cur[m])
    return traj, report


# -- a priori report -------------------------------------------------------------------

def running_integral(times: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """Cumulative trapezoid, starting at 0."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    return np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])


def grad_u_integral(traj: Trajectory) -> dict:
    """``int ||grad u||_inf dt`` with its running value and the last-quarter tail share."""
    t = np.asarray(traj.step_times)
    v = np.asarray(traj.scalars["grad_u_sup"])
    run = running_integral(t, v)
    total = float(run[-1])
    cut = t[0] + 0.75 * (t[-1] - t[0])
    tail = total - float(np.interp(cut, t, run))
    return {"value": total, "tail_value": float(v[-1]), "last_quarter": tail,
            "tail_fraction": tail / total if total > 0 else 0.0, "running": run}


def theorem1_report(traj: Trajectory) -> dict:
    """Every left-side quantity of the global a priori bound, plus the embedding ratio.

    ``rho_minus_e1`` is ``sup_t ||rho_vec - e_1||_inf`` with the pointwise
    Euclidean magnitude; ``grad_rho`` is ``sup_t (||grad rho||_3 + ||grad rho||_6)``
    for the total density and ``grad_rho_vec`` the same for the species vector.
    """
    if len(traj) < 3:
        raise ValueError("report needs at least three snapshots")
    if any(traj.u_t[i] is None for i in range(1, len(traj))):
        raise ValueError("missing derivative snapshots")
    g = traj.grid
    nu = traj.nu
    parts = {
        "u_W21_2_4/3_1": w21_parts(traj, 2.0, 4.0 / 3.0, 1.0),
        "u_W21_5/4_5/4_1": w21_parts(traj, 1.25, 1.25, 1.0),
        "tu_W21_6_4_1": w21_parts(traj, 6.0, 4.0, 1.0, time_weighted=True),
        "tu_W21_2_4_1": w21_parts(traj, 2.0, 4.0, 1.0, time_weighted=True),
    }
    out: dict = {name: {"value": p["total"], "trace": p["trace"], "dt": p["dt"], "hess": p["hess"],
                        "tail": p["tail"], "horizon": p["horizon"]} for name, p in parts.items()}
    gi = grad_u_integral(traj)
    out["grad_u_L1_Linf"] = {"value": gi["value"], "tail_value": gi["tail_value"],
                             "last_quarter": gi["last_quarter"], "tail_fraction": gi["tail_fraction"]}
    if traj.species:
        cv = g.cell_volume
        dev, gr, grv = 0.0, 0.0, 0.0
        for s in traj.species:
            rv = s.rho_vec().copy()
            rv[0] -= 1.0
            dev = max(dev, float(np.max(magnitude_array(rv, g.dim))))
            grad_rho = magnitude_array(g.grad_array(s.rho()), g.dim)
            gr = max(gr, lp_norm_array(grad_rho, 3.0, cv) + lp_norm_array(grad_rho, 6.0, cv))
            jac = magnitude_array(np.stack([g.grad_array(c) for c in s.rho_vec()]), g.dim)
            grv = max(grv, lp_norm_array(jac, 3.0, cv) + lp_norm_array(jac, 6.0, cv))
        out["rho_minus_e1_Linf"] = {"value": dev}
        out["grad_rho_Linf_L3L6"] = {"value": gr}
        out["grad_rho_vec_Linf_L3L6"] = {"value": grv}
    den = math.sqrt(parts["tu_W21_6_4_1"]["total"]) * math.sqrt(parts["u_W21_2_4/3_1"]["total"])
    out["lemma4_ratio"] = {"value": gi["value"] / den if den > 0 else None}
    out["finite"] = all(v["value"] is None or math.isfinite(v["value"]) for v in out.values() if isinstance(v, dict))
    return out


THEOREM1_KEYS = ("u_W21_2_4/3_1", "u_W21_5/4_5/4_1", "tu_W21_6_4_1", "tu_W21_2_4_1", "grad_u_L1_Linf",
                 "rho_minus_e1_Linf", "grad_rho_Linf_L3L6")


def lemma4_embedding_check(traj: Trajectory) -> float:
    """``int ||grad u||_inf dt / (||t u||^{1/2}_{W(6,4,1)} ||u||^{1/2}_{W(2,4/3,1)})``."""
    a = w21_parts(traj, 6.0, 4.0, 1.0, time_weighted=True)["total"]
    b = w21_parts(traj, 2.0, 4.0 / 3.0, 1.0)["total"]
    den = math.sqrt(a * b)
    if den == 0.0:
        raise ValueError("degenerate denominator: zero flow")
    return grad_u_integral(traj)["value"] / den


# -- Groenwall check ------------------------------------------------------------------

def gronwall_series(traj: Trajectory, p: float) -> tuple[np.ndarray, np.ndarray]:
    """``(G(t), int_0^t ||grad u||_inf)`` at every step with ``G = grad_power_norm`` of the reactants."""
    key = {3.0: "grad_power_norm_p3", 6.0: "grad_power_norm_p6"}[float(p)]
    G = np.asarray(traj.scalars[key])
    run = running_integral(traj.step_times, traj.scalars["grad_u_sup"])
    return G, run


def gronwall_fit(traj: Trajectory, p: float) -> float:
    """Smallest ``C`` with ``G(t) <= G(0) exp(C int ||grad u||_inf)`` along the run."""
    G, run = gronwall_series(traj, p)
    keep = run > 0
    if not np.any(keep) or G[0] <= 0:
        return 0.0
    return float(max(0.0, np.max(np.log(G[keep] / G[0]) / run[keep])))


def gronwall_check(traj: Trajectory, p: float, C: float) -> dict:
    G, run = gronwall_series(traj, p)
    bound = G[0] * np.exp(C * run)
    margin = float(np.min(bound - G))
    return {"ok": bool(np.all(G <= bound * (1 + 1e-12))), "min_margin": margin,
            "max_ratio": float(np.max(G / bound)) if np.all(bound > 0) else 0.0}
