"""Species transport: semi-Lagrangian advection, Strang-split reactions,
maximum-principle diagnostics and the product decomposition ``b = b_ini + b_zero``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import GuardError
from .grid import Grid, ScalarField, VectorField, lp_norm_array, magnitude_array
from .reactions import ReactionModel, ReactionStats, SpeciesState, integrate_reactions


@dataclass(frozen=True)
class TransportConfig:
    """Knobs of the species step.

    ``mass_fixer`` redistributes the small mass defect of the interpolation
    inside each field's own range, so the maximum principle is kept while
    ``sum(f) dV`` is conserved to round-off.
    """

    interpolation: str = "linear"
    splitting: str = "strang"
    reaction_method: str = "dopri"
    reaction_rtol: float = 1e-10
    positivity_tolerance: float = 1e-10
    mass_fixer: bool = True

    def __post_init__(self):
        if self.interpolation not in ("linear", "clamped-cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.splitting != "strang":
            raise ValueError(f"unknown splitting {self.splitting!r}")
        if self.reaction_method not in ("dopri", "exact"):
            raise ValueError(f"unknown reaction method {self.reaction_method!r}")
        if not self.positivity_tolerance > 0:
            raise ValueError("positivity_tolerance must be positive")


# -- interpolation --------------------------------------------------------------

def _axis_strides(shape: Sequence[int]) -> list[int]:
    strides = [1] * len(shape)
    for ax in range(len(shape) - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shape[ax + 1]
    return strides


def _interp_linear(f: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation at index-unit positions ``pos``.

    Written as nested ``a + t (b - a)`` so constants are reproduced exactly
    and integer positions return the node value exactly.
    """
    shape = f.shape
    strides = _axis_strides(shape)
    base = np.floor(pos)
    t = pos - base
    i0 = [np.mod(base[ax].astype(np.int64), shape[ax]) for ax in range(len(shape))]
    i1 = [np.where(i + 1 == m, 0, i + 1) for i, m in zip(i0, shape)]
    flat = f.ravel()

    def rec(ax: int, offset):
        if ax == len(shape):
            return flat[offset]
        a = rec(ax + 1, offset + i0[ax] * strides[ax])
        b = rec(ax + 1, offset + i1[ax] * strides[ax])
        return a + t[ax] * (b - a)

    return rec(0, 0)


def _cubic_weights(t: np.ndarray) -> list[np.ndarray]:
    return [-t * (t - 1) * (t - 2) / 6.0,
            (t + 1) * (t - 1) * (t - 2) / 2.0,
            -(t + 1) * t * (t - 2) / 2.0,
            (t + 1) * t * (t - 1) / 6.0]


def _interp_cubic_clamped(f: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Tensor cubic Lagrange interpolation clipped to the surrounding cell's corner range."""
    shape = f.shape
    strides = _axis_strides(shape)
    base = np.floor(pos)
    t = pos - base
    b0 = [base[ax].astype(np.int64) for ax in range(len(shape))]
    idx = [[np.mod(b + o, m) * s for o in (-1, 0, 1, 2)] for b, m, s in zip(b0, shape, strides)]
    w = [_cubic_weights(t[ax]) for ax in range(len(shape))]
    flat = f.ravel()

    def rec(ax: int, offset):
        if ax == len(shape):
            return flat[offset]
        return sum(w[ax][o] * rec(ax + 1, offset + idx[ax][o]) for o in range(4))

    def corners(ax: int, offset):
        if ax == len(shape):
            v = flat[offset]
            return v, v
        lo1, hi1 = corners(ax + 1, offset + idx[ax][1])
        lo2, hi2 = corners(ax + 1, offset + idx[ax][2])
        return np.minimum(lo1, lo2), np.maximum(hi1, hi2)

    val = rec(0, 0)
    lo, hi = corners(0, 0)
    return np.clip(val, lo, hi)


def interpolate_periodic(f: np.ndarray, pos: np.ndarray, method: str = "linear") -> np.ndarray:
    if method == "linear":
        return _interp_linear(f, pos)
    if method == "clamped-cubic":
        return _interp_cubic_clamped(f, pos)
    raise ValueError(f"unknown interpolation {method!r}")


def departure_points(grid: Grid, u: np.ndarray, dt: float) -> np.ndarray:
    """Foot points of the backward characteristics in index units (two-stage midpoint rule)."""
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite velocity")
    idx = np.stack(np.meshgrid(*[np.arange(m, dtype=float) for m in grid.n], indexing="ij"))
    h = grid.spacing.reshape((grid.dim,) + (1,) * grid.dim)
    mid = idx - (0.5 * dt * u) / h
    u_mid = np.stack([_interp_linear(c, mid) for c in u])
    return idx - (dt * u_mid) / h


def mass_fix(new: np.ndarray, old: np.ndarray) -> np.ndarray:
    """Restore ``sum(old)`` by moving mass proportionally to the headroom inside ``[min old, max old]``."""
    defect = float(np.sum(old) - np.sum(new))
    if defect == 0.0:
        return new
    if defect > 0:
        room = float(np.max(old)) - new
    else:
        room = new - float(np.min(old))
    room = np.maximum(room, 0.0)
    total = float(np.sum(room))
    if total <= 0.0:
        return new
    return new + defect * room / total


def _advect_array(f: np.ndarray, foot: np.ndarray, method: str, fix: bool) -> np.ndarray:
    out = interpolate_periodic(f, foot, method)
    lo, hi = float(f.min()), float(f.max())
    out = np.clip(out, lo, hi)
    if fix:
        out = np.clip(mass_fix(out, f), lo, hi)
    return out


def advect_semilagrangian(f: ScalarField, u: VectorField, dt: float, interpolation: str = "linear",
                          mass_fixer: bool = False) -> ScalarField:
    """Transport ``f`` by ``u`` over ``dt``: ``f_new(x) = f(X(x))`` at the traced foot point ``X``.

    The result never leaves ``[min f, max f]``.
    """
    grid = f.grid
    foot = departure_points(grid, u.values, dt)
    return ScalarField(grid, _advect_array(f.values, foot, interpolation, mass_fixer))


# -- product decomposition ----------------------------------------------------------

@dataclass
class BDecomposition:
    """``b_ini`` carried by pure transport, ``b_zero`` and ``B`` fed by the reaction."""

    b_ini: np.ndarray
    b_zero: np.ndarray
    B: np.ndarray
    theta: tuple[float, ...]

    @classmethod
    def start(cls, species: SpeciesState) -> "BDecomposition":
        return cls(species.b.copy(), np.zeros_like(species.b), np.zeros(species.grid.shape),
                   tuple(species.model.theta))

    def identity_error(self) -> float:
        """``max_j ||b_zero_j - theta_j B||_inf``."""
        return max(float(np.max(np.abs(bz - th * self.B))) for bz, th in zip(self.b_zero, self.theta))

    def split_error(self, species: SpeciesState) -> float:
        """``max_j ||b_ini_j + b_zero_j - b_j||_inf``."""
        return float(np.max(np.abs(self.b_ini + self.b_zero - species.b)))


def check_b_identity(decomp: BDecomposition) -> float:
    return decomp.identity_error()


# -- the species step ----------------------------------------------------------------

@dataclass
class StepInfo:
    clamp_mass: float = 0.0
    reaction_substeps: int = 0
    reaction_rejected: int = 0


def _react(species: SpeciesState, dt: float, cfg: TransportConfig, stats: ReactionStats,
           decomp: Optional[BDecomposition]) -> None:
    model = species.model
    if model.is_null:
        return
    a_new, reacted = integrate_reactions(model, species.a, dt, rtol=cfg.reaction_rtol,
                                         method=cfg.reaction_method, stats=stats)
    species.a = a_new
    for j, th in enumerate(model.theta):
        species.b[j] = species.b[j] + th * reacted
    if decomp is not None:
        for j, th in enumerate(model.theta):
            decomp.b_zero[j] = decomp.b_zero[j] + th * reacted
        decomp.B = decomp.B + reacted


def species_mass(species: SpeciesState) -> float:
    """``int (sum a + sum b) dx``."""
    return float((np.sum(species.a) + np.sum(species.b)) * species.grid.cell_volume)


def transport_react_step_full(species: SpeciesState, u: VectorField, dt: float,
                              cfg: TransportConfig = TransportConfig(),
                              decomp: Optional[BDecomposition] = None,
                              clamp_budget: Optional[float] = None,
                              ) -> tuple[SpeciesState, Optional[BDecomposition], StepInfo]:
    """Strang step (half reaction, advection, half reaction) returning fresh objects.

    ``clamp_budget`` is the admissible clamp mass for this step; the default
    is ``positivity_tolerance`` times the current total species mass.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = species.grid
    out = species.copy()
    dec = None
    if decomp is not None:
        dec = BDecomposition(decomp.b_ini.copy(), decomp.b_zero.copy(), decomp.B.copy(), decomp.theta)
    stats = ReactionStats()
    _react(out, 0.5 * dt, cfg, stats, dec)

    uv = u.values if isinstance(u, VectorField) else np.asarray(u, dtype=float)
    if np.any(uv != 0.0):
        foot = departure_points(grid, uv, dt)

        def adv(f):
            return _advect_array(f, foot, cfg.interpolation, cfg.mass_fixer)

        out.w = adv(out.w)
        out.a = np.stack([adv(c) for c in out.a])
        out.b = np.stack([adv(c) for c in out.b])
        if dec is not None:
            dec.b_ini = np.stack([adv(c) for c in dec.b_ini])
            dec.b_zero = np.stack([adv(c) for c in dec.b_zero])
            dec.B = adv(dec.B)
    elif not np.all(np.isfinite(uv)):
        raise ValueError("non-finite velocity")

    _react(out, 0.5 * dt, cfg, stats, dec)

    info = StepInfo(reaction_substeps=stats.substeps, reaction_rejected=stats.rejected)
    rv = out.rho_vec()
    info.clamp_mass = float(np.sum(np.maximum(-rv, 0.0)) * grid.cell_volume)
    if info.clamp_mass > 0.0:
        budget = clamp_budget
        if budget is None:
            budget = cfg.positivity_tolerance * float(np.sum(np.abs(rv)) * grid.cell_volume)
        if info.clamp_mass > budget:
            raise GuardError("clamp-mass", f"clamp mass {info.clamp_mass:.3e} exceeds budget {budget:.3e}")
        out.w = np.maximum(out.w, 0.0)
        out.a = np.maximum(out.a, 0.0)
        out.b = np.maximum(out.b, 0.0)
    return out, dec, info


def transport_react_step(species: SpeciesState, u: VectorField, dt: float,
                         cfg: TransportConfig = TransportConfig()) -> SpeciesState:
    return transport_react_step_full(species, u, dt, cfg)[0]


def evolve_b_decomposition(decomp: BDecomposition, species: SpeciesState, u: VectorField, dt: float,
                           cfg: TransportConfig = TransportConfig()) -> BDecomposition:
    """Advance the decomposition alongside ``species`` over one step."""
    return transport_react_step_full(species, u, dt, cfg, decomp)[1]


# -- diagnostics ------------------------------------------------------------------

def grad_power_norm(species: SpeciesState, p: float, alpha: float, which: str = "a") -> float:
    """``sum_m ||grad (a_m^(1-alpha))||_p^p`` with the power taken before differentiating.

    ``which`` selects the reactants (``"a"``) or every species (``"all"``).
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    grid = species.grid
    fields = species.a if which == "a" else species.rho_vec()
    total = 0.0
    for f in fields:
        g = grid.grad_array(np.maximum(f, 0.0) ** (1.0 - alpha))
        total += lp_norm_array(magnitude_array(g, grid.dim), p, grid.cell_volume) ** p
    return total


def sup_norms(species: SpeciesState) -> dict[str, float]:
    names = species.names()
    return {n: float(np.max(np.abs(v))) for n, v in zip(names, species.rho_vec())}


def species_invariant_report(states: Sequence[SpeciesState], rel_tol: float = 1e-8,
                             clamp_masses: Optional[Sequence[float]] = None,
                             positivity_tolerance: float = 1e-10) -> dict:
    """Maximum-principle bounds and conservation along a sequence of species states.

    Each bound is checked as ``observed <= bound * (1 + rel_tol)``.
    """
    if not states:
        raise ValueError("no species states")
    s0 = states[0]
    model = s0.model
    w0 = float(np.max(np.abs(s0.w)))
    a0 = [float(np.max(np.abs(c))) for c in s0.a]
    b0 = [float(np.max(np.abs(c))) for c in s0.b]
    asum0 = float(np.max(np.sum(s0.a, axis=0)))
    mass0 = species_mass(s0)
    mins = [s.min_value() for s in states]
    sup_w = max(float(np.max(np.abs(s.w))) for s in states)
    sup_a = [max(float(np.max(np.abs(s.a[i]))) for s in states) for i in range(model.k)]
    sup_b = [max(float(np.max(np.abs(s.b[j]))) for s in states) for j in range(model.l)]
    b_bound = [b0[j] + model.theta[j] * asum0 for j in range(model.l)]
    cons = [abs(species_mass(s) - mass0) for s in states]
    cons_rel = max(cons) / mass0 if mass0 > 0 else max(cons)

    def ok(obs, bound):
        return bool(obs <= bound * (1.0 + rel_tol) + 1e-300)

    checks = {
        "nonnegative": bool(min(mins) >= -1e-12),
        "w_bound": ok(sup_w, w0),
        "a_bound": all(ok(x, y) for x, y in zip(sup_a, a0)),
        "b_bound": all(ok(x, y) for x, y in zip(sup_b, b_bound)),
        "conservation": bool(cons_rel <= rel_tol),
    }
    clamp_total = float(sum(clamp_masses)) if clamp_masses is not None else 0.0
    clamp_budget = positivity_tolerance * mass0
    checks["clamp_budget"] = bool(clamp_total <= clamp_budget)
    return {
        "min_species": mins,
        "sup_w": sup_w, "w0": w0,
        "sup_a": sup_a, "a0": a0,
        "sup_b": sup_b, "b_bound": b_bound,
        "b_zero_start": all(x == 0.0 for x in b0),
        "mass0": mass0, "conservation_error": max(cons), "conservation_rel": cons_rel,
        "clamp_mass": clamp_total, "clamp_budget": clamp_budget,
        "checks": checks, "ok": all(checks.values()),
    }


CSV_COLUMNS = ["t", "min_species", "clamp_mass", "sup_w", "sup_a", "sup_b", "conservation_error",
               "grad_power_norm_p3", "grad_power_norm_p6", "b_identity_error"]


def diagnostics_row(t: float, species: SpeciesState, mass0: float, clamp_mass: float,
                    decomp: Optional[BDecomposition]) -> dict[str, float]:
    model = species.model
    return {
        "t": t,
        "min_species": species.min_value(),
        "clamp_mass": clamp_mass,
        "sup_w": float(np.max(np.abs(species.w))),
        "sup_a": float(np.max(np.abs(species.a))),
        "sup_b": float(np.max(np.abs(species.b))),
        "conservation_error": abs(species_mass(species) - mass0),
        "grad_power_norm_p3": grad_power_norm(species, 3.0, model.alpha_for(3)),
        "grad_power_norm_p6": grad_power_norm(species, 6.0, model.alpha_for(6)),
        "b_identity_error": decomp.identity_error() if decomp is not None else 0.0,
    }


def write_diagnostics_csv(path: Union[str, Path], rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns) if columns is not None else list(rows[0].keys()) if rows else CSV_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: repr(float(row[c])) for c in columns})
