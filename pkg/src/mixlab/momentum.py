"""Implicit spectral Stokes solver, the variable-density forcing of the
momentum equation, and maximal-regularity probes.

The momentum equation is written as a constant-viscosity Stokes system

    u_t - nu_bar lap u + grad pi = F,
    F = (1 - rho) u_t - rho (u . grad) u + (nu - nu_bar) lap u + D(u) grad nu,

with ``D(u) = grad u + grad u^T`` (no factor one half), so that
``div(nu D(u)) = nu lap u + D(u) grad nu`` for divergence-free ``u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GuardError
from .grid import Grid, ScalarField, VectorField, lp_norm_array, magnitude_array, make_grid
from .norms import BesovIndex, besov_norm_array, spacetime_lorentz_norm, time_lorentz_norm, w21_parts
from .reactions import SpeciesState, ViscosityModel
from .trajectory import Trajectory


@dataclass
class FlowState:
    u: VectorField
    pi: ScalarField
    t: float = 0.0

    @classmethod
    def at_rest(cls, grid: Grid, t: float = 0.0) -> "FlowState":
        return cls(VectorField(grid, np.zeros((grid.dim,) + grid.shape)), ScalarField(grid, np.zeros(grid.shape)), t)

    def divergence_error(self) -> float:
        g = self.u.grid
        return float(np.max(np.abs(g.div_array(self.u.values))))


def pressure_from_forcing(grid: Grid, fh: np.ndarray) -> np.ndarray:
    """Spectral pressure with ``grad pi = (I - P) f``: ``pi_hat = -i (k . f_hat) / |k|^2``."""
    kk = grid.k_odd
    k2 = np.sum(kk**2, axis=0)
    safe = np.where(k2 > 0, k2, 1.0)
    return np.where(k2 > 0, -1j * np.sum(kk * fh, axis=0) / safe, 0.0)


def stokes_implicit_step(u: VectorField, f: VectorField, nu_bar: float, dt: float) -> FlowState:
    """Backward Euler for ``u_t - nu_bar lap u + grad pi = f``, ``div u = 0``.

    Per mode ``u_hat <- (u_hat + dt P f_hat) / (1 + nu_bar |k|^2 dt)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = u.grid
    fv = f.values if isinstance(f, VectorField) else np.asarray(f, dtype=float)
    if not np.all(np.isfinite(fv)):
        raise ValueError("non-finite forcing")
    fh = g.fft(fv)
    uh = (g.fft(u.values) + dt * g.project_spectral(fh)) / (1.0 + nu_bar * g.k2 * dt)
    return FlowState(VectorField(g, g.ifft(uh)), ScalarField(g, g.ifft(pressure_from_forcing(g, fh))))


def _bdf2_stokes(u_now: np.ndarray, u_old: np.ndarray, f_now: np.ndarray, f_old: np.ndarray,
                 grid: Grid, nu_bar: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Second-order backward difference with extrapolated forcing ``2 F^n - F^{n-1}``."""
    fh = grid.fft(2.0 * f_now - f_old)
    uh = (4.0 * grid.fft(u_now) - grid.fft(u_old) + 2.0 * dt * grid.project_spectral(fh)) \
        / (3.0 + 2.0 * nu_bar * grid.k2 * dt)
    return grid.ifft(uh), grid.ifft(pressure_from_forcing(grid, fh))


# -- forcing -------------------------------------------------------------------

def skew_convection(grid: Grid, a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(a . grad v + div(a (x) v)) / 2``, dealiased."""
    jac = grid.jacobian_array(v)  # jac[i, j] = d_j v_i
    adv = np.einsum("j...,ij...->i...", a, jac)
    flux = np.stack([grid.div_array(a * v[i]) for i in range(grid.dim)])
    return grid.dealias(0.5 * (adv + flux))


def grad_viscosity(grid: Grid, rho_vec: np.ndarray, vmodel: ViscosityModel) -> np.ndarray:
    """``grad nu(rho) = sum_i d nu / d rho_i grad rho_i``."""
    dnu = vmodel.gradient(rho_vec)
    out = np.zeros((grid.dim,) + grid.shape)
    for i, s in enumerate(vmodel.slope):
        if s:
            out += dnu[i] * grid.grad_array(rho_vec[i])
    return out


@dataclass
class ForcingParts:
    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.F1 + self.F2 + self.F3 + self.F4

    def norms(self, grid: Grid, p: float = 2.0) -> dict[str, float]:
        return {name: lp_norm_array(magnitude_array(getattr(self, name), grid.dim), p, grid.cell_volume)
                for name in ("F1", "F2", "F3", "F4")}


def momentum_forcing_parts(species: SpeciesState, u: np.ndarray, u_t: Optional[np.ndarray],
                           vmodel: ViscosityModel, u_conv: Optional[np.ndarray] = None,
                           visc_species: Optional[SpeciesState] = None) -> ForcingParts:
    """The four forcing terms.

    ``u_conv`` is the convecting velocity (defaults to ``u``);
    ``visc_species`` supplies the densities entering ``nu`` (defaults to ``species``).
    """
    grid = species.grid
    u = np.asarray(u, dtype=float)
    u_conv = u if u_conv is None else u_conv
    vs = species if visc_species is None else visc_species
    rho = species.rho()
    rv = vs.rho_vec()
    zero = np.zeros_like(u)
    if not np.any(u) and (u_t is None or not np.any(u_t)):
        return ForcingParts(zero, zero.copy(), zero.copy(), zero.copy())

    F1 = zero.copy() if u_t is None else grid.dealias((1.0 - rho) * u_t)
    F2 = -grid.dealias(rho * skew_convection(grid, u_conv, u))
    nu = vmodel(rv)
    if vmodel.is_constant:
        F3 = zero.copy()
        F4 = zero.copy()
    else:
        lap = np.stack([grid.laplacian_array(c) for c in u])
        F3 = grid.dealias((nu - vmodel.nu_bar) * lap)
        jac = grid.jacobian_array(u)
        D = jac + np.swapaxes(jac, 0, 1)
        gnu = grad_viscosity(grid, rv, vmodel)
        F4 = grid.dealias(np.einsum("ij...,j...->i...", D, gnu))
    return ForcingParts(F1, F2, F3, F4)


def momentum_forcing(species: SpeciesState, u: VectorField, u_t_approx: Optional[VectorField],
                     vmodel: ViscosityModel) -> tuple[VectorField, dict[str, float]]:
    """``F`` and the ``L_2`` norms of its four constituents."""
    ut = None if u_t_approx is None else (u_t_approx.values if isinstance(u_t_approx, VectorField) else u_t_approx)
    parts = momentum_forcing_parts(species, u.values, ut, vmodel)
    return VectorField(u.grid, parts.total), parts.norms(u.grid)


def nonlinear_momentum_step(state: FlowState, species: SpeciesState, vmodel: ViscosityModel, dt: float,
                            u_prev: Optional[np.ndarray] = None, order: int = 1,
                            F_prev: Optional[np.ndarray] = None, u_conv: Optional[np.ndarray] = None,
                            visc_species: Optional[SpeciesState] = None,
                            growth_limit: float = 10.0) -> tuple[FlowState, np.ndarray, ForcingParts]:
    """One IMEX step: explicit ``F``, implicit ``nu_bar`` diffusion.

    ``u_prev`` is the velocity one step back (for the backward difference in
    ``F1``; omitted on the first step).  ``order=2`` uses the BDF2 variant
    when ``u_prev`` and ``F_prev`` are available.  Returns the new state,
    the raw forcing (for the next BDF2 step) and its parts.
    """
    grid = state.u.grid
    u = state.u.values
    u_t = None if u_prev is None else (u - u_prev) / dt
    parts = momentum_forcing_parts(species, u, u_t, vmodel, u_conv=u_conv, visc_species=visc_species)
    F = parts.total
    if order == 2 and u_prev is not None and F_prev is not None:
        new_u, pi = _bdf2_stokes(u, u_prev, F, F_prev, grid, vmodel.nu_bar, dt)
        new = FlowState(VectorField(grid, new_u), ScalarField(grid, pi), state.t + dt)
    elif order in (1, 2):
        new = stokes_implicit_step(state.u, VectorField(grid, F), vmodel.nu_bar, dt)
        new.t = state.t + dt
    else:
        raise ValueError(f"order must be 1 or 2, got {order}")
    if not np.all(np.isfinite(new.u.values)):
        raise GuardError("nan", f"non-finite velocity at t={new.t:.6g}", new.t)
    old_sup = float(np.max(np.abs(u)))
    new_sup = float(np.max(np.abs(new.u.values)))
    if old_sup > 0 and new_sup > growth_limit * old_sup:
        raise GuardError("blow-up", f"|u|_inf grew from {old_sup:.3e} to {new_sup:.3e} at t={new.t:.6g}", new.t)
    return new, F, parts


def weighted_energy(species: SpeciesState, u: np.ndarray) -> float:
    """``int rho |u|^2 / 2``."""
    return float(0.5 * np.sum(species.rho() * np.sum(u**2, axis=0)) * species.grid.cell_volume)


# -- maximal regularity probes -------------------------------------------------------

def single_mode_field(grid: Grid, mode: Sequence[int], amplitude: float = 1.0) -> np.ndarray:
    """Divergence-free real field ``A e cos(k . x)`` with ``e`` orthogonal to ``k``."""
    mode = np.asarray(mode, dtype=float)
    if mode.shape != (grid.dim,) or not np.any(mode):
        raise ValueError(f"mode needs {grid.dim} integers, not all zero")
    kvec = mode * 2.0 * np.pi / np.asarray(grid.extent)
    # polarization: a fixed axis made orthogonal to k
    e = np.zeros(grid.dim)
    e[int(np.argmin(np.abs(mode)))] = 1.0
    e -= kvec * (e @ kvec) / (kvec @ kvec)
    e /= np.linalg.norm(e)
    phase = np.tensordot(kvec, grid.coordinates, axes=1)
    return amplitude * e.reshape((grid.dim,) + (1,) * grid.dim) * np.cos(phase)


@dataclass
class StokesProbeConfig:
    """Forcing/initial-datum recipe for the maximal-regularity probe.

    ``forcing_profile`` is ``"none"`` or ``"indicator"`` (forcing switched on
    on ``(0, forcing_t_off]``).
    """

    dim: int = 3
    n: int = 16
    extent: float = 2.0 * np.pi
    nu: float = 1.0
    dt: float = 0.01
    p: float = 2.0
    q: float = 4.0 / 3.0
    r: float = 1.0
    horizons: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    initial_mode: tuple[int, ...] = (2, 0, 0)
    initial_amplitude: float = 1.0
    forcing_mode: tuple[int, ...] = (2, 0, 0)
    forcing_amplitude: float = 0.0
    forcing_profile: str = "none"
    forcing_t_off: float = 1.0

    def __post_init__(self):
        h = list(self.horizons)
        if not h or any(b <= a for a, b in zip(h, h[1:])) or h[0] <= 0:
            raise ValueError(f"horizons must be positive and increasing, got {self.horizons}")
        if self.forcing_profile not in ("none", "indicator"):
            raise ValueError(f"unknown forcing profile {self.forcing_profile!r}")
        if not self.dt > 0 or not self.nu > 0:
            raise ValueError("dt and nu must be positive")

    def scaled(self, c: float) -> "StokesProbeConfig":
        from dataclasses import replace
        return replace(self, initial_amplitude=c * self.initial_amplitude,
                       forcing_amplitude=c * self.forcing_amplitude)


def _probe_forcing(cfg: StokesProbeConfig, grid: Grid, t: float) -> np.ndarray:
    if cfg.forcing_profile == "none" or cfg.forcing_amplitude == 0.0 or t > cfg.forcing_t_off * (1 + 1e-12):
        return np.zeros((grid.dim,) + grid.shape)
    return single_mode_field(grid, cfg.forcing_mode[:grid.dim], cfg.forcing_amplitude)


def run_stokes_probe(cfg: StokesProbeConfig) -> tuple[Trajectory, np.ndarray]:
    """Linear Stokes run to the largest horizon; returns the trajectory and ``||f(t_i)||_p``."""
    grid = make_grid(cfg.dim, cfg.extent, cfg.n)
    u0 = single_mode_field(grid, cfg.initial_mode[:grid.dim], cfg.initial_amplitude) \
        if cfg.initial_amplitude else np.zeros((grid.dim,) + grid.shape)
    traj = Trajectory(grid, nu=cfg.nu)
    traj.append(0.0, u0, None)
    fnorm = [0.0]
    steps = int(round(cfg.horizons[-1] / cfg.dt))
    u = VectorField(grid, u0)
    for m in range(1, steps + 1):
        t = m * cfg.dt
        f = _probe_forcing(cfg, grid, t)
        new = stokes_implicit_step(u, VectorField(grid, f), cfg.nu, cfg.dt)
        traj.append(t, new.u.values, (new.u.values - u.values) / cfg.dt)
        fnorm.append(lp_norm_array(magnitude_array(f, grid.dim), cfg.p, grid.cell_volume))
        u = new.u
    return traj, np.asarray(fnorm)


def maximal_regularity_ratio(probe: StokesProbeConfig) -> list[dict]:
    """``R(T)`` for every horizon of the probe.

    ``R = [sup ||u||_B + ||u_t||_{L_{q,r}(L_p)} + ||nu grad^2 u||_{L_{q,r}(L_p)}]
          / [||f||_{L_{q,r}(L_p)} + ||u_0||_B]`` with ``B = B^{2-2/q}_{p,r}`` homogeneous.
    """
    traj, fnorm = run_stokes_probe(probe)
    bidx = BesovIndex(2.0 - 2.0 / probe.q, probe.p, probe.r)
    u0_b = besov_norm_array(traj.grid, traj.u[0], bidx)
    t = traj.stamps()
    out = []
    for T in probe.horizons:
        sub = traj.truncated(T)
        parts = w21_parts(sub, probe.p, probe.q, probe.r, nu=probe.nu)
        nsub = len(sub)
        f_w = np.diff(t[:nsub])
        f_part = time_lorentz_norm(fnorm[1:nsub], f_w, probe.q, probe.r) if np.any(fnorm[1:nsub]) else 0.0
        den = f_part + u0_b
        if den == 0.0:
            raise ValueError("degenerate denominator: zero forcing and zero initial datum")
        num = parts["total"]
        out.append({"T": float(T), "ratio": num / den,
                     "numerator_parts": {"trace": parts["trace"], "u_t": parts["dt"], "hess": parts["hess"]},
                     "denominator_parts": {"forcing": f_part, "initial": u0_b}})
    return out


def ratio_spread(results: Sequence[dict]) -> float:
    """``(max R - min R) / min R`` across a horizon ladder."""
    r = np.array([x["ratio"] for x in results])
    return float((r.max() - r.min()) / r.min())


def embedding_exponents_ok(s: float, m: float, q: float, p: float, which: str, d: int = 3) -> bool:
    if which == "u":
        lhs, rhs = d / (2 * m) + 1 / s, 1 / q + d / (2 * p) - 1
    elif which == "grad_u":
        lhs, rhs = d / m + 2 / s, 2 / q + d / p - 1
    else:
        raise ValueError(f"which must be 'u' or 'grad_u', got {which!r}")
    return abs(lhs - rhs) <= 1e-12


def embedding_probe(traj: Trajectory, s: float, m: float, q: float, r: float, p: float,
                    which: str = "u", d: Optional[int] = None) -> float:
    """``||z||_{L_{s,r}(L_m)} / ||u||_{W^{2,1}_{p,(q,r)}}`` with ``z = u`` or ``grad u``.

    The exponents must satisfy the scaling relation of the chosen variant.
    """
    d = traj.grid.dim if d is None else d
    if not embedding_exponents_ok(s, m, q, p, which, d):
        raise ValueError(f"exponent relation violated for {which}: s={s}, m={m}, q={q}, p={p}, d={d}")
    num = spacetime_lorentz_norm(traj, which, s, r, m)
    den = w21_parts(traj, p, q, r)["total"]
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den
