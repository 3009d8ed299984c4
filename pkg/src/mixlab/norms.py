"""Lorentz, space-time Lorentz and dyadic Besov norms of sampled data.

Lorentz norms are evaluated in closed form from the decreasing
rearrangement: for a step function the layer-cake integral between two
consecutive rearranged values is a power integral, so no quadrature is
involved.  Besov norms use sharp dyadic shells ``2^j <= |k| < 2^(j+1)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .grid import Field, Grid, ScalarField, VectorField, lp_norm_array, magnitude_array
from .trajectory import Trajectory, cell_weights

INF = math.inf


@dataclass(frozen=True)
class WeightedSamples:
    """Values ``|f(t_i)|`` together with the measure ``w_i`` of each sample's cell."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape:
            raise ValueError(f"{v.size} values but {w.size} weights")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("values must be finite and nonnegative")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def distribution(self, s: Union[float, np.ndarray]) -> np.ndarray:
        """``|{|f| > s}|`` by direct counting."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return np.array([float(np.sum(self.weights[self.values > si])) for si in s])


@dataclass(frozen=True)
class LorentzIndex:
    p: float
    r: float

    def __post_init__(self):
        p, r = float(self.p), float(self.r)
        if math.isnan(p) or math.isnan(r) or r < 1:
            raise ValueError(f"invalid Lorentz index ({p}, {r})")
        if math.isinf(p):
            if not math.isinf(r):
                raise ValueError("p = inf is only defined with r = inf")
        elif p == 1:
            if r != 1:
                raise ValueError("p = 1 is only defined with r = 1 (plain L_1)")
        elif p < 1:
            raise ValueError(f"p must exceed 1, got {p}")


@dataclass(frozen=True)
class BesovIndex:
    s: float
    p: float
    q: float

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError(f"Besov integrability/summability must be >= 1, got p={self.p}, q={self.q}")


def decreasing_rearrangement(samples: WeightedSamples) -> WeightedSamples:
    """Sort values descending and carry the weights along.

    Ties are broken by weight (descending) so that every permutation of the
    same data yields the same canonical order.
    """
    order = np.lexsort((-samples.weights, -samples.values))
    return WeightedSamples(samples.values[order], samples.weights[order])


def lorentz_norm(samples: WeightedSamples, idx: LorentzIndex) -> float:
    """``||f||_{L_{p,r}}`` of the step function described by ``samples``.

    Normalised by ``p^(1/r)`` so that ``L_{p,p}`` reproduces ``L_p``.
    """
    re = decreasing_rearrangement(samples)
    v, w = re.values, re.weights
    if v.size == 0 or v[0] == 0.0:
        return 0.0
    p, r = float(idx.p), float(idx.r)
    if math.isinf(p):
        return float(v[0])
    if p == 1.0:
        return float(np.sum(v * w))
    top = v[0]
    x = v / top
    W = np.cumsum(w)
    if math.isinf(r):
        return float(top * np.max(x * W ** (1.0 / p)))
    xr = x**r
    nxt = np.append(xr[1:], 0.0)
    integral = float(np.sum(W ** (r / p) * (xr - nxt))) / r
    return float(top * p ** (1.0 / r) * integral ** (1.0 / r))


def weighted_lp_norm(samples: WeightedSamples, p: float) -> float:
    if math.isinf(p):
        return float(np.max(samples.values)) if samples.values.size else 0.0
    return float(np.sum(samples.weights * samples.values**p) ** (1.0 / p))


def time_lorentz_norm(values: Sequence[float], weights: Sequence[float], q: float, r: float) -> float:
    """Lorentz norm in time of per-sample magnitudes; zero-weight samples dropped."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    return lorentz_norm(WeightedSamples(v[keep], w[keep]), LorentzIndex(q, r))


# -- space-time norms on trajectories ----------------------------------------

Selector = Union[str, Callable[[Trajectory, int], Union[Field, np.ndarray]]]


def _series(traj: Trajectory, selector: Selector) -> tuple[list[int], np.ndarray]:
    """Indices of available samples for ``selector`` and their time weights."""
    times = traj.stamps()
    if selector == "u_t":
        idx = [i for i in range(1, len(traj)) if traj.u_t[i] is not None]
        w = np.array([times[i] - times[i - 1] for i in idx])
        return idx, w
    return list(range(len(traj))), cell_weights(times)


def _pick(traj: Trajectory, selector: Selector, i: int) -> np.ndarray:
    if callable(selector):
        f = selector(traj, i)
        return f.values if isinstance(f, (ScalarField, VectorField)) else np.asarray(f)
    if selector == "u":
        return traj.u[i]
    if selector == "u_t":
        return traj.u_t[i]
    if selector == "grad_u":
        return traj.grad_u(i)
    if selector == "hess_u":
        return traj.hessian(i)
    raise ValueError(f"unknown field selector {selector!r}")


def spatial_norm_series(traj: Trajectory, selector: Selector, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``L_p`` norms of the selected field and the matching time weights."""
    if len(traj) < 2:
        raise ValueError("trajectory needs at least two samples")
    idx, w = _series(traj, selector)
    if not idx:
        raise ValueError(f"empty selection for {selector!r}")
    g = traj.grid
    vals = np.array([lp_norm_array(magnitude_array(_pick(traj, selector, i), g.dim), p, g.cell_volume)
                     for i in idx])
    return vals, w


def spacetime_lorentz_norm(traj: Trajectory, field_selector: Selector, q: float, r: float, p: float) -> float:
    """``||f||_{L_{q,r}(0,T; L_p)}`` over the stored samples."""
    vals, w = spatial_norm_series(traj, field_selector, p)
    return time_lorentz_norm(vals, w, q, r)


def norm_report(norm_name: str, value: float, indices: dict, horizon: float, tail_value: float) -> dict:
    return {"norm_name": norm_name, "indices": indices, "value": float(value),
            "truncation_horizon": float(horizon), "tail_value": float(tail_value)}


def norm_report_json(reports: Sequence[dict]) -> str:
    return json.dumps(list(reports), indent=2, sort_keys=True)


# -- Besov --------------------------------------------------------------------

def dyadic_shells(grid: Grid) -> np.ndarray:
    """Shell index ``floor(log2 |k|)`` per mode; the zero mode gets a sentinel."""
    kmag = grid.kmag
    with np.errstate(divide="ignore"):
        # the offset keeps exact powers of two (|k| = 2^j) in shell j despite rounding
        j = np.floor(np.log2(np.where(kmag > 0, kmag, 1.0)) + 1e-12).astype(int)
    j[kmag == 0] = np.iinfo(int).min
    return j


def besov_blocks(f: Field, p: float, homogeneous: bool = True) -> tuple[dict[int, float], float]:
    """Block norms ``||Delta_j f||_p`` and the separately reported low block.

    Homogeneous: shells over every nonzero mode, the zero mode goes into the
    second return value.  Inhomogeneous: all modes with ``|k| < 1`` (zero mode
    included) form the base block returned second; shells start at ``j = 0``.
    """
    g = f.grid
    j = dyadic_shells(g)
    kmag = g.kmag
    fh = f.spectral
    low = (kmag == 0) if homogeneous else (kmag < 1.0)
    shells = sorted(set(np.unique(j[~low]).tolist()))
    if len(shells) < 3:
        raise ValueError(f"grid resolves only {len(shells)} dyadic shells; need at least 3")

    def block_norm(mask: np.ndarray) -> float:
        if p == 2:
            s = np.sum(np.abs(fh[..., mask]) ** 2)
            return float(np.sqrt(s * g.cell_volume / g.size))
        vals = g.ifft(fh * mask)
        return lp_norm_array(magnitude_array(vals, g.dim), p, g.cell_volume)

    blocks = {jj: block_norm((j == jj) & ~low) for jj in shells}
    return blocks, block_norm(low)


def besov_norm(f: Field, idx: BesovIndex, homogeneous: bool = True) -> float:
    """``l_q`` sum over shells of ``2^(j s) ||Delta_j f||_p``."""
    blocks, low = besov_blocks(f, idx.p, homogeneous)
    terms = np.array([2.0 ** (j * idx.s) * b for j, b in blocks.items()])
    if not homogeneous:
        terms = np.append(terms, low)
    if math.isinf(idx.q):
        return float(np.max(terms))
    return float(np.sum(terms**idx.q) ** (1.0 / idx.q))


def besov_norm_array(grid: Grid, values: np.ndarray, idx: BesovIndex, homogeneous: bool = True) -> float:
    f = VectorField(grid, values) if values.ndim == grid.dim + 1 else ScalarField(grid, values)
    return besov_norm(f, idx, homogeneous)


# -- W^{2,1}_{p,(q,r)} ------------------------------------------------------------

def w21_parts(traj: Trajectory, p: float, q: float, r: float, time_weighted: bool = False,
              nu: float = 1.0) -> dict:
    """Constituents of ``||z||_{W^{2,1}_{p,(q,r)}}`` for ``z = u`` or ``z = t u``.

    Returns a dict with ``trace`` (sup in time of the ``B^{2-2/q}_{p,r}``
    norm), ``dt`` and ``hess`` (the two ``L_{q,r}(L_p)`` norms, the latter
    scaled by ``nu``), ``total`` and the tail samples of each time series.
    For ``z = t u`` the derivative is ``u + t u_t`` by the product rule.
    """
    if len(traj) < 3:
        raise ValueError("W21 norm needs at least three time samples")
    g = traj.grid
    t = traj.stamps()
    bidx = BesovIndex(2.0 - 2.0 / q, p, r)
    wt = t if time_weighted else np.ones_like(t)

    trace = [wt[i] * besov_norm_array(g, traj.u[i], bidx) for i in range(len(traj))]

    d_idx = [i for i in range(1, len(traj)) if traj.u_t[i] is not None]
    d_w = np.array([t[i] - t[i - 1] for i in d_idx])
    d_vals = []
    for i in d_idx:
        z_t = traj.u_t[i] * wt[i] + (traj.u[i] if time_weighted else 0.0)
        d_vals.append(lp_norm_array(magnitude_array(z_t, g.dim), p, g.cell_volume))
    h_vals = [nu * wt[i] * lp_norm_array(magnitude_array(traj.hessian(i), g.dim), p, g.cell_volume)
              for i in range(len(traj))]
    h_w = cell_weights(t)

    dt_part = time_lorentz_norm(d_vals, d_w, q, r)
    hess_part = time_lorentz_norm(h_vals, h_w, q, r)
    trace_part = float(np.max(trace))
    return {"trace": trace_part, "dt": dt_part, "hess": hess_part,
            "total": trace_part + dt_part + hess_part,
            "tail": {"trace": float(trace[-1]), "dt": float(d_vals[-1]), "hess": float(h_vals[-1])},
            "horizon": float(t[-1] - t[0])}


def w21_norm(traj: Trajectory, p: float, q: float, r: float, time_weighted: bool = False) -> float:
    """``sup_t ||z||_{B^{2-2/q}_{p,r}} + ||z_t||_{L_{q,r}(L_p)} + ||grad^2 z||_{L_{q,r}(L_p)}``."""
    return w21_parts(traj, p, q, r, time_weighted)["total"]


# -- Hoelder-type ratios --------------------------------------------------------

def holder_lorentz_check(f_samples: WeightedSamples, g_samples: WeightedSamples,
                         split: tuple[tuple[float, float], tuple[float, float]],
                         target: Optional[tuple[float, float]] = None) -> float:
    """``||f g||_{L_{p,r}} / (||f||_{L_{p1,r1}} ||g||_{L_{p2,r2}})`` with ``1/p = 1/p1 + 1/p2``."""
    (p1, r1), (p2, r2) = split
    if not np.array_equal(f_samples.weights, g_samples.weights):
        raise ValueError("f and g must be sampled on the same cells")
    inv_p = 1.0 / p1 + 1.0 / p2
    inv_r = 1.0 / r1 + 1.0 / r2
    if target is not None:
        p, r = target
        if abs(1.0 / p - inv_p) > 1e-12 or abs(1.0 / r - inv_r) > 1e-12:
            raise ValueError(f"exponents do not match: 1/p={1 / p} vs {inv_p}, 1/r={1 / r} vs {inv_r}")
    p = INF if inv_p == 0 else 1.0 / inv_p
    r = INF if inv_r == 0 else 1.0 / inv_r
    fg = WeightedSamples(f_samples.values * g_samples.values, f_samples.weights)
    num = lorentz_norm(fg, LorentzIndex(p, r))
    den = lorentz_norm(f_samples, LorentzIndex(p1, r1)) * lorentz_norm(g_samples, LorentzIndex(p2, r2))
    if den == 0.0:
        raise ValueError("degenerate denominator")
    return num / den

