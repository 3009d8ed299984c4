"""Time-stamped record of a run: velocity snapshots, their backward
differences, species snapshots and per-step scalar diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .grid import Grid, magnitude_array


def cell_weights(times: np.ndarray) -> np.ndarray:
    """Measure of the midpoint cell around each stamp; sums to ``t[-1] - t[0]``."""
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two stamps")
    mids = 0.5 * (t[1:] + t[:-1])
    edges = np.concatenate(([t[0]], mids, [t[-1]]))
    return np.diff(edges)


@dataclass
class Trajectory:
    grid: Grid
    times: list[float] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    u_t: list[Optional[np.ndarray]] = field(default_factory=list)
    species: list[Any] = field(default_factory=list)
    nu: float = 1.0
    step_times: list[float] = field(default_factory=list)
    scalars: dict[str, list[float]] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def append(self, t: float, u: np.ndarray, u_t: Optional[np.ndarray], species: Any = None) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"time stamps must increase ({t} after {self.times[-1]})")
        if u.shape != (self.grid.dim,) + self.grid.shape:
            raise ValueError(f"velocity snapshot has shape {u.shape}")
        self.times.append(float(t))
        self.u.append(u)
        self.u_t.append(u_t)
        if species is not None:
            self.species.append(species)

    def record(self, t: float, **values: float) -> None:
        """Append one row of per-step scalars."""
        self.step_times.append(float(t))
        for key, val in values.items():
            self.scalars.setdefault(key, []).append(float(val))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def horizon(self) -> float:
        return self.times[-1] - self.times[0] if self.times else 0.0

    def stamps(self) -> np.ndarray:
        return np.asarray(self.times)

    def hessian(self, i: int) -> np.ndarray:
        """Spectral second gradient of ``u`` at snapshot ``i``: ``(dim, dim, dim, *shape)``."""
        g = self.grid
        uh = g.fft(self.u[i])
        return np.stack([g.ifft(h) for h in (g.hessian_spectral(c) for c in uh)])

    def grad_u(self, i: int) -> np.ndarray:
        return self.grid.jacobian_array(self.u[i])

    def grad_u_sup(self, i: int) -> float:
        return float(np.max(magnitude_array(self.grad_u(i), self.grid.dim)))

    def truncated(self, horizon: float) -> "Trajectory":
        """Prefix of the record with ``t - t0 <= horizon`` (shares arrays)."""
        t0 = self.times[0]
        keep = [i for i, t in enumerate(self.times) if t - t0 <= horizon * (1 + 1e-12)]
        out = Trajectory(self.grid, nu=self.nu, meta=dict(self.meta))
        out.times = [self.times[i] for i in keep]
        out.u = [self.u[i] for i in keep]
        out.u_t = [self.u_t[i] for i in keep]
        if self.species:
            out.species = [self.species[i] for i in keep]
        steps = [i for i, t in enumerate(self.step_times) if t - t0 <= horizon * (1 + 1e-12)]
        out.step_times = [self.step_times[i] for i in steps]
        out.scalars = {k: [v[i] for i in steps] for k, v in self.scalars.items()}
        return out
