"""Periodic torus grids, spectral calculus and spatial L_p norms.

Everything here is pure: inputs are never modified and results are freshly
allocated.  Arrays follow the ``(component, *grid.shape)`` layout for vector
data and ``grid.shape`` for scalars.  Transforms are unnormalised forward FFTs
(``numpy.fft.fftn``) over the trailing ``dim`` axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on ``[0, L_1) x ... x [0, L_dim)``."""

    dim: int
    extent: tuple[float, ...]
    n: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @cached_property
    def spacing(self) -> np.ndarray:
        return np.array([L / m for L, m in zip(self.extent, self.n)])

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    @cached_property
    def frequency_index(self) -> tuple[np.ndarray, ...]:
        """Integer FFT frequencies per axis, e.g. ``[0, 1, .., n/2-1, -n/2, .., -1]``."""
        return tuple(np.rint(np.fft.fftfreq(m) * m).astype(int) for m in self.n)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return tuple(2.0 * np.pi / L * idx for L, idx in zip(self.extent, self.frequency_index))

    @cached_property
    def k(self) -> np.ndarray:
        """Broadcast wavevector, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.wavenumbers, indexing="ij"))

    @cached_property
    def k_odd(self) -> np.ndarray:
        """Wavevector with the Nyquist entries zeroed (used for odd derivatives).

        A real field cannot carry the derivative of its Nyquist mode, so first
        derivatives, divergence and the Leray projector all use this vector.
        """
        ks = []
        for kk, idx, m in zip(self.wavenumbers, self.frequency_index, self.n):
            kk = kk.copy()
            kk[idx == -m // 2] = 0.0
            ks.append(kk)
        return np.stack(np.meshgrid(*ks, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        idx = np.meshgrid(*self.frequency_index, indexing="ij")
        keep = np.ones(self.shape, dtype=bool)
        for m, i in zip(self.n, idx):
            keep &= np.abs(i) <= m / 3.0
        return keep

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Sample locations, shape ``(dim, *shape)``."""
        axes = [np.arange(m) * h for m, h in zip(self.n, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    # -- array level transforms -------------------------------------------
    @property
    def _axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def fft(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values, axes=self._axes)

    def ifft(self, spectral: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(spectral, axes=self._axes).real

    def grad_array(self, values: np.ndarray) -> np.ndarray:
        """Spectral gradient of a scalar array -> ``(dim, *shape)``."""
        fh = self.fft(values)
        return self.ifft(1j * self.k_odd * fh)

    def jacobian_array(self, v: np.ndarray) -> np.ndarray:
        """``J[i, j] = d v_i / d x_j`` for a vector array ``v``."""
        vh = self.fft(v)
        return self.ifft(1j * self.k_odd[None, :] * vh[:, None])

    def div_array(self, v: np.ndarray) -> np.ndarray:
        vh = self.fft(v)
        return self.ifft(np.sum(1j * self.k_odd * vh, axis=0))

    def laplacian_array(self, values: np.ndarray) -> np.ndarray:
        return self.ifft(-self.k2 * self.fft(values))

    def hessian_spectral(self, fh: np.ndarray) -> np.ndarray:
        """Second derivatives ``d_j d_l`` of spectral data, shape ``(dim, dim, ...)``.

        Diagonal entries use the full wavenumber so that the trace equals the
        spectral Laplacian exactly; mixed entries use the Nyquist-free vector.
        """
        d = self.dim
        out = np.empty((d, d) + fh.shape, dtype=complex)
        for j in range(d):
            for l in range(d):
                if j == l:
                    out[j, l] = -(self.k[j] ** 2) * fh
                else:
                    out[j, l] = -(self.k_odd[j] * self.k_odd[l]) * fh
        return out

    def project_array(self, v: np.ndarray) -> np.ndarray:
        return self.ifft(self.project_spectral(self.fft(v)))

    def project_spectral(self, vh: np.ndarray) -> np.ndarray:
        """Mode-wise ``(I - k k^T/|k|^2) v_hat``; modes with ``k = 0`` pass through."""
        kk = self.k_odd
        k2 = np.sum(kk**2, axis=0)
        safe = np.where(k2 > 0.0, k2, 1.0)
        kdotv = np.sum(kk * vh, axis=0)
        return vh - kk * (kdotv / safe)

    def dealias(self, values: np.ndarray) -> np.ndarray:
        return self.ifft(self.fft(values) * self.dealias_mask)


def make_grid(dim: int, extent: Union[float, Sequence[float]], points_per_axis: int) -> Grid:
    """Build a periodic grid.

    Parameters
    ----------
    dim : int
        2 or 3.
    extent : float or sequence of float
        Period ``L`` (scalar, or one value per axis).
    points_per_axis : int
        Even resolution ``n >= 8``.

    Examples
    --------
    >>> g = make_grid(2, 2 * np.pi, 8)
    >>> g.frequency_index[0].min(), g.frequency_index[0].max()
    (-4, 3)
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    n = int(points_per_axis)
    if n != points_per_axis or n < 8 or n % 2:
        raise ValueError(f"points_per_axis must be an even integer >= 8, got {points_per_axis}")
    ext = np.broadcast_to(np.asarray(extent, dtype=float), (dim,))
    if not np.all(np.isfinite(ext)) or np.any(ext <= 0):
        raise ValueError(f"extent must be positive, got {extent}")
    return Grid(dim=dim, extent=tuple(float(L) for L in ext), n=(n,) * dim)


class ScalarField:
    """Real samples on a grid with a lazily computed spectral companion."""

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
        self.grid = grid
        self.values = values

    @cached_property
    def spectral(self) -> np.ndarray:
        return self.grid.fft(self.values)

    @classmethod
    def from_spectral(cls, grid: Grid, spectral: np.ndarray) -> "ScalarField":
        f = cls(grid, grid.ifft(spectral))
        f.__dict__["spectral"] = spectral
        return f

    def mean(self) -> float:
        return float(np.mean(self.values))

    def __repr__(self) -> str:
        return f"ScalarField(shape={self.grid.shape})"


class VectorField:
    """``dim`` scalar components on one shared grid, stored stacked."""

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.dim,) + grid.shape:
            raise ValueError(f"vector values must have shape {(grid.dim,) + grid.shape}, got {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def from_components(cls, components: Sequence[ScalarField]) -> "VectorField":
        grid = components[0].grid
        if any(c.grid != grid for c in components):
            raise ValueError("all components must share one grid")
        return cls(grid, np.stack([c.values for c in components]))

    @property
    def components(self) -> list[ScalarField]:
        return [ScalarField(self.grid, c) for c in self.values]

    @cached_property
    def spectral(self) -> np.ndarray:
        return self.grid.fft(self.values)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=0))

    def __repr__(self) -> str:
        return f"VectorField(dim={self.grid.dim}, shape={self.grid.shape})"


Field = Union[ScalarField, VectorField]


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError("field contains non-finite values")


def gradient(f: ScalarField) -> VectorField:
    _check_finite(f.values)
    g = f.grid
    return VectorField(g, g.ifft(1j * g.k_odd * f.spectral))


def divergence(v: VectorField) -> ScalarField:
    _check_finite(v.values)
    g = v.grid
    return ScalarField(g, g.ifft(np.sum(1j * g.k_odd * v.spectral, axis=0)))


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(g, g.ifft(-g.k2 * f.spectral))


def leray_project(v: VectorField) -> VectorField:
    """Orthogonal projection onto divergence-free fields (mean mode untouched)."""
    _check_finite(v.values)
    g = v.grid
    return VectorField(g, g.ifft(g.project_spectral(v.spectral)))


def pointwise_magnitude(f: Field) -> np.ndarray:
    if isinstance(f, VectorField):
        return f.magnitude()
    return np.abs(f.values)


def magnitude_array(a: np.ndarray, dim: int) -> np.ndarray:
    """Pointwise Euclidean magnitude over all leading (non-grid) axes of ``a``."""
    lead = a.shape[: a.ndim - dim]
    if not lead:
        return np.abs(a)
    return np.sqrt(np.sum(a.reshape((-1,) + a.shape[a.ndim - dim:]) ** 2, axis=0))


def lp_norm_array(mag: np.ndarray, p: float, cell_volume: float) -> float:
    """Quadrature ``(sum |f|^p dV)^(1/p)`` of nonnegative samples; ``max`` for ``p = inf``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    m = float(np.max(mag)) if mag.size else 0.0
    if np.isinf(p):
        return m
    if m == 0.0:
        return 0.0
    # scaled to avoid overflow for large p
    return m * float(np.sum((mag / m) ** p) * cell_volume) ** (1.0 / p)


def spatial_norm(f: Field, p: float) -> float:
    """Discrete ``L_p`` norm on the torus; vectors use the pointwise Euclidean magnitude."""
    return lp_norm_array(pointwise_magnitude(f), p, f.grid.cell_volume)


def spectral_l2_norm(f: Field) -> float:
    """``L_2`` norm evaluated on the Fourier side (Parseval companion of ``spatial_norm``)."""
    g = f.grid
    s = np.sum(np.abs(f.spectral) ** 2)
    return float(np.sqrt(s * g.cell_volume / g.size))


def inner_product(f: Field, h: Field) -> float:
    return float(np.sum(f.values * h.values) * f.grid.cell_volume)


# -- random band-limited data --------------------------------------------------

def random_smooth_array(grid: Grid, rng: np.random.Generator, kmax: int = 2,
                        decay: float = 1.0) -> np.ndarray:
    """Real zero-mean field built from modes with ``max |index| <= kmax``, scaled to max |f| = 1."""
    idx = np.meshgrid(*grid.frequency_index, indexing="ij")
    band = np.ones(grid.shape, dtype=bool)
    for i in idx:
        band &= np.abs(i) <= kmax
    r2 = sum(i.astype(float) ** 2 for i in idx)
    amp = np.where(band & (r2 > 0), (1.0 + r2) ** (-decay), 0.0)
    coeff = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * amp
    f = grid.ifft(coeff)  # taking the real part enforces conjugate symmetry
    f -= f.mean()
    peak = np.max(np.abs(f))
    return f / peak if peak > 0 else f


def random_solenoidal_array(grid: Grid, rng: np.random.Generator, kmax: int = 2,
                            amplitude: float = 1.0) -> np.ndarray:
    """Divergence-free band-limited vector field with ``max |u| = amplitude``."""
    v = np.stack([random_smooth_array(grid, rng, kmax) for _ in range(grid.dim)])
    v = grid.project_array(v)
    peak = np.max(np.sqrt(np.sum(v**2, axis=0)))
    return amplitude * v / peak if peak > 0 else v
