"""Production rates, the species right-hand side, the structural sign
condition and the viscosity law.

A reaction turns ``k`` reactants ``a`` into ``l`` products ``b`` inside a
dilutant ``w``.  Rates ``omega_m`` depend on the reactants only.  Built-in
models are polynomials with nonnegative coefficients where every term of
``omega_m`` carries at least one factor ``a_m``, which makes ``omega_m``
vanish with its own reactant.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from .grid import Grid, ScalarField

NEG_TOL = 1e-12


@dataclass(frozen=True)
class Term:
    coefficient: float
    exponents: tuple[int, ...]


@dataclass(frozen=True)
class ReactionModel:
    """Single irreversible reaction ``a_1 + .. + a_k -> b_1 .. b_l``.

    ``terms[m]`` lists the monomials of ``omega_m``.  When ``omega`` /
    ``omega_jacobian`` callables are supplied they replace the polynomial
    evaluation and the structural checks become advisory.
    """

    k: int
    l: int
    theta: tuple[float, ...]
    terms: tuple[tuple[Term, ...], ...] = ()
    alpha: Mapping[int, float] = field(default_factory=lambda: {3: 2.0 / 3.0, 6: 1.0 / 3.0})
    name: str = "custom"
    omega_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.shape != (self.l,):
            raise ValueError(f"theta needs {self.l} entries, got {th.size}")
        if np.any(th < 0) or abs(th.sum() - 1.0) > 1e-12:
            raise ValueError(f"theta must be nonnegative and sum to 1, got {self.theta}")
        if self.omega_fn is None:
            if len(self.terms) != self.k:
                raise ValueError(f"need one term list per reactant ({self.k}), got {len(self.terms)}")
            for m, terms in enumerate(self.terms):
                for t in terms:
                    if len(t.exponents) != self.k or any(e < 0 for e in t.exponents):
                        raise ValueError(f"omega_{m + 1}: bad exponent vector {t.exponents}")
                    if t.coefficient < 0:
                        raise ValueError(f"omega_{m + 1}: negative coefficient {t.coefficient}")
                    if t.exponents[m] < 1:
                        raise ValueError(f"omega_{m + 1} must vanish with a_{m + 1}: term {t.exponents} lacks the factor")
        for p, a in self.alpha.items():
            if not 0 < a < 1:
                raise ValueError(f"alpha_{p} = {a} outside (0, 1)")

    @property
    def is_null(self) -> bool:
        return self.omega_fn is None and all(len(t) == 0 for t in self.terms)

    @property
    def is_toymodel(self) -> bool:
        return self.name == "toymodel"

    def alpha_for(self, p: float) -> float:
        if p in self.alpha:
            return float(self.alpha[p])
        return 2.0 / p

    def omega(self, a: np.ndarray) -> np.ndarray:
        """Rates ``omega_m(a)``; ``a`` has shape ``(k, ...)``."""
        a = np.asarray(a, dtype=float)
        if self.omega_fn is not None:
            return np.asarray(self.omega_fn(a), dtype=float)
        out = np.zeros_like(a)
        for m, terms in enumerate(self.terms):
            for t in terms:
                mono = np.full(a.shape[1:], t.coefficient)
                for i, e in enumerate(t.exponents):
                    if e:
                        mono = mono * a[i] ** e
                out[m] += mono
        return out

    def omega_jacobian(self, a: np.ndarray) -> np.ndarray:
        """``J[m, i] = d omega_m / d a_i``, shape ``(k, k, ...)``."""
        a = np.asarray(a, dtype=float)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(a), dtype=float)
        if self.omega_fn is not None:
            raise NotImplementedError("custom omega without jacobian_fn")
        out = np.zeros((self.k,) + a.shape)
        for m, terms in enumerate(self.terms):
            for t in terms:
                for i, ei in enumerate(t.exponents):
                    if ei == 0:
                        continue
                    mono = np.full(a.shape[1:], t.coefficient * ei)
                    for j, e in enumerate(t.exponents):
                        pw = e - 1 if j == i else e
                        if pw:
                            mono = mono * a[j] ** pw
                    out[m, i] += mono
        return out


def toymodel(theta: Sequence[float] = (1.0,)) -> ReactionModel:
    """``a_1 + a_2 -> b`` with ``omega_1 = a_1^2 a_2`` and ``omega_2 = a_2^2 a_1``."""
    terms = ((Term(1.0, (2, 1)),), (Term(1.0, (1, 2)),))
    return ReactionModel(k=2, l=len(theta), theta=tuple(theta), terms=terms, name="toymodel")


def null_model(k: int = 2, l: int = 1, theta: Optional[Sequence[float]] = None) -> ReactionModel:
    theta = tuple(theta) if theta is not None else (1.0 / l,) * l
    return ReactionModel(k=k, l=l, theta=theta, terms=((),) * k, name="null")


def _as_reactants(model: ReactionModel, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[0] != model.k:
        raise ValueError(f"expected {model.k} reactant components, got {a.shape[0]}")
    if np.any(a < -NEG_TOL):
        raise ValueError(f"negative reactant value {a.min()} below tolerance")
    return np.maximum(a, 0.0)


def production_rates(model: ReactionModel, a) -> np.ndarray:
    """``omega(a) >= 0`` for reactant values ``a`` of shape ``(k, ...)``."""
    return model.omega(_as_reactants(model, a))


def species_rhs(model: ReactionModel, w, a, b) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reaction part of the species equations: ``(0, -omega, theta_j sum omega)``."""
    a = _as_reactants(model, a)
    b = np.asarray(b, dtype=float)
    om = model.omega(a)
    total = np.sum(om, axis=0)
    db = np.stack([th * total for th in model.theta])
    return np.zeros_like(np.asarray(w, dtype=float)), -om, db


# -- reaction ODE integration ---------------------------------------------------

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass
class ReactionStats:
    substeps: int = 0
    rejected: int = 0


def _toy_exact(a: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    # omega_1/a_1 = omega_2/a_2 = a_1 a_2, so a_1/a_2 is constant along the ODE
    fac = 1.0 / np.sqrt(1.0 + 2.0 * dt * a[0] * a[1])
    new = a * fac
    return new, np.sum(a - new, axis=0)


def integrate_reactions(model: ReactionModel, a: np.ndarray, dt: float, rtol: float = 1e-10,
                        atol: float = 1e-14, method: str = "dopri",
                        stats: Optional[ReactionStats] = None) -> tuple[np.ndarray, np.ndarray]:
    """Advance ``a' = -omega(a)`` pointwise over ``dt``.

    Returns ``(a_new, reacted)`` where ``reacted = int sum_i omega_i dt`` is the
    amount handed to the products.  The reacted amount is integrated as an
    extra ODE component with the same Runge-Kutta weights, so
    ``sum(a_new) + reacted == sum(a)`` up to round-off.

    ``method="exact"`` uses the closed-form solution of the toymodel.
    Steps are adaptive with one step size shared by all points and rejected
    when the embedded error is too large or any reactant turns negative.
    """
    a = _as_reactants(model, a)
    if model.is_null or dt == 0.0:
        return a.copy(), np.zeros(a.shape[1:])
    if method == "exact":
        if not model.is_toymodel:
            raise ValueError("exact reaction integrator is only available for the toymodel")
        return _toy_exact(a, dt)

    def rhs(y):
        om = model.omega(np.maximum(y[:-1], 0.0))
        return np.concatenate([-om, np.sum(om, axis=0)[None]])

    y = np.concatenate([a, np.zeros((1,) + a.shape[1:])])
    scale = max(float(np.max(a)), 1e-300)
    t = 0.0
    h = dt
    k1 = rhs(y)
    stats = stats if stats is not None else ReactionStats()
    while t < dt:
        h = min(h, dt - t)
        ks = [k1]
        for s in range(1, 7):
            ys = y + h * sum(c * kk for c, kk in zip(_DP_A[s], ks))
            ks.append(rhs(ys))
        y5 = y + h * sum(b * kk for b, kk in zip(_DP_B5, ks) if b != 0.0)
        err = h * sum((b5 - b4) * kk for b5, b4, kk in zip(_DP_B5, _DP_B4, ks))
        tol = atol * scale + rtol * np.maximum(np.abs(y), np.abs(y5))
        enorm = float(np.max(np.abs(err) / tol))
        if enorm <= 1.0 and np.all(y5[:-1] >= 0.0):
            t = dt if h == dt - t else t + h
            y = y5
            k1 = ks[-1]  # FSAL
            stats.substeps += 1
            fac = 5.0 if enorm == 0 else min(5.0, 0.9 * enorm ** (-0.2))
            h *= fac
        else:
            stats.rejected += 1
            h *= 0.5 if not np.all(y5[:-1] >= 0.0) else max(0.2, 0.9 * enorm ** (-0.2))
            if h < 1e-14 * dt:
                raise RuntimeError("reaction integrator step size underflow")
    return y[:-1], y[-1]


# -- structural condition ----------------------------------------------------------

@dataclass
class StructuralForm:
    field: ScalarField
    masked_fraction: float
    scale: float

    @property
    def min_relative(self) -> float:
        return float(self.field.values.min()) / self.scale if self.scale > 0 else 0.0


def structural_form_field(model: ReactionModel, species, p: float, direction: int,
                          alpha: Optional[float] = None, eps_floor: Optional[float] = None) -> StructuralForm:
    """Pointwise ``S = sum_m a_m^{-(p-1)alpha} |d_j a_m|^{p-2} d_j a_m d_j(omega_m a_m^{-alpha})``.

    ``d_j(omega_m a_m^{-alpha})`` is expanded with the chain rule through
    ``omega_jacobian`` and spectral gradients of ``a``.  Points where some
    reactant is at or below ``eps_floor`` are set to 0 and counted in
    ``masked_fraction``.  ``scale`` is the largest pointwise sum of the
    absolute values of the individual terms.
    """
    alpha = model.alpha_for(p) if alpha is None else alpha
    if not 0 < alpha < 1:
        raise ValueError(f"alpha = {alpha} outside (0, 1)")
    grid = species.grid
    a = np.asarray(species.a, dtype=float)
    if eps_floor is None:
        eps_floor = 1e-8 * max(float(np.max(a)), 1e-300)
    ok = np.all(a > eps_floor, axis=0)
    safe = np.where(ok, a, 1.0)
    da = np.stack([grid.grad_array(a[m])[direction] for m in range(model.k)])
    om = model.omega(safe)
    jac = model.omega_jacobian(safe)
    total = np.zeros(grid.shape)
    absum = np.zeros(grid.shape)
    for m in range(model.k):
        d_ratio = safe[m] ** (-alpha) * np.sum(jac[m] * da, axis=0) \
            - alpha * om[m] * safe[m] ** (-alpha - 1.0) * da[m]
        weight = safe[m] ** (-(p - 1.0) * alpha) * np.abs(da[m]) ** (p - 2.0) * da[m]
        # split d_ratio into its individual summands for the scale
        parts = [safe[m] ** (-alpha) * jac[m, i] * da[i] for i in range(model.k)]
        parts.append(-alpha * om[m] * safe[m] ** (-alpha - 1.0) * da[m])
        total += weight * d_ratio
        absum += sum(np.abs(weight * q) for q in parts)
    total = np.where(ok, total, 0.0)
    absum = np.where(ok, absum, 0.0)
    return StructuralForm(ScalarField(grid, total), float(1.0 - ok.mean()), float(absum.max()))


def young_gap(beta, zeta, p: float, alpha: Optional[float] = None):
    """``(2-alpha) beta zeta^p + (2-alpha)/beta - zeta^(p-1) - zeta``.

    ``alpha`` defaults to ``2/p``; other values are evaluated but warned about.
    """
    beta = np.asarray(beta, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if np.any(beta <= 0) or np.any(zeta <= 0):
        raise ValueError("beta and zeta must be positive")
    if alpha is None:
        alpha = 2.0 / p
    elif abs(2.0 - p * alpha) > 1e-12:
        warnings.warn(f"alpha={alpha} does not satisfy 2 - p*alpha = 0 for p={p}", stacklevel=2)
    c = 2.0 - alpha
    g = c * beta * zeta**p + c / beta - zeta ** (p - 1.0) - zeta
    return float(g) if g.ndim == 0 else g


def young_gap_scan(p: float, lo: float = 1e-3, hi: float = 1e3, points: int = 200,
                   alpha: Optional[float] = None) -> dict:
    """Minimum of ``young_gap`` over a ``points x points`` log grid."""
    b = np.logspace(math.log10(lo), math.log10(hi), points)
    B, Z = np.meshgrid(b, b, indexing="ij")
    g = young_gap(B, Z, p, alpha)
    i = np.unravel_index(np.argmin(g), g.shape)
    return {"p": p, "alpha": 2.0 / p if alpha is None else alpha, "min": float(g[i]),
            "argmin_beta": float(B[i]), "argmin_zeta": float(Z[i]),
            "fraction_negative": float(np.mean(g < 0))}


# -- viscosity -------------------------------------------------------------------

@dataclass(frozen=True)
class ViscosityModel:
    """``nu(rho) = max(floor, nu_bar + slope . (rho - e_1))``."""

    nu_bar: float
    slope: tuple[float, ...]
    floor: float = 1e-3

    def __post_init__(self):
        if self.nu_bar <= 0 or self.floor <= 0:
            raise ValueError("nu_bar and floor must be positive")
        if self.floor > self.nu_bar:
            raise ValueError("floor must not exceed nu_bar")

    @property
    def lipschitz(self) -> float:
        """Constant in ``|nu(rho) - nu_bar| <= L ||rho - e_1||_inf``."""
        return float(np.sum(np.abs(self.slope)))

    @property
    def is_constant(self) -> bool:
        return not any(self.slope)

    def _affine(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if rho.shape[0] != len(self.slope):
            raise ValueError(f"rho has {rho.shape[0]} components, slope has {len(self.slope)}")
        out = np.full(rho.shape[1:], self.nu_bar)
        for i, s in enumerate(self.slope):
            if s:
                out = out + s * (rho[i] - (1.0 if i == 0 else 0.0))
        return out

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return np.maximum(self._affine(rho), self.floor)

    def gradient(self, rho: np.ndarray) -> np.ndarray:
        """``d nu / d rho_i``, zero where the floor is active."""
        active = self._affine(rho) > self.floor
        return np.stack([np.where(active, s, 0.0) for s in self.slope])


def viscosity_eval(vmodel: ViscosityModel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(rho)):
        raise ValueError("non-finite density")
    return vmodel(rho)


# -- species state -----------------------------------------------------------------

@dataclass
class SpeciesState:
    """Dilutant ``w``, reactants ``a`` (k, ...) and products ``b`` (l, ...)."""

    grid: Grid
    w: np.ndarray
    a: np.ndarray
    b: np.ndarray
    model: ReactionModel

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.a = np.asarray(self.a, dtype=float).reshape((self.model.k,) + self.grid.shape)
        self.b = np.asarray(self.b, dtype=float).reshape((self.model.l,) + self.grid.shape)
        if self.w.shape != self.grid.shape:
            raise ValueError("w does not match the grid")

    @property
    def M(self) -> int:
        return 1 + self.model.k + self.model.l

    def rho_vec(self) -> np.ndarray:
        return np.concatenate([self.w[None], self.a, self.b])

    def rho(self) -> np.ndarray:
        return self.w + np.sum(self.a, axis=0) + np.sum(self.b, axis=0)

    def names(self) -> list[str]:
        return ["w"] + [f"a{i + 1}" for i in range(self.model.k)] + [f"b{j + 1}" for j in range(self.model.l)]

    def copy(self) -> "SpeciesState":
        return SpeciesState(self.grid, self.w.copy(), self.a.copy(), self.b.copy(), self.model)

    def min_value(self) -> float:
        return float(self.rho_vec().min())

    @classmethod
    def reference(cls, grid: Grid, model: ReactionModel) -> "SpeciesState":
        """The pure-dilutant state ``e_1``."""
        return cls(grid, np.ones(grid.shape), np.zeros((model.k,) + grid.shape),
                   np.zeros((model.l,) + grid.shape), model)


# -- model description files ----------------------------------------------------------

def model_from_dict(d: Mapping) -> tuple[ReactionModel, Optional[ViscosityModel]]:
    """Build models from the structured description (see README for the schema)."""
    known = {"name", "reactants", "products", "theta", "omega", "alpha", "viscosity"}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    k = int(d["reactants"])
    l = int(d["products"])
    name = str(d.get("name", "custom"))
    if name == "toymodel" and "omega" not in d:
        model = toymodel(d.get("theta", (1.0,)))
    else:
        terms = tuple(tuple(Term(float(t["coefficient"]), tuple(int(e) for e in t["exponents"]))
                            for t in tl) for tl in d.get("omega", [[] for _ in range(k)]))
        alpha = {int(p): float(v) for p, v in d.get("alpha", {3: 2 / 3, 6: 1 / 3}).items()}
        model = ReactionModel(k=k, l=l, theta=tuple(float(x) for x in d["theta"]), terms=terms,
                              alpha=alpha, name=name)
    visc = None
    if "viscosity" in d:
        v = d["viscosity"]
        M = 1 + k + l
        slope = tuple(float(x) for x in v.get("slope", [0.0] * M))
        if len(slope) != M:
            raise ValueError(f"viscosity slope needs {M} entries")
        visc = ViscosityModel(float(v["nu_bar"]), slope, float(v.get("floor", 1e-3)))
    return model, visc


def load_model(path: Union[str, Path]) -> tuple[ReactionModel, Optional[ViscosityModel]]:
    with open(path) as fh:
        return model_from_dict(yaml.safe_load(fh))
