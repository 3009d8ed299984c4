"""Acceptance criteria, each at its stated tolerance.

Every test appends one ``PASS``/``FAIL`` line to ``RESULTS``; the lines are
printed in the terminal summary (see ``conftest.py``) and, with ``-s``, as
the tests run.
"""
import math

import numpy as np
import pytest

from mixlab.config import config_from_dict
from mixlab.grid import lp_norm_array, magnitude_array, make_grid, random_smooth_array
from mixlab.momentum import StokesProbeConfig, maximal_regularity_ratio, ratio_spread
from mixlab.norms import LorentzIndex, WeightedSamples, lorentz_norm, weighted_lp_norm
from mixlab.reactions import SpeciesState, structural_form_field, toymodel, young_gap_scan
from mixlab.solver import (THEOREM1_KEYS, gronwall_check, gronwall_fit, initial_state, navier_stokes_reference,
                           picard_segment, simulate, step_error, theorem1_report)
from mixlab.transport import species_invariant_report

pytestmark = pytest.mark.slow

RESULTS: list[str] = []


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# -- shared runs ------------------------------------------------------------------

def coupled_config(**sections):
    base = {
        "grid": {"dim": 3, "n": 32},
        "model": {"name": "toymodel", "theta": [0.3, 0.7]},
        "viscosity": {"nu_bar": 0.5, "slope": [0.1, 0.2, 0.2, 0.1, 0.1]},
        "initial": {"seed": 7, "u_amplitude": 0.2, "a_amplitude": 0.1, "w_perturbation": 0.05},
        "time": {"dt": 0.02, "t_max": 2.0, "cadence": 5},
    }
    for key, val in sections.items():
        base.setdefault(key, {}).update(val)
    return config_from_dict(base)


@pytest.fixture(scope="module")
def coupled_run():
    return simulate(coupled_config())


# -- 1 ----------------------------------------------------------------------------------

def test_c01_lorentz_exactness():
    rng = np.random.default_rng(2024)
    worst, perm_equal = 0.0, True
    for _ in range(1000):
        size = int(rng.integers(1, 60))
        vals = rng.random(size) * 10 ** rng.uniform(-3, 3)
        vals[rng.random(size) < 0.2] = vals[0]  # ties
        w = rng.random(size) + 1e-3
        p = float(rng.uniform(1.05, 8.0))
        s = WeightedSamples(vals, w)
        lp = weighted_lp_norm(s, p)
        worst = max(worst, abs(lorentz_norm(s, LorentzIndex(p, p)) - lp) / lp)
        perm = rng.permutation(size)
        r = float(rng.uniform(1.0, 6.0))
        shuffled = WeightedSamples(vals[perm], w[perm])
        perm_equal &= lorentz_norm(shuffled, LorentzIndex(p, r)) == lorentz_norm(s, LorentzIndex(p, r))
    record(1, "Lorentz L_pp = L_p", worst <= 1e-12 and perm_equal,
           f"max rel diff {worst:.2e} (tol 1e-12), permutation-exact={perm_equal}")


# -- 2 ----------------------------------------------------------------------------------

def test_c02_inverse_sqrt_weight():
    eps, T = 1e-6, 1e6
    edges = np.geomspace(eps, T, 200001)
    mids = np.sqrt(edges[1:] * edges[:-1])
    val = lorentz_norm(WeightedSamples(mids**-0.5, np.diff(edges)), LorentzIndex(2.0, math.inf))
    record(2, "||t^-1/2||_{L_2,inf}", abs(val - 1.0) <= 0.01, f"value {val:.6f} (target 1 within 1%)")


# -- 3 ----------------------------------------------------------------------------------

def test_c03_young_gap():
    scans = {p: young_gap_scan(p, 1e-3, 1e3, 200) for p in (3.0, 6.0)}
    low = min(s["min"] for s in scans.values())
    detail = "; ".join(f"p={p:g}: min {s['min']:.3e} at beta={s['argmin_beta']:.3g}, zeta={s['argmin_zeta']:.3g}"
                       for p, s in scans.items())
    record(3, "Young gap >= -1e-14", low >= -1e-14, detail)


# -- 4 ----------------------------------------------------------------------------------

def test_c04_structural_condition():
    model = toymodel()
    rng = np.random.default_rng(44)
    worst = math.inf
    for dim, n in ((2, 128), (3, 32)):
        g = make_grid(dim, 2 * np.pi, n)
        for _ in range(10):
            a = np.stack([0.2 * (1.0 + 0.5 * random_smooth_array(g, rng, 3)) for _ in range(model.k)])
            s = SpeciesState(g, np.ones(g.shape), a, np.zeros((1,) + g.shape), model)
            for p in (3.0, 6.0):
                for j in range(dim):
                    worst = min(worst, structural_form_field(model, s, p, j).min_relative)
    record(4, "structural form >= -1e-8 scale", worst >= -1e-8, f"min S/scale over 20 fields {worst:.3e}")


# -- 5 ----------------------------------------------------------------------------------

def test_c05_maximum_principle(coupled_run):
    traj = coupled_run
    rep = species_invariant_report(traj.species, rel_tol=1e-8, clamp_masses=traj.meta["clamp_masses"])
    c = rep["checks"]
    ok = all(c[k] for k in ("nonnegative", "w_bound", "a_bound", "b_bound", "clamp_budget")) \
        and rep["conservation_rel"] <= 1e-8
    record(5, "maximum principle", ok,
           f"checks {c}, conservation rel {rep['conservation_rel']:.2e}, clamp mass {rep['clamp_mass']:.2e}")


# -- 6 ----------------------------------------------------------------------------------

def test_c06_b_identity(coupled_run):
    cfg = coupled_config()
    tol = 10 * cfg.transport.reaction_rtol
    fine = coupled_run.meta["decomposition"]
    err_fine = fine.identity_error()
    coarse = simulate(coupled_config(grid={"n": 16}, time={"dt": 0.04, "cadence": 5}))
    dec_c = coarse.meta["decomposition"]
    err_coarse = dec_c.identity_error()
    # first-order splitting in time: refinement must divide the error by 2, unless both sit at round-off
    floor = 1e-14 * max(float(np.max(fine.B)), float(np.max(dec_c.B)))
    converges = err_fine <= max(err_coarse / 2, floor)
    record(6, "b_zero = theta B", err_fine <= tol and converges,
           f"fine {err_fine:.2e}, coarse {err_coarse:.2e} (tol {tol:.0e}, round-off floor {floor:.1e})")


# -- 7 ----------------------------------------------------------------------------------

def test_c07_stokes_maximal_regularity():
    probes = {
        "decaying mode (2,0,0)": StokesProbeConfig(),
        "forced mode (4,0,0) on (0,1]": StokesProbeConfig(initial_amplitude=0.0, forcing_mode=(4, 0, 0),
                                                            forcing_amplitude=1.0, forcing_profile="indicator"),
    }
    spreads = {}
    for name, probe in probes.items():
        spreads[name] = ratio_spread(maximal_regularity_ratio(probe))
    ok = all(s < 0.25 for s in spreads.values())
    record(7, "R(T) spread < 25%", ok, ", ".join(f"{k}: {v:.1%}" for k, v in spreads.items()))


# -- 8 ----------------------------------------------------------------------------------

def gronwall_config(seed):
    return config_from_dict({
        "grid": {"dim": 3, "n": 16}, "viscosity": {"nu_bar": 0.05},
        "initial": {"seed": seed, "u_amplitude": 0.5},
        "time": {"dt": 0.05, "t_max": 2.0, "cadence": 10},
        "transport": {"interpolation": "clamped-cubic"},
        "diagnostics": {"species_snapshots": False, "decomposition": False},
    })


def test_c08_gronwall():
    cal = simulate(gronwall_config(100))
    C = 2.0 * max(gronwall_fit(cal, 3.0), gronwall_fit(cal, 6.0))
    ok, worst = True, 0.0
    for seed in range(5):
        traj = simulate(gronwall_config(seed))
        for p in (3.0, 6.0):
            chk = gronwall_check(traj, p, C)
            ok &= chk["ok"]
            worst = max(worst, chk["max_ratio"])
    record(8, "Groenwall gradient bound", bool(ok) and C > 0,
           f"C = {C:.3f} (calibrated on seed 100), max G/bound over 5 runs {worst:.3f}")


# -- 9 ----------------------------------------------------------------------------------

def picard_config(scale):
    return config_from_dict({
        "grid": {"dim": 3, "n": 16},
        "model": {"name": "toymodel", "theta": [0.3, 0.7]},
        "viscosity": {"nu_bar": 0.2, "slope": [0.1, 0.2, 0.2, 0.1, 0.1]},
        "initial": {"seed": 3, "scale": scale, "u_amplitude": 1.0, "a_amplitude": 0.2, "w_perturbation": 0.1},
        "time": {"dt": 0.025, "t_max": 0.5},
        "diagnostics": {"decomposition": False},
    })


def test_c09_picard():
    scales = (1.0, 0.5, 0.25)
    first, all_below, agree, notes = [], True, True, []
    smallest_ok = False
    for sc in scales:
        cfg = picard_config(sc)
        traj, rep = picard_segment(cfg)
        direct = simulate(cfg)
        g = traj.grid
        diff = max(lp_norm_array(magnitude_array(a - b, g.dim), 2.0, g.cell_volume) for a, b in zip(traj.u, direct.u))
        serr = step_error(cfg)
        agree &= diff <= 5 * serr
        all_below &= all(r < 1 for r in rep.ratios)
        first.append(rep.ratios[0])
        if sc == scales[-1]:
            # ratios[i] compares iterations i+2 and i+1, so iteration 3 is ratios[1]
            smallest_ok = any(r <= 0.5 for r in rep.ratios[:2]) or rep.flagged
        notes.append(f"scale {sc:g}: ratios {[round(r, 3) for r in rep.ratios[:3]]}, it {rep.iterations}, "
                     f"|picard-simulate| {diff:.1e} vs 5x step error {5 * serr:.1e}")
    decreasing = all(b < a for a, b in zip(first, first[1:]))
    record(9, "Picard contraction", all_below and decreasing and smallest_ok and agree, "; ".join(notes))


# -- 10 ---------------------------------------------------------------------------------

def sweep_config(scale):
    return config_from_dict({
        "grid": {"dim": 3, "n": 16},
        "model": {"name": "toymodel", "theta": [0.3, 0.7]},
        "viscosity": {"nu_bar": 0.5, "slope": [0.1, 0.2, 0.2, 0.1, 0.1]},
        "initial": {"seed": 11, "scale": scale, "u_amplitude": 0.5, "a_amplitude": 0.2, "w_perturbation": 0.1},
        "time": {"dt": 0.05, "t_max": 8.0, "cadence": 4},
        "diagnostics": {"decomposition": False},
    })


def test_c10_theorem1_sweep():
    scales = (1.0, 0.5, 0.25, 0.125)
    reports = [theorem1_report(simulate(sweep_config(d))) for d in scales]
    finite = all(r["finite"] for r in reports)
    monotone = {k: all(reports[i + 1][k]["value"] < reports[i][k]["value"] for i in range(len(scales) - 1))
                for k in THEOREM1_KEYS}
    tails = [r["grad_u_L1_Linf"]["tail_fraction"] for r in reports]
    ok = finite and all(monotone.values()) and all(t < 0.1 for t in tails)
    bad = [k for k, v in monotone.items() if not v]
    record(10, "a priori quantities", ok,
           f"finite={finite}, non-monotone={bad or 'none'}, tail fractions {[round(t, 4) for t in tails]}")


# -- 11 ---------------------------------------------------------------------------------

def test_c11_null_coupling_and_taylor_green():
    cfg = config_from_dict({
        "grid": {"dim": 3, "n": 16}, "model": {"name": "null", "theta": [1.0]},
        "viscosity": {"nu_bar": 0.1}, "initial": {"u_amplitude": 0.5, "a_amplitude": 0.0},
        "time": {"dt": 0.02, "t_max": 1.0},
    })
    traj = simulate(cfg)
    _, u0 = initial_state(cfg)
    ref = navier_stokes_reference(traj.grid, u0, 0.1, 0.02, 50)
    null_err = max(float(np.max(np.abs(a - b))) for a, b in zip(traj.u, ref))

    nu, T = 0.2, 1.0
    rates = []
    for dt in (0.05, 0.025, 0.0125):
        tg = config_from_dict({
            "grid": {"dim": 2, "n": 16}, "model": {"name": "null", "theta": [1.0]},
            "viscosity": {"nu_bar": nu},
            "initial": {"velocity": "taylor-green", "u_amplitude": 1.0, "a_amplitude": 0.0},
            "time": {"dt": dt, "t_max": T, "cadence": 4},
        })
        tr = simulate(tg)
        rates.append(-math.log(np.max(np.abs(tr.u[-1])) / np.max(np.abs(tr.u[0]))) / T)
    errs = [abs(r - 2 * nu) for r in rates]
    order = math.log2(errs[0] / errs[1])
    rich = [2 * rates[1] - rates[0], 2 * rates[2] - rates[1]]
    rich_errs = [abs(r - 2 * nu) for r in rich]
    rich_order = math.log2(rich_errs[0] / rich_errs[1])
    ok = null_err <= 1e-12 and abs(order - 1) < 0.1 and abs(rich_order - 2) < 0.2
    record(11, "null coupling / Taylor-Green", ok,
           f"max |u - u_NS| {null_err:.1e}; decay-rate order {order:.3f}, after Richardson {rich_order:.3f} "
           f"(rate {rich[-1]:.8f} vs {2 * nu})")
