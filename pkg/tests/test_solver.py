import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixlab.config import config_from_dict
from mixlab.errors import ConfigError, GuardError
from mixlab.grid import make_grid
from mixlab.momentum import single_mode_field
from mixlab.solver import (THEOREM1_KEYS, contraction_metric, gronwall_check, gronwall_fit, initial_state,
                           lemma4_embedding_check, navier_stokes_reference, picard_segment, running_integral,
                           simulate, step_error, taylor_green, theorem1_report)
from mixlab.trajectory import Trajectory


def small_config(**sections):
    base = {
        "grid": {"dim": 2, "n": 16},
        "model": {"name": "toymodel", "theta": [0.3, 0.7]},
        "viscosity": {"nu_bar": 0.5, "slope": [0.1, 0.2, 0.2, 0.1, 0.1]},
        "initial": {"u_amplitude": 0.5, "a_amplitude": 0.2, "w_perturbation": 0.1},
        "time": {"dt": 0.02, "t_max": 0.2},
    }
    for key, val in sections.items():
        base.setdefault(key, {}).update(val)
    return config_from_dict(base)


class TestInitialState:
    def test_deterministic(self):
        cfg = small_config()
        s1, u1 = initial_state(cfg)
        s2, u2 = initial_state(cfg)
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(s1.rho_vec(), s2.rho_vec())

    def test_scale_zero_is_reference(self):
        s, u = initial_state(small_config(initial={"scale": 0.0}))
        assert np.all(u == 0)
        np.testing.assert_array_equal(s.w, 1.0)
        assert np.all(s.a == 0) and np.all(s.b == 0)

    def test_scale_is_linear(self):
        s1, u1 = initial_state(small_config(initial={"scale": 1.0}))
        s2, u2 = initial_state(small_config(initial={"scale": 0.25}))
        np.testing.assert_allclose(u2, 0.25 * u1, rtol=1e-15)
        np.testing.assert_allclose(s2.a, 0.25 * s1.a, rtol=1e-15)

    def test_velocity_solenoidal_and_sized(self):
        s, u = initial_state(small_config())
        g = s.grid
        assert np.max(np.abs(g.div_array(u))) < 1e-12
        assert np.max(np.linalg.norm(u, axis=0)) == pytest.approx(0.5)


class TestSimulate:
    def test_records(self):
        cfg = small_config(time={"cadence": 2})
        traj = simulate(cfg)
        assert len(traj.step_times) == 11
        assert traj.times == pytest.approx([0.0, 0.04, 0.08, 0.12, 0.16, 0.2])
        assert len(traj.meta["clamp_masses"]) == 10
        for key in ("grad_u_sup", "energy", "min_species", "grad_power_norm_p3", "b_identity_error"):
            assert len(traj.scalars[key]) == 11

    def test_rejects_uneven_horizon(self):
        with pytest.raises(ValueError):
            simulate(small_config(time={"t_max": 0.21}))

    def test_null_coupling_matches_navier_stokes(self):
        cfg = small_config(grid={"dim": 3, "n": 16}, initial={"a_amplitude": 0.0, "w_perturbation": 0.0},
                           viscosity={"slope": [0.0] * 5}, time={"t_max": 0.2})
        traj = simulate(cfg)
        s0, u0 = initial_state(cfg)
        ref = navier_stokes_reference(traj.grid, u0, 0.5, 0.02, 10)
        for got, want in zip(traj.u, ref):
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_taylor_green_decay(self):
        nu, dt, N = 0.3, 0.05, 20
        cfg = small_config(initial={"velocity": "taylor-green", "u_amplitude": 1.0, "a_amplitude": 0.0,
                                    "w_perturbation": 0.0},
                           viscosity={"nu_bar": nu, "slope": [0.0] * 5}, time={"dt": dt, "t_max": N * dt})
        traj = simulate(cfg)
        np.testing.assert_allclose(traj.u[-1], (1 + 2 * nu * dt) ** -N * traj.u[0], rtol=0, atol=1e-12)

    def test_taylor_green_rate_richardson(self):
        nu, T = 0.3, 1.0
        rates = []
        for dt in (0.05, 0.025):
            cfg = small_config(initial={"velocity": "taylor-green", "u_amplitude": 1.0, "a_amplitude": 0.0,
                                        "w_perturbation": 0.0},
                               viscosity={"nu_bar": nu, "slope": [0.0] * 5}, time={"dt": dt, "t_max": T})
            traj = simulate(cfg)
            amp = np.max(np.abs(traj.u[-1])) / np.max(np.abs(traj.u[0]))
            rates.append(-math.log(amp) / T)
        assert abs(rates[0] - 2 * nu) > abs(rates[1] - 2 * nu)
        rich = 2 * rates[1] - rates[0]
        assert abs(rich - 2 * nu) <= 2 * nu**3 * 0.05**2

    def test_taylor_green_helper(self):
        g = make_grid(2, 2 * np.pi, 16)
        u = taylor_green(g, 2.0, t=1.0, nu=0.1)
        np.testing.assert_allclose(np.max(np.abs(u)), 2.0 * math.exp(-0.2), rtol=1e-12)

    def test_guard_attaches_trajectory(self):
        cfg = small_config(viscosity={"nu_bar": 1e-3, "floor": 1e-3}, initial={"u_amplitude": 50.0},
                           time={"dt": 0.5, "t_max": 5.0})
        with pytest.raises(GuardError) as exc:
            simulate(cfg)
        assert exc.value.guard in ("blow-up", "nan", "clamp-mass")
        assert isinstance(exc.value.trajectory, Trajectory)

    def test_step_error_first_order(self):
        e1 = step_error(small_config(time={"t_max": 0.16, "dt": 0.04}))
        e2 = step_error(small_config(time={"t_max": 0.16, "dt": 0.02}))
        assert e1 / e2 == pytest.approx(2.0, rel=0.15)


class TestContractionMetric:
    def test_synthetic_oracle(self):
        g = make_grid(2, 2 * np.pi, 16)
        v = single_mode_field(g, (1, 0))
        A = math.sqrt(2 * math.pi**2)  # ||cos x||_2 on the 2pi box; |grad| has the same norm
        dt, T = 1e-3, 2.0
        t = np.arange(0, T + dt / 2, dt)
        phi = np.stack([np.sin(g.coordinates[1])] + [np.zeros(g.shape)] * 2)
        d_rho = [math.sqrt(ti) * phi for ti in t]
        d_u = [math.exp(-ti) * v for ti in t]
        expected = A + A + A * math.sqrt((1 - math.exp(-2 * T)) / 2)
        assert contraction_metric(t, d_rho, d_u, g) == pytest.approx(expected, rel=1e-6)

    def test_zero(self):
        g = make_grid(2, 1.0, 8)
        z = [np.zeros((2, 8, 8))] * 3
        assert contraction_metric([0.0, 0.1, 0.2], z, z, g) == 0.0

    @given(st.floats(1e-6, 100), st.sampled_from([-1.0, 1.0]), st.integers(0, 2**31))
    def test_homogeneous(self, mag, sign, seed):
        c = sign * mag
        rng = np.random.default_rng(seed)
        g = make_grid(2, 2 * np.pi, 8)
        d_rho = [rng.standard_normal((3,) + g.shape) for _ in range(4)]
        d_u = [rng.standard_normal((2,) + g.shape) for _ in range(4)]
        t = [0.0, 0.1, 0.2, 0.3]
        base = contraction_metric(t, d_rho, d_u, g)
        scaled = contraction_metric(t, [c * x for x in d_rho], [c * x for x in d_u], g)
        assert scaled == pytest.approx(abs(c) * base, rel=1e-12)

    def test_misaligned(self):
        g = make_grid(2, 1.0, 8)
        z = [np.zeros((2, 8, 8))] * 3
        with pytest.raises(ValueError):
            contraction_metric([0.0, 0.1], z, z, g)
        with pytest.raises(ValueError):
            contraction_metric([0.0, 0.2, 0.1], z, z, g)


class TestPicard:
    def test_quiescent_converges_at_once(self):
        cfg = small_config(model={"name": "null", "theta": [1.0]}, viscosity={"slope": [0.0] * 4},
                           initial={"velocity": "zero"})
        _, rep = picard_segment(cfg)
        assert rep.converged and rep.iterations == 1 and rep.metrics == [0.0]

    def test_reacting_at_rest_needs_one_more_sweep(self):
        cfg = small_config(initial={"velocity": "zero"})
        _, rep = picard_segment(cfg)
        assert rep.converged and rep.iterations == 2
        assert rep.metrics[0] > 0 and rep.metrics[1] == 0.0

    def test_fixed_point_is_simulation(self):
        cfg = small_config()
        traj, rep = picard_segment(cfg)
        assert rep.converged and not rep.flagged
        assert all(r < 0.5 for r in rep.ratios[:3])
        direct = simulate(cfg)
        for a, b in zip(traj.u, direct.u):
            assert np.max(np.abs(a - b)) <= 1e-9

    def test_flag_when_not_contracting(self):
        cfg = small_config(picard={"max_iterations": 2, "rtol": 1e-30, "atol": 0.0})
        _, rep = picard_segment(cfg, flag_ratio=1e-12)
        assert not rep.converged and rep.flagged
        assert rep.to_dict()["iterations"] == 2


class TestReport:
    def test_running_integral(self):
        np.testing.assert_allclose(running_integral([0, 1, 3], [1, 1, 2]), [0, 1, 4])

    def test_zero_flow(self):
        cfg = small_config(initial={"velocity": "zero", "a_amplitude": 0.0, "w_perturbation": 0.0},
                           model={"name": "null", "theta": [1.0]}, viscosity={"slope": [0.0] * 4})
        rep = theorem1_report(simulate(cfg))
        for key in THEOREM1_KEYS:
            assert rep[key]["value"] == 0.0
        assert rep["lemma4_ratio"]["value"] is None and rep["finite"]
        with pytest.raises(ValueError):
            lemma4_embedding_check(simulate(cfg))

    def test_single_mode_oracle(self):
        nu, dt, T = 0.5, 0.01, 1.0
        cfg = small_config(grid={"dim": 3, "n": 16}, model={"name": "null", "theta": [1.0]},
                           viscosity={"nu_bar": nu, "slope": [0.0] * 4},
                           initial={"velocity": "mode", "u_mode": [1, 0, 0], "u_amplitude": 2.0,
                                    "a_amplitude": 0.0, "w_perturbation": 0.0},
                           time={"dt": dt, "t_max": T, "cadence": 5})
        traj = simulate(cfg)
        rep = theorem1_report(traj)
        L3 = (2 * math.pi) ** 3
        # shell 0 carries the whole field, so the trace is the initial L2 norm
        assert rep["u_W21_2_4/3_1"]["trace"] == pytest.approx(2.0 * math.sqrt(L3 / 2), rel=1e-12)
        # int |grad u|_inf dt -> 2 (1 - e^{-nu T}) / nu
        assert rep["grad_u_L1_Linf"]["value"] == pytest.approx(2 * (1 - math.exp(-nu * T)) / nu, rel=1e-2)
        assert rep["rho_minus_e1_Linf"]["value"] == 0.0
        assert rep["finite"]

    def test_lemma4_ratio_scale_invariant(self):
        ratios = []
        for amp in (1e-3, 1e-2):
            cfg = small_config(model={"name": "null", "theta": [1.0]}, viscosity={"slope": [0.0] * 4},
                               initial={"velocity": "mode", "u_mode": [2, 1], "u_amplitude": amp,
                                        "a_amplitude": 0.0, "w_perturbation": 0.0})
            ratios.append(lemma4_embedding_check(simulate(cfg)))
        # linear Stokes regime: the ratio is homogeneous of degree 0 up to the tiny convective term
        assert ratios[1] == pytest.approx(ratios[0], rel=1e-6)

    def test_needs_snapshots(self):
        traj = simulate(small_config())
        with pytest.raises(ValueError):
            theorem1_report(traj.truncated(0.03))
        with pytest.raises(ConfigError):
            small_config(time={"t_max": 0.04, "cadence": 2})


class TestGronwall:
    def test_fit_and_check(self):
        g = make_grid(2, 1.0, 8)
        traj = Trajectory(g)
        for t, G, grad in ((0.0, 1.0, 1.0), (1.0, math.e, 1.0), (2.0, math.e**2, 1.0)):
            traj.record(t, grad_power_norm_p3=G, grad_u_sup=grad)
        assert gronwall_fit(traj, 3.0) == pytest.approx(1.0)
        assert gronwall_check(traj, 3.0, 1.0)["ok"]
        assert not gronwall_check(traj, 3.0, 0.5)["ok"]

    def test_fit_on_static_flow(self):
        g = make_grid(2, 1.0, 8)
        traj = Trajectory(g)
        for t in (0.0, 1.0):
            traj.record(t, grad_power_norm_p6=1.0, grad_u_sup=0.0)
        assert gronwall_fit(traj, 6.0) == 0.0
