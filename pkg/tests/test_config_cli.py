import csv
import json
from pathlib import Path

import numpy as np
import pytest

from mixlab.cli import main, sweep_points
from mixlab.config import (RunConfig, apply_overrides, config_from_dict, config_reference, load_yaml,
                           parse_config)
from mixlab.errors import ConfigError
from mixlab.snapshot import read_snapshot

SMALL = """\
grid: {dim: 2, n: 16}
model: {name: toymodel, theta: [0.3, 0.7]}
viscosity: {nu_bar: 0.5, slope: [0.1, 0.2, 0.2, 0.1, 0.1]}
initial: {u_amplitude: 0.3, a_amplitude: 0.2}
time: {dt: 0.05, t_max: 0.3, cadence: 2}
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(SMALL)
    return path


class TestConfig:
    def test_defaults(self):
        cfg = config_from_dict({})
        assert cfg == RunConfig().validate()
        assert cfg.grid.n == 16 and cfg.model.name == "toymodel"
        model, visc = cfg.models()
        assert visc.is_constant and len(visc.slope) == 4

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="viscosity.vicosity"):
            config_from_dict({"viscosity": {"vicosity": 1.0}})
        with pytest.raises(ConfigError, match="unknown key 'gird'"):
            config_from_dict({"gird": {}})

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="grid.n"):
            config_from_dict({"grid": {"n": 16.5}})
        with pytest.raises(ConfigError, match="diagnostics.decomposition"):
            config_from_dict({"diagnostics": {"decomposition": "yes"}})

    def test_semantic_checks(self):
        for bad in ({"grid": {"n": 15}}, {"time": {"dt": 0.0}}, {"time": {"momentum_order": 3}},
                    {"initial": {"velocity": "vortex"}}, {"viscosity": {"slope": [1.0, 2.0]}},
                    {"initial": {"velocity": "taylor-green"}}, {"transport": {"interpolation": "spline"}},
                    {"time": {"dt": 0.1, "t_max": 0.2, "cadence": 2}}):
            with pytest.raises(ConfigError):
                config_from_dict(bad)

    def test_override(self, cfg_file):
        cfg = parse_config(cfg_file, ["grid.n=64", "time.dt=0.01", "model.theta=[0.5, 0.5]"])
        assert cfg.grid.n == 64 and cfg.time.dt == 0.01 and cfg.model.theta == [0.5, 0.5]

    def test_override_malformed(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["grid.n"])
        with pytest.raises(ConfigError):
            apply_overrides({}, ["n=3"])

    def test_yaml_error_reports_location(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("grid:\n  n: [1, 2\n")
        with pytest.raises(ConfigError, match="line"):
            load_yaml(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_yaml(tmp_path / "nope.yaml")

    def test_reference_lists_every_key(self):
        ref = config_reference()
        for key in ("grid.n", "viscosity.nu_bar", "time.cadence", "transport.mass_fixer", "probe.forcing_mode"):
            assert f"`{key}`" in ref

    def test_model_file(self, tmp_path):
        mpath = tmp_path / "m.yaml"
        mpath.write_text("name: custom\nreactants: 1\nproducts: 1\ntheta: [1.0]\n"
                         "omega: [[{coefficient: 1.0, exponents: [2]}]]\n"
                         "viscosity: {nu_bar: 0.7, slope: [0.0, 0.1, 0.1]}\n")
        cfg = config_from_dict({"model": {"file": str(mpath)}})
        model, visc = cfg.models()
        assert model.k == 1 and visc.nu_bar == 0.7


class TestCli:
    def test_run_artifacts(self, cfg_file, tmp_path):
        out = tmp_path / "run"
        assert main(["run", str(cfg_file), "-o", str(out), "--set", "diagnostics.write_snapshots=true"]) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["verb"] == "run" and man["config"]["grid"]["n"] == 16
        with open(out / "diagnostics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 7 and "min_species" in rows[0]
        rep = json.loads((out / "report.json").read_text())
        assert rep["theorem1"]["finite"] and rep["species_invariants"]["ok"]
        snaps = sorted((out / "snapshots").glob("snap_*.mxf"))
        assert len(snaps) == 4
        grid, fields = read_snapshot(snaps[-1])
        assert set(fields) >= {"u0", "u1", "ut0", "w", "a1", "a2", "b1", "b2"}

    def test_deterministic(self, cfg_file, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for o in outs:
            assert main(["run", str(cfg_file), "-o", str(o)]) == 0
        for name in ("diagnostics.csv", "report.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_config_error_exit(self, cfg_file, tmp_path, capsys):
        assert main(["run", str(cfg_file), "-o", str(tmp_path / "x"), "--set", "viscosity.vicosity=1"]) == 1
        assert "viscosity.vicosity" in capsys.readouterr().err

    def test_guard_exit(self, cfg_file, tmp_path):
        out = tmp_path / "boom"
        code = main(["run", str(cfg_file), "-o", str(out), "--set", "initial.u_amplitude=80",
                     "--set", "viscosity.nu_bar=0.001", "--set", "viscosity.slope=[0,0,0,0,0]",
                     "--set", "viscosity.floor=0.001", "--set", "time.dt=0.5", "--set", "time.t_max=5"])
        assert code == 2
        fail = json.loads((out / "failure.json").read_text())
        assert fail["guard"] in ("blow-up", "nan", "clamp-mass")

    def test_zero_data_report(self, cfg_file, tmp_path):
        out = tmp_path / "zero"
        assert main(["run", str(cfg_file), "-o", str(out), "--set", "initial.scale=0"]) == 0
        rep = json.loads((out / "report.json").read_text())["theorem1"]
        for key in ("u_W21_2_4/3_1", "grad_u_L1_Linf", "rho_minus_e1_Linf", "grad_rho_Linf_L3L6"):
            assert rep[key]["value"] == 0.0
        assert rep["lemma4_ratio"]["value"] is None

    def test_output_root_env(self, cfg_file, tmp_path, monkeypatch):
        monkeypatch.setenv("MIXLAB_OUTPUT_ROOT", str(tmp_path / "root"))
        assert main(["picard", str(cfg_file), "--set", "time.t_max=0.2"]) == 0
        rep = json.loads((tmp_path / "root" / "picard" / "picard.json").read_text())
        assert rep["converged"]

    def test_probe(self, tmp_path):
        out = tmp_path / "probe"
        code = main(["probe-stokes", "-o", str(out), "--set", "probe.dim=2", "--set", "probe.initial_mode=[1,0]",
                     "--set", "probe.horizons=[0.1,0.2]", "--set", "probe.dt=0.05"])
        assert code == 0
        res = json.loads((out / "probe.json").read_text())
        assert [r["T"] for r in res] == [0.1, 0.2]

    def test_probe_degenerate_is_config_error(self, tmp_path):
        code = main(["probe-stokes", "-o", str(tmp_path / "p"), "--set", "probe.initial_amplitude=0",
                     "--set", "probe.horizons=[0.1]"])
        assert code == 1

    def test_check_structure(self, tmp_path):
        out = tmp_path / "cs"
        assert main(["check-structure", "-o", str(out), "--samples", "1"]) == 0
        rep = json.loads((out / "structure.json").read_text())
        assert rep["young_gap_min"] < 0
        assert {s["p"] for s in rep["structural"]} == {3.0, 6.0}

    def test_norms_from_snapshots(self, cfg_file, tmp_path):
        run = tmp_path / "run"
        main(["run", str(cfg_file), "-o", str(run), "--set", "diagnostics.write_snapshots=true"])
        assert main(["norms", str(run), "-o", str(tmp_path / "n")]) == 0
        norms = {r["norm_name"]: r["value"] for r in json.loads((tmp_path / "n" / "norms.json").read_text())}
        rep = json.loads((run / "report.json").read_text())["theorem1"]
        for key, val in norms.items():
            assert val == pytest.approx(rep[key]["value"], rel=1e-12)

    def test_sweep(self, cfg_file, tmp_path):
        out = tmp_path / "sw"
        code = main(["sweep", str(cfg_file), "-o", str(out), "--vary", "initial.seed=0,1",
                     "--vary", "time.dt=0.05,0.1", "--set", "time.t_max=0.4"])
        assert code == 0
        status = json.loads((out / "sweep_status.json").read_text())
        assert status["exit_codes"] == [0, 0, 0, 0]
        assert sorted(p.name for p in out.glob("point_*")) == [f"point_{i:03d}" for i in range(4)]

    def test_sweep_bad_point(self, cfg_file, tmp_path):
        assert main(["sweep", str(cfg_file), "-o", str(tmp_path / "s"), "--vary", "grid.n=16,17"]) == 1

    def test_sweep_points(self):
        assert sweep_points(["a.b=1,2", "c.d=x"]) == [["a.b=1", "c.d=x"], ["a.b=2", "c.d=x"]]
        assert sweep_points([]) == [[]]

    def test_config_reference_verb(self, capsys):
        assert main(["config-reference"]) == 0
        assert "`grid.n`" in capsys.readouterr().out
