"""Command line front end.

Exit codes: 0 success, 1 configuration error, 2 a runtime guard stopped a run.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, apply_overrides, config_from_dict, config_reference, load_yaml, parse_config
from .errors import ConfigError, GuardError
from .grid import make_grid, random_smooth_array
from .momentum import StokesProbeConfig, maximal_regularity_ratio, ratio_spread
from .norms import norm_report, w21_parts
from .reactions import SpeciesState, structural_form_field, toymodel, young_gap_scan
from .snapshot import read_snapshot, write_snapshot
from .solver import THEOREM1_KEYS, picard_segment, simulate, theorem1_report
from .trajectory import Trajectory
from .transport import CSV_COLUMNS, species_invariant_report, write_diagnostics_csv

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2
VERBS = ("run", "picard", "probe-stokes", "check-structure", "norms", "sweep")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def manifest(cfg: Optional[RunConfig], verb: str, extra: Optional[dict] = None) -> dict:
    out = {"verb": verb, "package_version": __version__, "python": platform.python_version(),
           "numpy": np.__version__}
    if cfg is not None:
        out["config"] = cfg.to_dict()
        out["seed"] = cfg.initial.seed
    if extra:
        out.update(extra)
    return out


# -- verbs ---------------------------------------------------------------------

def _write_snapshots(out: Path, traj: Trajectory) -> None:
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    g = traj.grid
    for i, t in enumerate(traj.times):
        fields = {f"u{c}": traj.u[i][c] for c in range(g.dim)}
        if traj.u_t[i] is not None:
            fields.update({f"ut{c}": traj.u_t[i][c] for c in range(g.dim)})
        if traj.species:
            s = traj.species[i]
            fields.update(dict(zip(s.names(), s.rho_vec())))
        write_snapshot(snap / f"snap_{i:05d}.mxf", g, fields)
    write_json(snap / "times.json", {"times": traj.times, "nu": traj.nu})


def _diagnostics_rows(traj: Trajectory) -> list[dict]:
    rows = []
    keys = list(traj.scalars)
    for i, t in enumerate(traj.step_times):
        row = {"t": t}
        row.update({k: traj.scalars[k][i] for k in keys})
        rows.append(row)
    return rows


def cmd_run(cfg: RunConfig, out: Path) -> int:
    write_json(out / "manifest.json", manifest(cfg, "run"))
    try:
        traj = simulate(cfg)
    except GuardError as exc:
        partial = getattr(exc, "trajectory", None)
        if partial is not None and partial.step_times:
            write_diagnostics_csv(out / "diagnostics.csv", _diagnostics_rows(partial))
        write_json(out / "failure.json", {"guard": exc.guard, "message": str(exc), "t": exc.t})
        return EXIT_GUARD
    write_diagnostics_csv(out / "diagnostics.csv", _diagnostics_rows(traj))
    report = {"theorem1": theorem1_report(traj)}
    if traj.species:
        report["species_invariants"] = species_invariant_report(
            traj.species, clamp_masses=traj.meta["clamp_masses"],
            positivity_tolerance=cfg.transport.positivity_tolerance)
    decomp = traj.meta.get("decomposition")
    if decomp is not None:
        report["b_identity_error"] = decomp.identity_error()
        report["b_split_error"] = traj.meta["b_split_error"]
    write_json(out / "report.json", report)
    if cfg.diagnostics.write_snapshots:
        _write_snapshots(out, traj)
    return EXIT_OK


def cmd_picard(cfg: RunConfig, out: Path) -> int:
    write_json(out / "manifest.json", manifest(cfg, "picard"))
    try:
        traj, rep = picard_segment(cfg)
    except GuardError as exc:
        write_json(out / "failure.json", {"guard": exc.guard, "message": str(exc), "t": exc.t})
        return EXIT_GUARD
    write_json(out / "picard.json", rep.to_dict())
    return EXIT_OK


def probe_from_config(cfg: RunConfig) -> StokesProbeConfig:
    p = cfg.probe
    return StokesProbeConfig(dim=p.dim, n=p.n, nu=p.nu, dt=p.dt, p=p.p, q=p.q, r=p.r,
                             horizons=tuple(p.horizons), initial_mode=tuple(p.initial_mode),
                             initial_amplitude=p.initial_amplitude, forcing_mode=tuple(p.forcing_mode),
                             forcing_amplitude=p.forcing_amplitude, forcing_profile=p.forcing_profile,
                             forcing_t_off=p.forcing_t_off)


def cmd_probe(cfg: RunConfig, out: Path) -> int:
    write_json(out / "manifest.json", manifest(cfg, "probe-stokes"))
    try:
        probe = probe_from_config(cfg)
        res = maximal_regularity_ratio(probe)
    except ValueError as exc:
        raise ConfigError(f"probe: {exc}") from None
    write_json(out / "probe.json", res)
    write_json(out / "report.json", {"ratios": [r["ratio"] for r in res], "spread": ratio_spread(res)})
    return EXIT_OK


def structure_scan(samples: int = 4, seed: int = 0, n2: int = 64, n3: int = 16, variation: float = 0.5,
                   ps: Sequence[float] = (3.0, 6.0)) -> dict:
    """Young-gap grid scan and pointwise structural form on random positive toymodel fields."""
    model = toymodel()
    rng = np.random.default_rng(seed)
    out = {"young_gap": [young_gap_scan(p) for p in ps], "structural": []}
    worst = {p: math.inf for p in ps}
    for dim, n in ((2, n2), (3, n3)):
        g = make_grid(dim, 2 * np.pi, n)
        for _ in range(samples):
            a = np.stack([1.0 + variation * random_smooth_array(g, rng, 3) for _ in range(model.k)])
            s = SpeciesState(g, np.ones(g.shape), a, np.zeros((1,) + g.shape), model)
            for p in ps:
                for j in range(dim):
                    sf = structural_form_field(model, s, p, j)
                    worst[p] = min(worst[p], sf.min_relative)
    out["structural"] = [{"p": p, "min_relative": worst[p]} for p in ps]
    out["young_gap_min"] = min(y["min"] for y in out["young_gap"])
    out["structural_min_relative"] = min(worst.values())
    return out


def cmd_check_structure(cfg: Optional[RunConfig], out: Path, samples: int, seed: int) -> int:
    write_json(out / "manifest.json", manifest(cfg, "check-structure"))
    write_json(out / "structure.json", structure_scan(samples, seed))
    return EXIT_OK


def load_snapshot_trajectory(run_dir: Path) -> Trajectory:
    snap = run_dir / "snapshots"
    meta = json.loads((snap / "times.json").read_text())
    files = sorted(snap.glob("snap_*.mxf"))
    if not files:
        raise ConfigError(f"{snap}: no snapshots found")
    traj = None
    for t, path in zip(meta["times"], files):
        grid, fields = read_snapshot(path)
        if traj is None:
            traj = Trajectory(grid, nu=meta["nu"])
        u = np.stack([fields[f"u{c}"] for c in range(grid.dim)])
        ut = np.stack([fields[f"ut{c}"] for c in range(grid.dim)]) if "ut0" in fields else None
        traj.append(t, u, ut)
    return traj


def cmd_norms(run_dir: Path, out: Path) -> int:
    try:
        traj = load_snapshot_trajectory(run_dir)
    except FileNotFoundError as exc:
        raise ConfigError(f"{run_dir}: {exc}") from None
    reports = []
    for name, (p, q, r, tw) in {"u_W21_2_4/3_1": (2.0, 4 / 3, 1.0, False),
                                "u_W21_5/4_5/4_1": (1.25, 1.25, 1.0, False),
                                "tu_W21_6_4_1": (6.0, 4.0, 1.0, True),
                                "tu_W21_2_4_1": (2.0, 4.0, 1.0, True)}.items():
        parts = w21_parts(traj, p, q, r, time_weighted=tw)
        tail = max(parts["tail"].values())
        reports.append(norm_report(name, parts["total"], {"p": p, "q": q, "r": r, "s": 2 - 2 / q},
                                   parts["horizon"], tail))
    write_json(out / "norms.json", reports)
    return EXIT_OK


# -- sweep ----------------------------------------------------------------------

def _sweep_point(args: tuple) -> int:
    config_path, overrides, out, verb = args
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = parse_config(config_path, overrides)
    except ConfigError as exc:
        write_json(out / "failure.json", {"guard": "config", "message": str(exc)})
        return EXIT_CONFIG
    return {"run": cmd_run, "picard": cmd_picard}[verb](cfg, out)


def sweep_points(vary: Sequence[str]) -> list[list[str]]:
    axes = []
    for item in vary:
        if "=" not in item:
            raise ConfigError(f"--vary {item!r} is not key=v1,v2,...")
        key, values = item.split("=", 1)
        axes.append([f"{key}={v}" for v in values.split(",") if v != ""])
    return [list(p) for p in itertools.product(*axes)] if axes else [[]]


def cmd_sweep(config_path: Optional[str], base_overrides: Sequence[str], vary: Sequence[str], out: Path,
              workers: int, verb: str) -> int:
    points = sweep_points(vary)
    # validate every point up front so config errors surface before any work
    for pt in points:
        parse_config(config_path, list(base_overrides) + pt)
    jobs = [(config_path, list(base_overrides) + pt, str(out / f"point_{i:03d}"), verb)
            for i, pt in enumerate(points)]
    write_json(out / "sweep.json", {"points": [{"index": i, "overrides": pt} for i, pt in enumerate(points)],
                                    "verb": verb})
    if workers <= 1:
        codes = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_sweep_point, jobs))
    write_json(out / "sweep_status.json", {"exit_codes": codes})
    return max(codes) if codes else EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixlab", description="Reacting-mixture flow laboratory on a periodic box.")
    ap.add_argument("--version", action="version", version=f"mixlab {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, needs_config=True):
        p.add_argument("config", nargs=None if needs_config else "?", help="YAML config file")
        p.add_argument("-o", "--out", help="output directory (default: $MIXLAB_OUTPUT_ROOT/<verb>)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key override, e.g. grid.n=64 (repeatable)")

    common(sub.add_parser("run", help="simulate and write the a priori report"))
    common(sub.add_parser("picard", help="Picard iteration on one segment"))
    common(sub.add_parser("probe-stokes", help="maximal-regularity ratio ladder"), needs_config=False)
    cs = sub.add_parser("check-structure", help="Young-gap scan and structural form check")
    common(cs, needs_config=False)
    cs.add_argument("--samples", type=int, default=4)
    cs.add_argument("--seed", type=int, default=0)
    nm = sub.add_parser("norms", help="recompute norms from a run directory's snapshots")
    nm.add_argument("run_dir")
    nm.add_argument("-o", "--out")
    sw = sub.add_parser("sweep", help="cartesian product of override lists")
    common(sw)
    sw.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2,...")
    sw.add_argument("--workers", type=int, default=None)
    sw.add_argument("--point-verb", dest="point_verb", choices=("run", "picard"), default="run",
                    help="verb executed at every sweep point")
    sub.add_parser("config-reference", help="print every config key with its default")
    return ap


def _out_dir(args) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    else:
        out = Path(os.environ.get("MIXLAB_OUTPUT_ROOT", "runs")) / args.verb
    out.mkdir(parents=True, exist_ok=True)
    return out


def dispatch(args: argparse.Namespace) -> int:
    if args.verb == "config-reference":
        print(config_reference())
        return EXIT_OK
    if args.verb == "norms":
        return cmd_norms(Path(args.run_dir), _out_dir(args))
    if args.verb == "sweep":
        workers = args.workers or int(os.environ.get("MIXLAB_MAX_WORKERS", "1"))
        return cmd_sweep(args.config, args.overrides, args.vary, _out_dir(args), workers, args.point_verb)
    cfg = parse_config(args.config, args.overrides)
    out = _out_dir(args)
    if args.verb == "run":
        return cmd_run(cfg, out)
    if args.verb == "picard":
        return cmd_picard(cfg, out)
    if args.verb == "probe-stokes":
        return cmd_probe(cfg, out)
    if args.verb == "check-structure":
        return cmd_check_structure(cfg, out, args.samples, args.seed)
    raise ConfigError(f"unknown verb {args.verb!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
