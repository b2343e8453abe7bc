"""Command-line sweeps: YAML configuration, worker pool, CSV output, resumable cache.

Usage::

    quditlmg {meanfield,branch,gaps,steady,cavity} --config run.yaml [--out DIR]
             [--workers W] [--capacity C] [--seed S]

Exit codes: 0 success, 2 configuration error, 3 some grid points failed,
4 capacity exceeded.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import CapacityError

log = logging.getLogger("quditlmg")

MODES = ("meanfield-stream", "meanfield-branch", "spectrum-gaps", "steady-observables",
         "cavity-map")
SUBCOMMANDS = {"meanfield": "meanfield-stream", "branch": "meanfield-branch",
               "gaps": "spectrum-gaps", "steady": "steady-observables", "cavity": "cavity-map"}
EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_CAPACITY = 0, 2, 3, 4

GRID_KEYS = ("d", "N", "dissipator", "gammaI", "gammaC")
DEFAULTS = {
    "V": 1.0,
    "seed": 0,
    "grid": {"d": [2], "N": [2], "dissipator": ["spin-ladder"], "gammaI": None, "gammaC": [0.0]},
    "solver": {"rtol": 1e-9, "atol": 1e-12, "capacity": 2_000_000, "workers": None,
               "k": 6, "method": "auto", "full_limit": 4096},
    "options": {"t_end": 200.0, "theta0": 2.5, "phi0": 0.3, "n_coherent": 50, "n_random": 20,
                "resolution": 1e-3},
    "cavity": {"scenario": "rb87", "dissipator": "spin-ladder", "N": 10_000, "d": 5,
               "V": 12.7e3, "gammaC": 25.8e3, "g": 210e3, "Delta": 1e9, "kappa": 10e3,
               "delta": 102.9e3, "detuning_ratio": 10.29},
    "output": "results",
}
NO_GRID_MODES = ("cavity-map",)


class ConfigError(Exception):
    """Configuration problems; ``diagnostics`` are ``line N: message`` strings."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass
class SweepConfig:
    mode: str
    V: float
    seed: int
    grid: dict
    solver: dict
    options: dict
    cavity: dict
    output: str

    def echo(self) -> dict:
        return {"mode": self.mode, "V": self.V, "seed": self.seed,
                "grid": {k: list(v) for k, v in self.grid.items()},
                "solver": dict(self.solver), "options": dict(self.options),
                "cavity": dict(self.cavity), "output": self.output}

    def digest(self) -> str:
        """Hash of everything that influences results (not workers or output path)."""
        e = self.echo()
        e["solver"].pop("workers", None)
        e.pop("output")
        return hashlib.sha256(json.dumps(e, sort_keys=True).encode()).hexdigest()[:16]

    def points(self) -> list:
        """Work items, one per unit of scheduling, sorted by grid coordinates."""
        g = self.grid
        if self.mode == "meanfield-branch":
            keys = ("d", "dissipator", "gammaC")
        elif self.mode == "meanfield-stream":
            keys = ("d", "dissipator", "gammaI", "gammaC")
        else:
            keys = GRID_KEYS
        combos = itertools.product(*(g[k] for k in keys))
        return sorted((dict(zip(keys, c)) for c in combos), key=_sort_key)


def _sort_key(point):
    return tuple((0, point[k]) if not isinstance(point[k], str) else (1, point[k])
                 for k in GRID_KEYS if k in point)


# ---------------------------------------------------------------------------
# validation

def _line(node):
    return node.start_mark.line + 1


def _expand_values(node, key, errors, kind):
    """Scalar, list, or ``{start, stop, num|step}`` mapping -> tuple of values."""
    value = yaml.safe_load(yaml.serialize(node))
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "num", "step"}
        if extra or not {"start", "stop"} <= set(value) or ("num" in value) == ("step" in value):
            errors.append(f"line {_line(node)}: '{key}' range needs start, stop and one of num/step")
            return ()
        start, stop = float(value["start"]), float(value["stop"])
        if "num" in value:
            vals = np.linspace(start, stop, int(value["num"]))
        else:
            step = float(value["step"])
            if step <= 0:
                errors.append(f"line {_line(node)}: '{key}' step must be positive")
                return ()
            vals = start + step * np.arange(int(math.floor((stop - start) / step + 1e-9)) + 1)
        value = [float(round(v, 12)) for v in vals]
    elif not isinstance(value, list):
        value = [value]
    out = []
    for v in value:
        try:
            if kind is str:
                from .spin_core import DissipatorKind
                out.append(DissipatorKind.parse(v).value)
            elif kind is int:
                if isinstance(v, bool) or int(v) != v:
                    raise ValueError
                out.append(int(v))
            else:
                if isinstance(v, bool):
                    raise ValueError
                out.append(float(v))
        except (TypeError, ValueError):
            errors.append(f"line {_line(node)}: invalid value {v!r} for '{key}'")
    if not out:
        errors.append(f"line {_line(node)}: '{key}' grid is empty")
    return tuple(sorted(set(out), key=lambda x: (isinstance(x, str), x)))


def _mapping(node, where, errors):
    if not isinstance(node, yaml.MappingNode):
        errors.append(f"line {_line(node)}: '{where}' must be a mapping")
        return {}
    return {k.value: (k, v) for k, v in node.value}


def validate_config(text: str, mode: str | None = None) -> SweepConfig:
    """Parse and schema-check a YAML sweep configuration.

    Unknown keys, empty grids, negative rates and wrong types are collected
    into a :class:`ConfigError` with line numbers. ``mode`` (from the
    subcommand) fills in or must agree with the ``mode`` key.
    """
    errors = []
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError([f"line {mark.line + 1 if mark else '?'}: {exc}"]) from exc
    if root is None:
        root = yaml.compose("{}")
    top = _mapping(root, "config", errors)
    for key, (knode, _) in top.items():
        if key not in DEFAULTS and key != "mode":
            errors.append(f"line {_line(knode)}: unknown key '{key}'")

    cfg_mode = yaml.safe_load(yaml.serialize(top["mode"][1])) if "mode" in top else None
    if cfg_mode is not None and cfg_mode not in MODES:
        errors.append(f"line {_line(top['mode'][1])}: mode must be one of {', '.join(MODES)}")
    if mode is not None and cfg_mode is not None and cfg_mode != mode:
        errors.append(f"line {_line(top['mode'][1])}: mode '{cfg_mode}' conflicts with "
                      f"subcommand ({mode})")
    mode = mode or cfg_mode
    if mode is None:
        errors.append("line 1: 'mode' is required")

    def scalar(key, default, kind, section=None, minimum=None):
        table = top if section is None else sections[section]
        if key not in table:
            return default
        node = table[key][1]
        try:
            v = yaml.safe_load(yaml.serialize(node))
            if v is None and default is None:
                return None
            if kind is not str and isinstance(v, bool):
                raise ValueError
            v = kind(v)
        except (TypeError, ValueError):
            errors.append(f"line {_line(node)}: invalid value for '{key}'")
            return default
        if minimum is not None and v < minimum:
            errors.append(f"line {_line(node)}: '{key}' must be >= {minimum}")
        return v

    sections = {}
    for sec in ("grid", "solver", "options", "cavity"):
        sections[sec] = _mapping(top[sec][1], sec, errors) if sec in top else {}
        for key, (knode, _) in sections[sec].items():
            if key not in DEFAULTS[sec]:
                errors.append(f"line {_line(knode)}: unknown key '{sec}.{key}'")

    grid = {}
    kinds = {"d": int, "N": int, "dissipator": str, "gammaI": float, "gammaC": float}
    for key in GRID_KEYS:
        if key in sections["grid"]:
            grid[key] = _expand_values(sections["grid"][key][1], key, errors, kinds[key])
        elif DEFAULTS["grid"][key] is not None:
            grid[key] = tuple(DEFAULTS["grid"][key])
        elif mode not in NO_GRID_MODES:
            errors.append(f"line {_line(root)}: grid.{key} is required")
            grid[key] = ()
        else:
            grid[key] = ()
    for key in ("gammaI", "gammaC"):
        if any(v < 0 for v in grid.get(key, ())):
            errors.append(f"line {_line(sections['grid'][key][1])}: '{key}' must be non-negative")
    for key, lo in (("d", 2), ("N", 1)):
        if any(v < lo for v in grid.get(key, ())):
            errors.append(f"line {_line(sections['grid'][key][1])}: '{key}' must be >= {lo}")

    solver = {}
    for key, default in DEFAULTS["solver"].items():
        kind = {"method": str, "workers": int, "capacity": int, "k": int,
                "full_limit": int}.get(key, float)
        solver[key] = scalar(key, default, kind, "solver",
                             minimum=None if kind is str else (1 if kind is int else 0))
    options = {key: scalar(key, default, type(default), "options", minimum=0)
               for key, default in DEFAULTS["options"].items()}
    cavity = {key: scalar(key, default, type(default) if not isinstance(default, float) else float,
                          "cavity") for key, default in DEFAULTS["cavity"].items()}
    if cavity["scenario"] not in ("rb87", "roundtrip"):
        errors.append(f"line {_line(sections['cavity']['scenario'][1])}: "
                      "cavity.scenario must be 'rb87' or 'roundtrip'")
    V = scalar("V", DEFAULTS["V"], float)
    if V == 0:
        errors.append(f"line {_line(top['V'][1])}: V must be non-zero")
    seed = scalar("seed", DEFAULTS["seed"], int, minimum=0)
    output = scalar("output", DEFAULTS["output"], str)
    if errors:
        raise ConfigError(errors)
    return SweepConfig(mode, V, seed, grid, solver, options, cavity, output)


def preflight(cfg: SweepConfig):
    """Reject grids whose permutation-invariant basis exceeds the capacity."""
    if cfg.mode not in ("spectrum-gaps", "steady-observables"):
        return
    from .liouville import basis_dimension

    for N in cfg.grid["N"]:
        for d in cfg.grid["d"]:
            dim = basis_dimension(N, d)
            if dim > cfg.solver["capacity"]:
                raise CapacityError(
                    f"C(N+d^2-1, N) = C({N + d * d - 1}, {N}) = {dim} exceeds capacity "
                    f"{cfg.solver['capacity']} at N={N}, d={d}", dim, cfg.solver["capacity"])


# ---------------------------------------------------------------------------
# per-point work

def _params(cfg_dict, point, gammaI=None):
    from .spin_core import ModelParams

    V = cfg_dict["V"]
    gI = point["gammaI"] if gammaI is None else gammaI
    return ModelParams.build(point["d"], V, gI * abs(V), point["gammaC"] * abs(V),
                             point["dissipator"])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _run_meanfield(cfg, point):
    from .integrate import Controls
    from .meanfield import Stability, coherent_state, find_fixed_points, integrate

    p = _params(cfg, point)
    o = cfg["options"]
    fps = find_fixed_points(p, int(o["n_coherent"]), int(o["n_random"]), seed=cfg["seed"])
    stable = [f for f in fps if f.classification is Stability.STABLE]
    row = {"n_fixed": len(fps), "n_stable": len(stable)}
    if stable:
        best = max(stable, key=lambda f: f.expectations.X)
        e = best.expectations
        row.update(X_stable=e.X, Y_stable=e.Y, Z_stable=e.Z)
    ctrl = Controls(rtol=cfg["solver"]["rtol"], atol=cfg["solver"]["atol"])
    traj = integrate(p, coherent_state(p.spin, o["theta0"], o["phi0"]), o["t_end"], ctrl)
    e = traj.final().expectations()
    row.update(X_final=e.X, Y_final=e.Y, Z_final=e.Z, trace_correction=traj.max_trace_correction)
    return [row]


def _run_branch(cfg, point):
    from .meanfield import sweep_steady_branch

    values = [v * abs(cfg["V"]) for v in cfg["grid"]["gammaI"]]
    p = _params(cfg, point, gammaI=values[0] / abs(cfg["V"]))
    o = cfg["options"]
    table = sweep_steady_branch(p, values, "gammaI", cfg["seed"], int(o["n_coherent"]),
                                int(o["n_random"]), o["resolution"] * abs(cfg["V"]))
    broken = {r["value"]: r for r in table.broken()}
    rows = []
    for v in values:
        here = [r for r in table.rows if r["value"] == v]
        r = broken.get(v)
        rows.append({"gammaI": v / abs(cfg["V"]),
                     "spin_z_stable": int(any(abs(h["X"]) <= 1e-9 and abs(h["Y"]) <= 1e-9
                                              for h in here)),
                     "X": r["X"] if r else None, "Y": r["Y"] if r else None,
                     "Z": r["Z"] if r else None, "termination": table.termination})
    return rows


def _run_gaps(cfg, point):
    from .liouville import gaps

    p = _params(cfg, point)
    res = gaps(p, point["N"], cfg["solver"]["k"], cfg["solver"]["method"],
               cfg["solver"]["capacity"])
    Vabs = abs(cfg["V"])
    row = {f"gap{s[0]:+d}{s[1]:+d}": res.gaps[s] / Vabs for s in sorted(res.gaps, reverse=True)}
    if res.errors:
        row["error"] = "; ".join(f"{k}: {v}" for k, v in res.errors.items())
    return [row]


def _run_steady(cfg, point):
    from .errors import CapacityError as CapErr
    from .liouville import enumerate_basis, steady_state
    from .observables import negativity, purity, spin_expectations

    p = _params(cfg, point)
    basis = enumerate_basis(point["N"], p.d, cfg["solver"]["capacity"])
    rho = steady_state(p, point["N"], basis)
    e = spin_expectations(rho)
    row = {"purity": purity(rho), "X": e.X, "Y": e.Y, "Z": e.Z}
    if point["N"] > 1:
        try:
            neg = negativity(rho, limit=cfg["solver"]["full_limit"])
            row.update(negativity=neg.negativity, N_A=neg.N_A, N_B=neg.N_B)
        except CapErr:
            pass
    return [row]


WORKERS = {"meanfield-stream": _run_meanfield, "meanfield-branch": _run_branch,
           "spectrum-gaps": _run_gaps, "steady-observables": _run_steady}
COLUMNS = {
    "meanfield-stream": ("n_fixed", "n_stable", "X_stable", "Y_stable", "Z_stable",
                         "X_final", "Y_final", "Z_final", "trace_correction"),
    "meanfield-branch": ("gammaI", "spin_z_stable", "X", "Y", "Z", "termination"),
    "spectrum-gaps": ("gap+1+1", "gap+1-1", "gap-1+1", "gap-1-1"),
    "steady-observables": ("purity", "X", "Y", "Z", "negativity", "N_A", "N_B"),
}


def _work(args):
    """Evaluate one grid point; never raises (errors are recorded)."""
    cfg, point = args
    t0 = time.perf_counter()
    try:
        rows = WORKERS[cfg["mode"]](cfg, point)
        err = None
    except Exception as exc:  # per-point failure is data, the sweep goes on
        rows, err = [{}], f"{type(exc).__name__}: {exc}"
    rows = [{k: (float(v) if isinstance(v, np.floating) else v) for k, v in r.items()}
            for r in rows]
    return {"point": point, "rows": rows, "error": err, "wall_time": time.perf_counter() - t0}


def _point_key(point) -> str:
    return hashlib.sha256(json.dumps(point, sort_keys=True).encode()).hexdigest()[:20]


# ---------------------------------------------------------------------------
# sweep driver

@dataclass
class SweepResult:
    csv_path: Path
    meta_path: Path
    n_points: int
    n_failed: int
    n_cached: int
    records: list = field(default_factory=list)


def _check_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError([f"line 1: output directory '{out}' is not writable ({exc})"]) from exc


def run_sweep(cfg: SweepConfig, workers: int | None = None) -> SweepResult:
    """Run every grid point and write ``<mode>.csv`` plus a JSON metadata sidecar.

    Completed points are cached under ``.cache/<config hash>/`` in the output
    directory; rerunning the same configuration only computes missing points.
    Rows are written in grid order whatever the completion order.
    """
    out = Path(cfg.output)
    _check_writable(out)
    preflight(cfg)
    if cfg.mode == "cavity-map":
        return _run_cavity(cfg, out)

    digest = cfg.digest()
    cache = out / ".cache" / digest
    cache.mkdir(parents=True, exist_ok=True)
    shared = {"mode": cfg.mode, "V": cfg.V, "seed": cfg.seed, "grid": cfg.echo()["grid"],
              "solver": cfg.solver, "options": cfg.options}
    points = cfg.points()
    records, todo = {}, []
    for pt in points:
        f = cache / f"{_point_key(pt)}.json"
        if f.exists():
            records[_point_key(pt)] = json.loads(f.read_text())
        else:
            todo.append(pt)
    n_cached = len(records)
    workers = workers or cfg.solver["workers"] or os.cpu_count() or 1
    t0 = time.perf_counter()

    def store(rec):
        key = _point_key(rec["point"])
        if rec["error"] is None:
            tmp = cache / f"{key}.json.tmp"
            tmp.write_text(json.dumps(rec))
            tmp.replace(cache / f"{key}.json")
        records[key] = rec
        log.info("point %s done in %.2fs%s", rec["point"], rec["wall_time"],
                 f" ({rec['error']})" if rec["error"] else "")

    if workers <= 1 or len(todo) <= 1:
        for pt in todo:
            store(_work((shared, pt)))
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_work, (shared, pt)) for pt in todo]
            for fut in cf.as_completed(futures):
                store(fut.result())

    ordered = [records[_point_key(pt)] for pt in points]
    keys = [k for k in GRID_KEYS if k in points[0]] if points else []
    if cfg.mode == "meanfield-branch":
        keys = ["d", "dissipator", "gammaC"]
    header = keys + list(COLUMNS[cfg.mode]) + ["error"]
    csv_path = out / f"{cfg.mode}.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write("# rates, gaps and frequencies in units of |V|; config hash " + digest + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rec in ordered:
            for row in rec["rows"]:
                merged = {**rec["point"], **row}
                if rec["error"]:
                    merged["error"] = rec["error"]
                w.writerow([_fmt(merged.get(k)) for k in header])
    n_failed = sum(r["error"] is not None for r in ordered)
    meta = {"version": __version__, "config": cfg.echo(), "config_hash": digest,
            "n_points": len(points), "n_failed": n_failed, "n_cached": n_cached,
            "workers": workers, "wall_time": time.perf_counter() - t0,
            "points": [{"point": r["point"], "wall_time": r["wall_time"], "error": r["error"]}
                       for r in ordered]}
    meta_path = out / f"{cfg.mode}.meta.json"
    meta_path.write_text(json.dumps(meta, indent=2))
    return SweepResult(csv_path, meta_path, len(points), n_failed, n_cached, ordered)


def _run_cavity(cfg: SweepConfig, out: Path) -> SweepResult:
    from .cavity_map import (build_hardware, check_conditions, effective_coefficients,
                             rb87_scenario, write_residuals_csv)
    from .spin_core import SpinQuantum, make_dissipator

    c = cfg.cavity
    t0 = time.perf_counter()
    try:
        if c["scenario"] == "rb87":
            report = rb87_scenario(c["dissipator"], c["N"], c["g"], c["Delta"], c["kappa"],
                                   c["delta"]).report
        else:
            hw = build_hardware(c["d"], c["N"], c["V"], c["gammaC"], c["dissipator"],
                                g_a=c["g"], g_b=c["g"], Delta=c["Delta"], kappa=c["kappa"],
                                detuning_ratio=c["detuning_ratio"])
    except ValueError as exc:
        raise ConfigError([f"cavity: {exc}"]) from exc
    if c["scenario"] != "rb87":
        diss = make_dissipator(c["dissipator"], SpinQuantum(c["d"]))
        report = check_conditions(effective_coefficients(hw), diss, V=c["V"],
                                  gammaC=c["gammaC"], strict=False)
    (out / "cavity_report.txt").write_text(report.to_text() + "\n")
    csv_path = out / "cavity_residuals.csv"
    write_residuals_csv(csv_path, report)
    meta_path = out / "cavity-map.meta.json"
    meta_path.write_text(json.dumps({"version": __version__, "config": cfg.echo(),
                                     "config_hash": cfg.digest(),
                                     "wall_time": time.perf_counter() - t0}, indent=2))
    return SweepResult(csv_path, meta_path, 1, 0, 0)


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quditlmg", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, mode in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=f"run a {mode} sweep")
        sp.add_argument("--config", required=True, help="YAML configuration file")
        sp.add_argument("--out", help="output directory (overrides 'output')")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--capacity", type=int, help="largest permutation-invariant basis")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    mode = SUBCOMMANDS[args.command]
    try:
        text = Path(args.config).read_text()
        cfg = validate_config(text, mode)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"{args.config}: {line}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out:
        cfg.output = args.out
    if args.capacity:
        cfg.solver["capacity"] = args.capacity
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        result = run_sweep(cfg, args.workers)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    print(f"wrote {result.csv_path} ({result.n_points} points, {result.n_failed} failed, "
          f"{result.n_cached} cached)")
    return EXIT_PARTIAL if result.n_failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
