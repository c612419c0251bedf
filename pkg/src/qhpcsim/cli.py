"""Command line: validate-scenario, simulate, sweep."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .metrics import export
from .scenario import ScenarioError, check, get_path, parse_scenario, read_json, set_path
from .sim_core import ConfigurationError, SimulationError
from .simulation import Simulation

OUT_ENV = "QHPCSIM_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

SWEEP_COLUMNS = [
    "index", "value", "seed", "jobs_completed", "jobs_failed", "mean_latency_ns", "makespan_ns",
    "offload_fraction", "throughput_jobs_per_s", "switch_throughput_per_s",
    "capacity_isolated_log2", "capacity_interconnected_log2", "capacity_isolated_dim",
]


class UsageError(Exception):
    pass


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "out")


def parse_range(spec: str) -> list[int | float]:
    """``start:stop:step`` inclusive of stop; integers stay integers."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"range {spec!r} is not start:stop:step")
    try:
        start, stop, step = (Decimal(p) for p in parts)
    except InvalidOperation as exc:
        raise UsageError(f"range {spec!r} has a non-numeric bound") from exc
    if step <= 0:
        raise UsageError("sweep step must be > 0")
    if stop < start:
        raise UsageError("sweep stop is below start")
    integral = all(d == d.to_integral_value() for d in (start, stop, step)) and not any("." in p for p in parts)
    values = []
    v = start
    while v <= stop:
        values.append(int(v) if integral else float(v))
        v += step
    return values


def _load(path: str) -> tuple[dict, Path]:
    p = Path(path)
    if not p.is_file():
        raise ScenarioError([f"{path}: no such scenario file"])
    return read_json(p), p.parent


def _run_point(data: dict, base: Path, seed: int | None, out_dir: Path, fmt: str, event_log: bool) -> dict:
    problems = check(data, base)
    if problems:
        raise ScenarioError(problems)
    sc = parse_scenario(data, base)
    out_dir.mkdir(parents=True, exist_ok=True)
    if event_log:
        with open(out_dir / "events.log", "w", encoding="utf-8", newline="\n") as fh:
            report = Simulation(sc, fh, seed).run()
    else:
        report = Simulation(sc, None, seed).run()
    export(report, out_dir, fmt)
    return report


def _sweep_worker(args):
    data, base, seed, out_dir, fmt, event_log = args
    return _run_point(data, base, seed, out_dir, fmt, event_log)


def cmd_validate(ns) -> int:
    data, base = _load(ns.scenario)
    problems = check(data, base)
    if problems:
        for p in problems:
            print(f"violation: {p}")
        return EXIT_CONFIG
    print("OK")
    return EXIT_OK


def cmd_simulate(ns) -> int:
    data, base = _load(ns.scenario)
    out = Path(ns.out or _default_out())
    report = _run_point(data, base, ns.seed, out, ns.format, ns.event_log)
    sysm = report["system"]
    print(f"completed {sysm['jobs_completed']}/{sysm['jobs_arrived']} jobs; report in {out}")
    return EXIT_OK


def cmd_sweep(ns) -> int:
    data, base = _load(ns.scenario)
    path, _, rng = ns.param.partition("=")
    if not rng:
        raise UsageError("--param must look like dotted.path=start:stop:step")
    try:
        get_path(data, path)
    except (KeyError, IndexError, ValueError) as exc:
        raise UsageError(f"unknown parameter path {path!r}") from exc
    values = parse_range(rng)
    seed0 = int(data.get("seed", 0)) if ns.seed is None else ns.seed
    out = Path(ns.out or _default_out())
    jobs = []
    for i, v in enumerate(values):
        point = set_path(data, path, v)
        jobs.append((point, base, seed0 + i, out / f"point_{i:03d}", ns.format, False))
    if ns.workers > 1:
        with ProcessPoolExecutor(max_workers=ns.workers) as pool:
            reports = list(pool.map(_sweep_worker, jobs))
    else:
        reports = [_sweep_worker(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for i, (v, rep) in enumerate(zip(values, reports)):
            s = rep["system"]
            cap = s.get("capacity", {})
            row = [i, v, seed0 + i, s["jobs_completed"], s["jobs_failed"], s["mean_latency_ns"], s["makespan_ns"],
                   s["offload_fraction"], s["throughput_jobs_per_s"], s["switch_throughput_per_s"],
                   cap.get("isolated_log2"), cap.get("interconnected_log2"), cap.get("isolated_dim")]
            w.writerow(["" if x is None else x for x in row])
    print(f"{len(values)} sweep points; combined table in {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qhpcsim", description="Hybrid CPU-QPU system simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate-scenario", help="check a scenario without running it")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run a scenario to its horizon")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.add_argument("--event-log", action="store_true", help="also write events.log")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a scenario over a range of one parameter")
    w.add_argument("scenario")
    w.add_argument("--param", required=True, metavar="PATH=START:STOP:STEP")
    w.add_argument("--seed", type=int, help="base seed (point i uses seed + i)")
    w.add_argument("--out")
    w.add_argument("--format", choices=["json", "csv"], default="json")
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        return ns.func(ns)
    except UsageError as exc:
        ap.error(str(exc))  # exits 2 like any argparse usage error
    except ScenarioError as exc:
        for v in exc.violations:
            print(f"configuration error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, OSError, RuntimeError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
