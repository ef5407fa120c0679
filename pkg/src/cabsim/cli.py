"""Command-line front end: ``cabsim run | grid | sweep``.

Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
3 empty result (no feasible static configuration).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

from . import simulator as sim
from .workload import TraceError, parse_workload

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_EMPTY = 0, 1, 2, 3

# config-file key -> (Scenario field or None, parser)
SETTINGS = {
    "policy": ("policy", str),
    "cache": ("capacity", int),
    "budget": ("budget", float),
    "miss_penalty": ("miss_penalty", float),
    "alpha": ("alpha", int),
    "umin": ("u_min", int),
    "imin_bpe": ("i_min_bpe", float),
    "imax_bpe": ("i_max_bpe", float),
    "workload": ("workload", parse_workload),
    "seed": ("seed", int),
    "adv": (None, sim.parse_advertiser),
    "out": (None, str),
    "jobs": (None, int),
    "police": (None, None),
}

SWEEP_DIMENSIONS = ("budget", "cache", "bpe", "interval")


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def read_config(path) -> Dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment.  Unknown keys are errors."""
    raw: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            if key not in SETTINGS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            raw[key] = value.strip()
    return raw


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file; flags given here override it")
    common.add_argument("--policy", choices=["lru", "hyperbolic"])
    common.add_argument("--cache", help="cache capacity C in keys")
    common.add_argument("--budget", help="bandwidth budget B in bits per request")
    common.add_argument("--miss-penalty", dest="miss_penalty", help="miss penalty M > 1")
    common.add_argument("--alpha", help="segment length multiplier")
    common.add_argument("--umin", help="minimal update interval")
    common.add_argument("--imin-bpe", dest="imin_bpe", help="minimal indicator size in bits per cached key")
    common.add_argument("--imax-bpe", dest="imax_bpe", help="maximal indicator size in bits per cached key")
    common.add_argument("--adv", help="cab | cf | static:SIZE,INTERVAL[:full]")
    common.add_argument("--workload", help="file:PATH[:csv] | zipf:N,S,LEN[,PHASES], joined with +")
    common.add_argument("--seed")
    common.add_argument("--out", help="output directory for CSV files")
    common.add_argument("--jobs", help="worker processes for grid and sweep")
    common.add_argument("--no-police", dest="police", action="store_const", const="false",
                        help="deliver every advertisement regardless of the budget")

    parser = argparse.ArgumentParser(prog="cabsim", description="Cache advertisement simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate one advertiser")
    sub.add_parser("grid", parents=[common], help="grid search for the best static configuration")
    sw = sub.add_parser("sweep", parents=[common], help="one run per value of a dimension")
    sw.add_argument("dimension", choices=SWEEP_DIMENSIONS)
    sw.add_argument("values", nargs="+")
    return parser


class Settings:
    def __init__(self, scenario: sim.Scenario, adv, out: str, jobs: int, police: bool):
        self.scenario = scenario
        self.adv = adv
        self.out = out
        self.jobs = jobs
        self.police = police


def resolve(args: argparse.Namespace) -> Settings:
    raw: Dict[str, str] = {}
    if args.config:
        raw.update(read_config(args.config))
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    fields = {}
    extra = {"adv": sim.CAB, "out": ".", "jobs": 1, "police": True}
    for key, text in raw.items():
        name, conv = SETTINGS[key]
        try:
            value = _parse_bool(text) if key == "police" else conv(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
        if name is None:
            extra[key] = value
        else:
            fields[name] = value
    if "policy" in fields and fields["policy"].lower() not in ("lru", "hyperbolic"):
        raise ConfigError(f"unknown policy {fields['policy']!r}")
    if extra["jobs"] < 1:
        raise ConfigError("jobs must be at least 1")
    try:
        sc = sim.Scenario(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return Settings(sc, extra["adv"], extra["out"], extra["jobs"], extra["police"])


def _summary(sc, result, **extra) -> dict:
    totals = result.totals
    n = result.requests or 1
    return sim.summary_row(sc, result, **extra, fp_ratio=totals["fp"] / n, fn_ratio=totals["fn"] / n,
                           hit_ratio=result.hit_ratio, feasible=result.feasible)


def cmd_run(st: Settings) -> int:
    result = sim.run(st.scenario, st.adv, police=st.police)
    os.makedirs(st.out, exist_ok=True)
    sim.write_segments(os.path.join(st.out, "segments.csv"), result)
    sim.write_summary(os.path.join(st.out, "summary.csv"), [_summary(st.scenario, result)])
    print(f"avg_cost {result.avg_cost:.6g}")
    return EXIT_OK


def cmd_grid(st: Settings) -> int:
    grid = sim.grid_search(st.scenario, jobs=st.jobs)
    os.makedirs(st.out, exist_ok=True)
    sim.write_grid(os.path.join(st.out, "grid.csv"), grid)
    if grid.best is None:
        print("no feasible static configuration", file=sys.stderr)
        return EXIT_EMPTY
    print(f"best {grid.best} avg_cost {grid.best_cost:.6g}")
    return EXIT_OK


def sweep_points(st: Settings, dimension: str, values: List[str]):
    """(scenario, advertiser, value) for each sweep value."""
    sc, adv = st.scenario, st.adv
    points = []
    for text in values:
        try:
            if dimension == "budget":
                v = float(text)
                points.append((replace(sc, budget=v), adv, v))
            elif dimension == "cache":
                v = int(text)
                points.append((replace(sc, capacity=v), adv, v))
            else:
                if not isinstance(adv, sim.Static):
                    raise ConfigError(f"sweeping {dimension} needs a static advertiser")
                if dimension == "bpe":
                    v = float(text)
                    size = max(1, round(v * sc.capacity))
                    points.append((sc, replace(adv, indicator_bits=size), v))
                else:
                    v = int(text)
                    if v < 1:
                        raise ValueError("interval must be positive")
                    points.append((sc, replace(adv, update_interval=v), v))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad {dimension} value {text!r}: {exc}") from None
    return points


def _sweep_one(args):
    sc, adv, police = args
    return sim.run(sc, adv, police=police)


def cmd_sweep(st: Settings, dimension: str, values: List[str]) -> int:
    points = sweep_points(st, dimension, values)
    jobs = [(sc, adv, st.police) for sc, adv, _ in points]
    if st.jobs > 1 and len(jobs) > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=min(st.jobs, len(jobs)), mp_context=ctx) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = [_summary(sc, res, sweep_dimension=dimension, sweep_value=v)
            for (sc, _, v), res in zip(points, results)]
    os.makedirs(st.out, exist_ok=True)
    sim.write_summary(os.path.join(st.out, "summary.csv"), rows)
    for row in rows:
        print(f"{dimension}={row['sweep_value']} avg_cost {row['avg_cost_total']:.6g}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        st = resolve(args)
        if args.command == "run":
            return cmd_run(st)
        if args.command == "grid":
            return cmd_grid(st)
        return cmd_sweep(st, args.dimension, args.values)
    except (TraceError, OSError) as exc:
        print(f"cabsim: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"cabsim: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
