"""Request loop, cost accounting, the static grid search and the CacheFirst baseline.

Two engines produce identical :class:`RunResult` objects:

``reference``
    drives a fresh :class:`~cabsim.cache.Cache` per run through the
    object-level indicator/advertiser/netlink APIs, diffing full filters at
    every advertisement.  Slow; meant for small scenarios and cross-checks.
``fast``
    records the cache trace once per (workload, capacity, policy, seed) and
    replays it through :mod:`cabsim._engine`.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import multiprocessing
import numpy as np

from . import _engine as eng
from .advertiser import (
    Advertiser,
    CabAdvertiser,
    Configuration,
    Limits,
    Mode,
    SegmentStats,
    StaticAdvertiser,
    initial_config,
    reconfigure,
    segment_length,
    u_max,
)
from .cache import Cache
from .indicator import index_bits, optimal_k
from .netlink import Link
from .workload import WorkloadSource, default_workload

SEGMENT_COLUMNS = [
    "segment_index", "t_end", "indicator_bits", "update_interval", "mode",
    "fp_ratio", "fn_ratio", "bw_attempted_per_req", "bw_delivered_per_req",
    "hit_ratio", "avg_cost_segment", "dropped_updates",
]
SCENARIO_COLUMNS = [
    "capacity", "policy", "workload", "budget", "miss_penalty", "alpha",
    "u_min", "i_min", "i_max", "seed", "advertiser",
]


@dataclass(frozen=True)
class Scenario:
    capacity: int = 16384
    policy: str = "lru"
    workload: WorkloadSource = field(default_factory=default_workload)
    budget: float = 20
    miss_penalty: float = 3.0
    alpha: int = 10
    u_min: int = 10
    i_min_bpe: float = 2.5
    i_max_bpe: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.limits  # validates the rest

    @property
    def i_min(self) -> int:
        return max(1, int(self.i_min_bpe * self.capacity))

    @property
    def i_max(self) -> int:
        return max(1, int(self.i_max_bpe * self.capacity))

    @property
    def limits(self) -> Limits:
        return Limits(self.budget, self.miss_penalty, self.u_min, self.i_min, self.i_max)

    @property
    def segment_length(self) -> int:
        return segment_length(self.alpha, self.limits, self.capacity)

    def fields(self) -> dict:
        return {
            "capacity": self.capacity, "policy": self.policy, "workload": self.workload.describe(),
            "budget": self.budget, "miss_penalty": self.miss_penalty, "alpha": self.alpha,
            "u_min": self.u_min, "i_min": self.i_min, "i_max": self.i_max, "seed": self.seed,
        }


# advertiser selections
CAB = "cab"
CF = "cf"
PERFECT = "perfect"


@dataclass(frozen=True)
class Static:
    indicator_bits: int
    update_interval: int
    full_only: bool = False

    @property
    def config(self) -> Configuration:
        return Configuration(self.indicator_bits, self.update_interval)

    def __str__(self):
        return f"static:{self.indicator_bits},{self.update_interval}" + (":full" if self.full_only else "")


AdvertiserKind = Union[str, Static]


def parse_advertiser(text: str) -> AdvertiserKind:
    text = text.strip().lower()
    if text in (CAB, CF, PERFECT):
        return text
    if text.startswith("static:"):
        body = text[len("static:"):]
        full_only = body.endswith(":full")
        if full_only:
            body = body[: -len(":full")]
        try:
            size, interval = (int(x) for x in body.split(","))
        except ValueError:
            raise ValueError(f"static advertiser is static:SIZE,INTERVAL, got {text!r}") from None
        if size < 1 or interval < 1:
            raise ValueError("static size and interval must be positive")
        return Static(size, interval, full_only)
    raise ValueError(f"unknown advertiser {text!r}; expected cab, cf or static:SIZE,INTERVAL")


@dataclass
class SegmentRow:
    segment_index: int
    t_end: int
    indicator_bits: int
    update_interval: int
    mode: str
    stats: SegmentStats
    complete: bool

    def as_dict(self) -> dict:
        st = self.stats
        return {
            "segment_index": self.segment_index, "t_end": self.t_end,
            "indicator_bits": self.indicator_bits, "update_interval": self.update_interval,
            "mode": self.mode, "fp_ratio": st.fp_ratio, "fn_ratio": st.fn_ratio,
            "bw_attempted_per_req": st.bw, "bw_delivered_per_req": st.bw_delivered,
            "hit_ratio": st.hit_ratio, "avg_cost_segment": st.avg_cost,
            "dropped_updates": st.dropped_updates,
        }


@dataclass
class EventLog:
    indication: np.ndarray
    present: np.ndarray
    miss_penalty: float


@dataclass
class RunResult:
    avg_cost: float
    requests: int
    rows: List[SegmentRow]
    totals: Dict[str, int]
    feasible: bool
    advertiser: str
    completed: bool = True
    events: Optional[EventLog] = None

    @property
    def hit_ratio(self) -> float:
        return self.totals["present"] / self.requests if self.requests else 0.0

    def hit_series(self) -> List[float]:
        return [r.stats.hit_ratio for r in self.rows]

    def modes(self) -> List[str]:
        return [r.mode for r in self.rows]


def _mode_label(kind: AdvertiserKind, mode: Optional[Mode]) -> str:
    if mode is not None:
        return str(int(mode))
    return "static" if isinstance(kind, Static) else str(kind)


def _totals(rows: Sequence[SegmentRow]) -> Dict[str, int]:
    t = dict(hits=0, misses=0, fp=0, fn=0, skips=0, present=0, sent_bits=0, delivered_bits=0, dropped_updates=0)
    for r in rows:
        st = r.stats
        t["hits"] += st.hits
        t["misses"] += st.misses
        t["skips"] += st.skips
        t["fp"] += st.fp_count
        t["fn"] += st.fn_count
        t["present"] += st.present_count
        t["sent_bits"] += st.bits_sent
        t["delivered_bits"] += st.bits_delivered
        t["dropped_updates"] += st.dropped_updates
    return t


def service_cost(n_pos_hit: int, n_pos_miss: int, n_neg: int, miss_penalty: float) -> float:
    """Mean cost per request from outcome counts, always summed in this order."""
    n = n_pos_hit + n_pos_miss + n_neg
    if n == 0:
        return math.nan
    return (n_pos_hit * 1.0 + n_pos_miss * (1.0 + miss_penalty) + n_neg * miss_penalty) / n


def _mean_cost(totals: Dict[str, int], miss_penalty: float) -> float:
    return service_cost(totals["hits"], totals["misses"], totals["skips"], miss_penalty)


def _is_feasible(rows: Sequence[SegmentRow], budget: float, T: int) -> bool:
    return all(r.stats.bits_sent <= budget * T for r in rows if r.complete)


# --------------------------------------------------------------------------
# reference engine

class _NoAdvertiser(Advertiser):
    """Stats holder for the advertisement-free baselines."""

    def __init__(self):
        self.stats = SegmentStats()
        self.config = Configuration(0, 0)
        self.since_attempt = 0

    def on_event(self, event, key):
        pass

    def maybe_advertise(self):
        return None


def _run_reference(sc: Scenario, kind: AdvertiserKind, keys: np.ndarray, police: bool, log_events: bool,
                   stop_when_infeasible: bool) -> RunResult:
    limits = sc.limits
    T = sc.segment_length
    M = float(sc.miss_penalty)
    if kind == CAB:
        adv = CabAdvertiser(limits, sc.capacity, sc.seed)
    elif isinstance(kind, Static):
        adv = StaticAdvertiser(kind.config, sc.capacity, sc.seed, full_only=kind.full_only)
    elif kind in (CF, PERFECT):
        adv = _NoAdvertiser()
    else:
        raise ValueError(f"unknown advertiser {kind!r}")
    indicating = not isinstance(adv, _NoAdvertiser)
    cache = Cache(sc.capacity, sc.policy, sink=adv.on_event, seed=sc.seed)
    link = Link(sc.budget * T, police=police)
    if indicating:
        first = adv.initial_advertisement()
        adv.record(first, link.try_send(first))

    n = len(keys)
    ind_log = np.zeros(n if log_events else 0, dtype=np.uint8)
    pres_log = np.zeros(n if log_events else 0, dtype=np.uint8)
    rows: List[SegmentRow] = []
    seg_start = 0
    completed = True
    for t, key in enumerate(keys.tolist()):
        present = key in cache
        if kind == CF:
            indication = True
        elif kind == PERFECT:
            indication = present
        else:
            indication = link.client.query(key)
        st = adv.stats
        if indication:
            hit = cache.get(key)
            if hit:
                c = 1.0
                st.hits += 1
            else:
                c = 1.0 + M
                st.misses += 1
        else:
            c = M
            st.skips += 1
        cache.put(key)
        st.cost_sum += c
        if present:
            st.present_count += 1
        if log_events:
            ind_log[t] = indication
            pres_log[t] = present
        if indicating:
            adv.on_request(indication, present)
            out = adv.maybe_advertise()
            if out is not None:
                adv.record(out, link.try_send(out))
        else:
            st.requests += 1
        if t + 1 - seg_start == T or t + 1 == n:
            complete = t + 1 - seg_start == T
            cfg = adv.config
            stats = adv.stats
            mode = None
            if complete:
                mode = adv.end_segment(cache.contents())
                link.segment_reset()
            rows.append(SegmentRow(len(rows), t + 1, cfg.indicator_bits, cfg.update_interval,
                                   _mode_label(kind, mode) if complete else "", stats, complete))
            seg_start = t + 1
            if stop_when_infeasible and complete and stats.bits_sent > sc.budget * T:
                completed = t + 1 == n
                break
    requests = rows[-1].t_end if rows else 0
    events = EventLog(ind_log[:requests], pres_log[:requests], M) if log_events else None
    totals = _totals(rows)
    return RunResult(_mean_cost(totals, M), requests, rows, totals,
                     _is_feasible(rows, sc.budget, T), str(kind), completed, events)


# --------------------------------------------------------------------------
# fast engine

_TRACES: Dict[tuple, eng.CacheTrace] = {}
_KEYS: Dict[tuple, np.ndarray] = {}


def workload_keys(sc: Scenario) -> np.ndarray:
    tag = (sc.workload.describe(), sc.seed)
    if tag not in _KEYS:
        _KEYS.clear()
        keys = sc.workload.keys(sc.seed)
        if len(keys) == 0:
            raise ValueError("workload is empty")
        _KEYS[tag] = keys
    return _KEYS[tag]


def cache_trace(sc: Scenario, keys: Optional[np.ndarray] = None) -> eng.CacheTrace:
    """Recorded cache outcomes for the scenario's workload (memoized)."""
    if keys is not None:
        return eng.record_trace(keys, sc.capacity, sc.policy, sc.seed)
    tag = (sc.workload.describe(), sc.capacity, sc.policy.lower(), sc.seed)
    if tag not in _TRACES:
        if len(_TRACES) >= 4:
            _TRACES.pop(next(iter(_TRACES)))
        _TRACES[tag] = eng.record_trace(workload_keys(sc), sc.capacity, sc.policy, sc.seed)
    return _TRACES[tag]


def _stats_from(seg: np.ndarray) -> SegmentStats:
    return SegmentStats(
        requests=int(seg[eng.REQ]), fp_count=int(seg[eng.FP]), fn_count=int(seg[eng.FN]),
        bits_sent=int(seg[eng.SENT]), full_update_sent=bool(seg[eng.FULL]),
        bits_delivered=int(seg[eng.DELIV]), dropped_updates=int(seg[eng.DROP]),
        present_count=int(seg[eng.PRESENT]), cost_sum=float(seg[eng.COST]),
        hits=int(seg[eng.POS_HIT]), misses=int(seg[eng.POS_MISS]), skips=int(seg[eng.NEG]),
    )


def _run_fast(sc: Scenario, kind: AdvertiserKind, trace: eng.CacheTrace, police: bool, log_events: bool,
              stop_when_infeasible: bool) -> RunResult:
    limits = sc.limits
    T = sc.segment_length
    M = float(sc.miss_penalty)
    budget = float(sc.budget * T)
    full_only = False
    if kind == CAB:
        cfg, mode_flag, max_bits = initial_config(limits), eng.INDICATOR, limits.i_max
    elif isinstance(kind, Static):
        cfg, mode_flag, max_bits = kind.config, eng.INDICATOR, kind.indicator_bits
        full_only = kind.full_only
    elif kind == CF:
        cfg, mode_flag, max_bits = Configuration(0, 0), eng.ALWAYS_ACCESS, 1
    elif kind == PERFECT:
        cfg, mode_flag, max_bits = Configuration(0, 0), eng.PERFECT, 1
    else:
        raise ValueError(f"unknown advertiser {kind!r}")

    n = len(trace)
    rp = eng.Replay(trace, max_bits)
    log = np.zeros(n if log_events else 0, dtype=np.uint8)
    indicating = mode_flag == eng.INDICATOR

    def shape(size):
        rp.set_shape(size, optimal_k(size, sc.capacity))

    seg = np.zeros(eng.N_SEG)
    if indicating:
        shape(cfg.indicator_bits)
        rp.attempt(seg, budget, police, full_only, index_bits(cfg.indicator_bits))

    rows: List[SegmentRow] = []
    completed = True
    for start in range(0, n, T):
        end = min(start + T, n)
        rp.run(start, end, seg, cfg.update_interval, budget, police, full_only,
               index_bits(max(cfg.indicator_bits, 1)), M, mode_flag, log)
        stats = _stats_from(seg)
        complete = end - start == T
        mode = None
        used = cfg
        if complete:
            if kind == CAB:
                new, mode = reconfigure(stats, cfg, limits)
                if new.indicator_bits != cfg.indicator_bits:
                    shape(new.indicator_bits)
                cfg = new
                rp.ist[eng.SINCE] = 0
            rp.ist[eng.DELIVERED] = 0
        rows.append(SegmentRow(len(rows), end, used.indicator_bits, used.update_interval,
                               _mode_label(kind, mode) if complete else "", stats, complete))
        seg = np.zeros(eng.N_SEG)
        if stop_when_infeasible and complete and stats.bits_sent > budget:
            completed = end == n
            break
    requests = rows[-1].t_end if rows else 0
    events = EventLog(log[:requests], trace.present[:requests].copy(), M) if log_events else None
    totals = _totals(rows)
    return RunResult(_mean_cost(totals, M), requests, rows, totals,
                     _is_feasible(rows, sc.budget, T), str(kind), completed, events)


def run(sc: Scenario, kind: AdvertiserKind = CAB, *, engine: str = "fast", police: bool = True,
        keys: Optional[np.ndarray] = None, trace: Optional[eng.CacheTrace] = None,
        log_events: bool = False, stop_when_infeasible: bool = False) -> RunResult:
    """Simulate one advertiser over the scenario's workload.

    ``police=False`` delivers every advertisement regardless of the budget.
    ``stop_when_infeasible`` ends the run at the first complete segment whose
    attempted bits exceed the budget (the grid search discards those anyway).
    """
    if isinstance(kind, str):
        kind = parse_advertiser(kind)
    if engine == "reference":
        if keys is None:
            keys = workload_keys(sc)
        if len(keys) == 0:
            raise ValueError("workload is empty")
        return _run_reference(sc, kind, keys, police, log_events, stop_when_infeasible)
    if engine != "fast":
        raise ValueError(f"unknown engine {engine!r}")
    if trace is None:
        if keys is not None and len(keys) == 0:
            raise ValueError("workload is empty")
        trace = cache_trace(sc, keys)
    if len(trace) == 0:
        raise ValueError("workload is empty")
    return _run_fast(sc, kind, trace, police, log_events, stop_when_infeasible)


# --------------------------------------------------------------------------
# verification

def cost_oracle(events: EventLog) -> float:
    """Average cost recomputed from per-request indication/presence counts."""
    ind = events.indication.astype(bool)
    pres = events.present.astype(bool)
    M = events.miss_penalty
    n_pos_hit = int(np.count_nonzero(ind & pres))
    n_pos_miss = int(np.count_nonzero(ind & ~pres))
    n_neg = int(np.count_nonzero(~ind))
    return service_cost(n_pos_hit, n_pos_miss, n_neg, M)


# --------------------------------------------------------------------------
# static grid search

def size_grid(limits: Limits) -> List[int]:
    top = math.floor(math.log(limits.i_max / limits.i_min) / math.log(1.1) + 1e-9)
    sizes = [math.floor(limits.i_min * 1.1 ** i) for i in range(top + 1)]
    if sizes[-1] != limits.i_max:
        sizes.append(limits.i_max)
    return sizes


def interval_grid(limits: Limits) -> List[int]:
    top = math.floor(math.log(u_max(limits) / limits.u_min) / math.log(1.15) + 1e-9)
    return [round(limits.u_min * 1.15 ** j) for j in range(top + 1)]


@dataclass
class GridResult:
    best: Optional[Static]
    best_cost: float
    table: List[dict]

    @property
    def feasible(self) -> List[dict]:
        return [row for row in self.table if row["feasible"]]


_GRID_STATE: dict = {}


def _grid_point(args):
    index, point = args
    sc, trace, prune = _GRID_STATE["sc"], _GRID_STATE["trace"], _GRID_STATE["prune"]
    res = _run_fast(sc, point, trace, True, False, prune)
    return index, {
        "indicator_bits": point.indicator_bits, "update_interval": point.update_interval,
        "feasible": res.feasible and res.completed, "avg_cost": res.avg_cost if res.completed else math.nan,
        "max_bw": max((r.stats.bw for r in res.rows if r.complete), default=0.0),
        "hit_series": res.hit_series(),
    }


def grid_search(sc: Scenario, *, jobs: int = 1, prune: bool = True, trace: Optional[eng.CacheTrace] = None,
                sizes: Optional[Sequence[int]] = None, intervals: Optional[Sequence[int]] = None) -> GridResult:
    """Best static configuration that stays within budget in every segment.

    With ``prune`` a point is abandoned at its first over-budget segment; its
    row is then reported infeasible with no cost.
    """
    limits = sc.limits
    sizes = list(sizes) if sizes is not None else size_grid(limits)
    intervals = list(intervals) if intervals is not None else interval_grid(limits)
    trace = trace if trace is not None else cache_trace(sc)
    points = [Static(s, u) for s in sizes for u in intervals]
    _GRID_STATE.update(sc=sc, trace=trace, prune=prune)
    try:
        if jobs > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                results = list(pool.map(_grid_point, enumerate(points), chunksize=4))
        else:
            results = [_grid_point(item) for item in enumerate(points)]
    finally:
        _GRID_STATE.clear()
    table = [row for _, row in sorted(results, key=lambda r: r[0])]
    feasible = [r for r in table if r["feasible"]]
    if not feasible:
        return GridResult(None, math.nan, table)
    top = min(feasible, key=lambda r: (r["avg_cost"], r["indicator_bits"], r["update_interval"]))
    return GridResult(Static(top["indicator_bits"], top["update_interval"]), top["avg_cost"], table)


# --------------------------------------------------------------------------
# CSV output

def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in header])


def segments_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SEGMENT_COLUMNS)
    for row in result.rows:
        d = row.as_dict()
        w.writerow([_fmt(d[c]) for c in SEGMENT_COLUMNS])
    return buf.getvalue()


def write_segments(path, result: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(segments_csv(result))


def summary_row(sc: Scenario, result: RunResult, **extra) -> dict:
    row = sc.fields()
    row["advertiser"] = result.advertiser
    row.update(extra)
    row["avg_cost_total"] = result.avg_cost
    return row


def write_summary(path, rows: Sequence[dict]) -> None:
    if not rows:
        raise ValueError("no summary rows")
    header = list(rows[0])
    _write_csv(path, header, rows)


def write_grid(path, grid: GridResult) -> None:
    header = ["indicator_bits", "update_interval", "feasible", "avg_cost", "max_bw"]
    _write_csv(path, header, grid.table)
