"""Advertisement scheduling and the self-adjusting CAB controller.

At every segment end CAB looks at the segment's false-positive and
false-negative ratios and its bandwidth spend, and picks a new
(indicator size, update interval) configuration in one of three modes:

* Mode 1, a full indicator went out: rebalance FP against (M-1)*FN by a
  square-root step on the size, interval follows from the budget;
* Mode 2, only deltas went out: shortest interval, size rescaled so the
  delta bit rate matches the budget;
* Mode 3, deltas over budget at minimum size: fall back to the full-indicator
  interval for the minimum size.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

from scipy.special import lambertw

from . import indicator as ind

LN2 = math.log(2.0)

# Per-reconfiguration clamp on the Mode 1 resize factor.
MIN_STEP = 0.25
MAX_STEP = 4.0


class Mode(enum.IntEnum):
    FULL = 1
    DELTA = 2
    FALLBACK = 3


@dataclass(frozen=True)
class Limits:
    budget: float
    miss_penalty: float = 3.0
    u_min: int = 10
    i_min: int = 1
    i_max: int = 1

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.miss_penalty <= 1:
            raise ValueError("miss penalty must exceed 1")
        if not 1 <= self.i_min <= self.i_max:
            raise ValueError(f"need 1 <= i_min <= i_max, got {self.i_min}, {self.i_max}")
        if self.u_min < 1:
            raise ValueError("u_min must be at least 1")


@dataclass(frozen=True)
class Configuration:
    indicator_bits: int
    update_interval: int

    def __str__(self):
        return f"({self.indicator_bits}, {self.update_interval})"


@dataclass
class SegmentStats:
    requests: int = 0
    fp_count: int = 0
    fn_count: int = 0
    bits_sent: int = 0
    full_update_sent: bool = False
    bits_delivered: int = 0
    dropped_updates: int = 0
    present_count: int = 0
    cost_sum: float = 0.0
    hits: int = 0
    misses: int = 0
    skips: int = 0

    @property
    def fp_ratio(self) -> float:
        return self.fp_count / self.requests if self.requests else 0.0

    @property
    def fn_ratio(self) -> float:
        return self.fn_count / self.requests if self.requests else 0.0

    @property
    def bw(self) -> float:
        return self.bits_sent / self.requests if self.requests else 0.0

    @property
    def bw_delivered(self) -> float:
        return self.bits_delivered / self.requests if self.requests else 0.0

    @property
    def hit_ratio(self) -> float:
        return self.present_count / self.requests if self.requests else 0.0

    @property
    def avg_cost(self) -> float:
        return self.cost_sum / self.requests if self.requests else 0.0


def full_interval(size: int, limits: Limits) -> int:
    """Smallest interval at which a full indicator every update fits the budget."""
    return max(limits.u_min, math.ceil(size / limits.budget))


def u_max(limits: Limits) -> int:
    return math.ceil(limits.i_max / limits.budget)


def initial_config(limits: Limits) -> Configuration:
    return Configuration(limits.i_min, full_interval(limits.i_min, limits))


def segment_length(alpha: int, limits: Limits, capacity: int) -> int:
    if alpha < 1:
        raise ValueError("alpha must be at least 1")
    return alpha * max(u_max(limits), capacity)


def fit_to_range(size: float, limits: Limits) -> int:
    return int(max(min(size, limits.i_max), limits.i_min))


# --------------------------------------------------------------------------
# delta-regime sizing: solve x*log2(x) = a

def solve_xlog2x(a: float) -> float:
    """Real root x >= 1 of x * log2(x) = a, via the principal Lambert W branch."""
    if a <= 0:
        return 1.0
    return math.exp(lambertw(a * LN2).real)


def floor_xlog2x(a: float) -> int:
    """Largest integer n >= 1 with n * log2(n) <= a."""
    n = max(1, int(solve_xlog2x(a)))
    while (n + 1) * math.log2(n + 1) <= a:
        n += 1
    while n > 1 and n * math.log2(n) > a:
        n -= 1
    return n


def lambert_target(size: int, budget: float, bw: float) -> float:
    return (budget / bw) * size * math.log2(size)


def lambert_size(size: int, budget: float, bw: float, i_max: Optional[int] = None) -> float:
    """Indicator size whose delta bit rate would match the budget.

    With no bits spent there is nothing to scale by, so the answer is the
    largest allowed size (``i_max``, or infinity when not given).
    """
    if bw <= 0:
        return float(i_max) if i_max is not None else math.inf
    return solve_xlog2x(lambert_target(size, budget, bw))


# --------------------------------------------------------------------------
# per-segment reconfiguration

def classify(stats: SegmentStats, cur: Configuration, limits: Limits) -> Mode:
    if stats.full_update_sent:
        return Mode.FULL
    if cur.indicator_bits > limits.i_min or stats.bw <= limits.budget:
        return Mode.DELTA
    return Mode.FALLBACK


def balance_factor(stats: SegmentStats, miss_penalty: float) -> float:
    """sqrt(FP / ((M-1) FN)) with half-event floors on empty counts, clamped."""
    floor = 1.0 / (2 * stats.requests)
    fp = stats.fp_count / stats.requests if stats.fp_count else floor
    fn = stats.fn_count / stats.requests if stats.fn_count else floor
    factor = math.sqrt(fp / ((miss_penalty - 1) * fn))
    return min(max(factor, MIN_STEP), MAX_STEP)


def reconfigure(stats: SegmentStats, cur: Configuration, limits: Limits) -> tuple[Configuration, Mode]:
    mode = classify(stats, cur, limits)
    size = cur.indicator_bits
    if mode is Mode.FULL:
        new = fit_to_range(math.floor(size * balance_factor(stats, limits.miss_penalty)), limits)
        return Configuration(new, full_interval(new, limits)), mode
    if mode is Mode.DELTA:
        if stats.bits_sent == 0:
            new = limits.i_max
        else:
            new = fit_to_range(floor_xlog2x(lambert_target(size, limits.budget, stats.bw)), limits)
        return Configuration(new, limits.u_min), mode
    return Configuration(size, full_interval(size, limits)), mode


# --------------------------------------------------------------------------
# advertisers driven by the reference simulator

class Advertiser:
    """Keeps the cache-side counting filter and emits advertisements on schedule.

    ``mirror`` is the cache's copy of what the client holds; it only moves
    when :meth:`record` is told an advertisement was delivered.
    """

    label = ""

    def __init__(self, config: Configuration, capacity: int, seed: int = 0, full_only: bool = False):
        self.config = config
        self.capacity = capacity
        self.seed = seed
        self.full_only = full_only
        self.filter = ind.new_filter(config.indicator_bits, capacity, seed)
        self.mirror: Optional[ind.BitFilter] = None
        self.stats = SegmentStats()
        self.since_attempt = 0

    # cache event sink
    def on_event(self, event: str, key: int) -> None:
        if event == "admit":
            self.filter.insert(key)
        else:
            self.filter.remove(key)

    def on_request(self, indication: bool, truth: bool) -> None:
        st = self.stats
        st.requests += 1
        if indication and not truth:
            st.fp_count += 1
        elif truth and not indication:
            st.fn_count += 1
        self.since_attempt += 1

    def build(self) -> tuple[ind.Advertisement, bool]:
        """Next advertisement and whether it was forced full by a shape change."""
        cur = ind.compress(self.filter)
        if self.mirror is None or not self.mirror.same_shape(cur):
            return ind.Advertisement.full(cur), True
        if self.full_only:
            return ind.Advertisement.full(cur), False
        return ind.choose_update(self.mirror, cur), False

    def initial_advertisement(self) -> ind.Advertisement:
        adv, _ = self.build()
        return adv

    def maybe_advertise(self) -> Optional[ind.Advertisement]:
        if self.since_attempt < self.config.update_interval:
            return None
        self.since_attempt = 0
        adv, forced = self.build()
        if adv.is_full and not forced:
            self.stats.full_update_sent = True
        return adv

    def record(self, adv: ind.Advertisement, delivered: bool) -> None:
        st = self.stats
        st.bits_sent += adv.bit_cost
        if delivered:
            st.bits_delivered += adv.bit_cost
            self.mirror = adv.snapshot.copy() if adv.is_full else ind.apply(self.mirror, adv)
        else:
            st.dropped_updates += 1

    def end_segment(self, resident: Iterable[int]) -> Optional[Mode]:
        """Close the segment; returns the mode chosen, if the advertiser adapts."""
        self.stats = SegmentStats()
        return None

    def resize(self, size: int, resident: Iterable[int]) -> None:
        self.filter = ind.new_filter(size, self.capacity, self.seed)
        for key in resident:
            self.filter.insert(key)


class StaticAdvertiser(Advertiser):
    label = "static"


class CabAdvertiser(Advertiser):
    label = "cab"

    def __init__(self, limits: Limits, capacity: int, seed: int = 0):
        super().__init__(initial_config(limits), capacity, seed)
        self.limits = limits

    def end_segment(self, resident):
        new, mode = reconfigure(self.stats, self.config, self.limits)
        if new.indicator_bits != self.config.indicator_bits:
            self.resize(new.indicator_bits, resident)
        self.config = new
        self.since_attempt = 0
        super().end_segment(resident)
        return mode
