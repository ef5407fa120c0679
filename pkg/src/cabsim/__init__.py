"""Trace-driven simulation of budget-constrained cache-content advertisement."""

from .advertiser import Configuration, Limits, Mode, SegmentStats, reconfigure
from .cache import Cache
from .indicator import BitFilter, CountingFilter, new_filter
from .simulator import CAB, CF, Scenario, Static, grid_search, run
from .workload import WorkloadSource, parse_workload, zipf_stream

__all__ = [
    "CAB", "CF", "Cache", "BitFilter", "Configuration", "CountingFilter", "Limits", "Mode",
    "Scenario", "SegmentStats", "Static", "WorkloadSource", "grid_search", "new_filter",
    "parse_workload", "reconfigure", "run", "zipf_stream",
]
