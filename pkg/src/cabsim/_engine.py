"""Compiled replay of the advertisement pipeline over a recorded cache trace.

The cache's evolution does not depend on indications (a put follows every
request, and touches are idempotent per request), so a workload is run
through the real :class:`~cabsim.cache.Cache` once and its admissions are
recorded as slot indices.  Each advertiser configuration then replays that
trace here.  The kernel maintains the cache-side counting filter, the client
filter, and the set of positions where they differ incrementally, so an
advertisement costs O(changed bits) rather than O(m).

Control returns to Python at every segment end so the reconfiguration logic
is the same code the reference simulator uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .cache import Cache
from .indicator import COUNTER_MAX, mix64_array

# integer state slots
SINCE, NDIFF, NDIRTY, MISMATCH, DELIVERED, VALID, CM, CK, FM, FK = range(10)
N_ISTATE = 10

# per-segment accumulators
REQ, FP, FN, SENT, FULL, DELIV, DROP, PRESENT, COST, POS_HIT, POS_MISS, NEG = range(12)
N_SEG = 12

INDICATOR, ALWAYS_ACCESS, PERFECT = 0, 1, 2


@dataclass
class CacheTrace:
    """Per-request outcome of running a key stream through a cache."""

    h1: np.ndarray        # uint32, low half of the seeded key hash
    h2: np.ndarray        # uint32, high half
    present: np.ndarray   # uint8, key resident when requested
    slots: np.ndarray     # int32, slot the key was admitted into, or -1
    capacity: int
    policy: str
    seed: int

    def __len__(self):
        return len(self.present)


def record_trace(keys: np.ndarray, capacity: int, policy: str = "lru", seed: int = 0) -> CacheTrace:
    n = len(keys)
    present = np.zeros(n, dtype=np.uint8)
    slots = np.full(n, -1, dtype=np.int32)
    slot_of: dict = {}
    freed = [-1]
    admitted = [-1]

    def sink(event, key):
        if event == "evict":
            freed[0] = slot_of.pop(key)
        else:
            s = freed[0] if freed[0] >= 0 else len(slot_of)
            freed[0] = -1
            slot_of[key] = s
            admitted[0] = s

    cache = Cache(capacity, policy, sink=sink, seed=seed)
    resident = cache.policy.__contains__
    put = cache.put
    for t, key in enumerate(keys.tolist()):
        if resident(key):
            present[t] = 1
            put(key)
        else:
            put(key)
            slots[t] = admitted[0]
    h = mix64_array(keys, seed)
    h1 = (h & np.uint64(0xFFFFFFFF)).astype(np.uint32)
    h2 = (h >> np.uint64(32)).astype(np.uint32)
    return CacheTrace(h1, h2, present, slots, capacity, policy, seed)


# --------------------------------------------------------------------------
# kernel
#
# Each filter position is one byte of ``cells``: the low nibble is the
# counter (the cache-side bit is ``counter > 0``), CLIENT holds the client's
# bit while both filters share a shape, and LISTED marks positions already on
# the dirty list.  While the shapes differ the client's filter lives in
# ``old`` and nothing is tracked, since the next delivery is a full one.

COUNT = np.uint8(0x0F)
CLIENT = np.uint8(0x10)
LISTED = np.uint8(0x20)


@nb.njit(cache=True, inline="always")
def _start(h1, h2, m):
    mu = np.uint64(m)
    a = (np.uint64(h1) * mu) >> np.uint64(32)
    b = (np.uint64(h2) * mu) >> np.uint64(32)
    if m % 2 == 0:
        b = b | np.uint64(1)
    return a, b


@nb.njit(cache=True, inline="always")
def _store(cells, p, c, dirty, ndirty, ndiff, track):
    # c is the new cell value and its cache bit just changed
    if track:
        if ((c & COUNT) != 0) != ((c & CLIENT) != 0):
            ndiff += 1
            if (c & LISTED) == 0:
                c |= LISTED
                dirty[ndirty] = p
                ndirty += 1
        else:
            ndiff -= 1
    cells[p] = c
    return ndirty, ndiff


@nb.njit(cache=True, inline="always")
def _insert(h1, h2, cells, dirty, m, k, ndirty, ndiff, track):
    mu = np.uint64(m)
    p, step = _start(h1, h2, m)
    for _ in range(k):
        c = cells[p]
        n = c & COUNT
        if n < COUNTER_MAX:
            if n == 0:
                ndirty, ndiff = _store(cells, p, c + np.uint8(1), dirty, ndirty, ndiff, track)
            else:
                cells[p] = c + np.uint8(1)
        p += step
        if p >= mu:
            p -= mu
    return ndirty, ndiff


@nb.njit(cache=True, inline="always")
def _remove(h1, h2, cells, dirty, m, k, ndirty, ndiff, track):
    mu = np.uint64(m)
    p, step = _start(h1, h2, m)
    for _ in range(k):
        c = cells[p]
        n = c & COUNT
        if n < COUNTER_MAX:
            if n == 1:
                ndirty, ndiff = _store(cells, p, c - np.uint8(1), dirty, ndirty, ndiff, track)
            else:
                cells[p] = c - np.uint8(1)
        p += step
        if p >= mu:
            p -= mu
    return ndirty, ndiff


@nb.njit(cache=True, inline="always")
def _query(h1, h2, cells, old, mismatch, m, k):
    mu = np.uint64(m)
    p, step = _start(h1, h2, m)
    if mismatch:
        for _ in range(k):
            if old[p] == 0:
                return False
            p += step
            if p >= mu:
                p -= mu
    else:
        for _ in range(k):
            if (cells[p] & CLIENT) == 0:
                return False
            p += step
            if p >= mu:
                p -= mu
    return True


@nb.njit(cache=True)
def attempt(cells, old, dirty, ist, seg, budget, police, full_only, index_bits):
    """One scheduled advertisement: choose its encoding, police it, deliver it."""
    m = ist[FM]
    natural_full = False
    if ist[MISMATCH]:
        cost = m
    elif full_only:
        cost = m
        natural_full = True
    else:
        cost = ist[NDIFF] * index_bits
        if cost >= m:
            cost = m
            natural_full = True
    seg[SENT] += cost
    if natural_full:
        seg[FULL] = 1.0
    if police and ist[DELIVERED] + cost > budget:
        seg[DROP] += 1.0
        return False
    ist[DELIVERED] += cost
    seg[DELIV] += cost
    if ist[MISMATCH]:
        for p in range(m):
            c = cells[p] & COUNT
            cells[p] = c | CLIENT if c != 0 else c
        ist[MISMATCH] = 0
        ist[VALID] = 1
        ist[CM] = m
        ist[CK] = ist[FK]
    else:
        for j in range(ist[NDIRTY]):
            p = dirty[j]
            c = cells[p] & COUNT
            cells[p] = c | CLIENT if c != 0 else c
    ist[NDIRTY] = 0
    ist[NDIFF] = 0
    return True


@nb.njit(cache=True)
def rebuild(slot_h1, slot_h2, occupied, cells, old, dirty, ist, m, k):
    """Fresh filter of shape (m, k) from the resident slots; the client keeps its own."""
    if ist[VALID] and ist[MISMATCH] == 0:
        for p in range(ist[CM]):
            old[p] = 1 if cells[p] & CLIENT else 0
    ist[FM] = m
    ist[FK] = k
    cells[:m] = 0
    ist[MISMATCH] = 1
    ist[NDIFF] = 0
    ist[NDIRTY] = 0
    for s in range(len(occupied)):
        if occupied[s]:
            _insert(slot_h1[s], slot_h2[s], cells, dirty, m, k, 0, 0, False)


@nb.njit(cache=True)
def run_requests(start, end, h1s, h2s, present, slots, slot_h1, slot_h2, occupied,
                 cells, old, dirty, ist, seg,
                 interval, budget, police, full_only, index_bits, miss_penalty, mode,
                 log_indication):
    log = len(log_indication) > 0
    indicating = mode == INDICATOR
    m = ist[FM]
    k = ist[FK]
    since = ist[SINCE]
    ndiff = ist[NDIFF]
    ndirty = ist[NDIRTY]
    n_present = 0
    n_pos_hit = 0
    n_pos_miss = 0
    n_neg = 0
    n_fn = 0
    for t in range(start, end):
        h1 = h1s[t]
        h2 = h2s[t]
        pres = present[t] != 0
        if mode == ALWAYS_ACCESS:
            pos = True
        elif mode == PERFECT:
            pos = pres
        elif ist[VALID] == 0:
            pos = False
        else:
            pos = _query(h1, h2, cells, old, ist[MISMATCH] != 0, ist[CM], ist[CK])
        if pos:
            if pres:
                n_pos_hit += 1
            else:
                n_pos_miss += 1
        else:
            n_neg += 1
            if pres:
                n_fn += 1
        if pres:
            n_present += 1
        if log:
            log_indication[t] = 1 if pos else 0
        if not indicating:
            continue
        s = slots[t]
        if s >= 0:
            track = ist[MISMATCH] == 0
            if occupied[s]:
                ndirty, ndiff = _remove(slot_h1[s], slot_h2[s], cells, dirty, m, k, ndirty, ndiff, track)
            ndirty, ndiff = _insert(h1, h2, cells, dirty, m, k, ndirty, ndiff, track)
            slot_h1[s] = h1
            slot_h2[s] = h2
            occupied[s] = 1
        since += 1
        if since >= interval:
            since = 0
            ist[NDIFF] = ndiff
            ist[NDIRTY] = ndirty
            attempt(cells, old, dirty, ist, seg, budget, police, full_only, index_bits)
            ndiff = ist[NDIFF]
            ndirty = ist[NDIRTY]
    ist[SINCE] = since
    ist[NDIFF] = ndiff
    ist[NDIRTY] = ndirty
    cost = n_pos_hit * 1.0 + n_pos_miss * (1.0 + miss_penalty) + n_neg * miss_penalty
    seg[COST] += cost
    seg[REQ] += end - start
    seg[PRESENT] += n_present
    seg[POS_HIT] += n_pos_hit
    seg[POS_MISS] += n_pos_miss
    seg[NEG] += n_neg
    if indicating:
        seg[FP] += n_pos_miss
        seg[FN] += n_fn


class Replay:
    """Mutable kernel state for one run over a trace."""

    def __init__(self, trace: CacheTrace, max_bits: int):
        cap = max(int(max_bits), 1)
        self.trace = trace
        self.cells = np.zeros(cap, dtype=np.uint8)
        self.old = np.zeros(cap, dtype=np.uint8)
        self.dirty = np.zeros(cap, dtype=np.int64)
        self.slot_h1 = np.zeros(trace.capacity, dtype=np.uint32)
        self.slot_h2 = np.zeros(trace.capacity, dtype=np.uint32)
        self.occupied = np.zeros(trace.capacity, dtype=np.uint8)
        self.ist = np.zeros(N_ISTATE, dtype=np.int64)

    def set_shape(self, m: int, k: int) -> None:
        if m > len(self.cells):
            raise ValueError(f"filter of {m} bits exceeds the allocated {len(self.cells)}")
        rebuild(self.slot_h1, self.slot_h2, self.occupied, self.cells, self.old, self.dirty, self.ist, m, k)

    def attempt(self, seg, budget, police, full_only, index_bits) -> bool:
        return attempt(self.cells, self.old, self.dirty, self.ist, seg, budget, police, full_only, index_bits)

    def run(self, start, end, seg, interval, budget, police, full_only, index_bits, miss_penalty, mode, log):
        tr = self.trace
        run_requests(start, end, tr.h1, tr.h2, tr.present, tr.slots, self.slot_h1, self.slot_h2, self.occupied,
                     self.cells, self.old, self.dirty, self.ist, seg,
                     interval, budget, police, full_only, index_bits, miss_penalty, mode, log)

    def client_bits(self) -> np.ndarray:
        m = self.ist[CM]
        if self.ist[MISMATCH]:
            return self.old[:m].copy()
        return ((self.cells[:m] & CLIENT) != 0).astype(np.uint8)

    def cache_bits(self) -> np.ndarray:
        return ((self.cells[: self.ist[FM]] & COUNT) != 0).astype(np.uint8)
