"""Bloom-filter indicators: a 4-bit counting filter kept by the cache, the plain
bit filter it compresses to, and full/delta advertisements between the two."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

COUNTER_MAX = 15
MASK64 = (1 << 64) - 1


class InvalidArgument(ValueError):
    pass


# --------------------------------------------------------------------------
# hashing

def mix64(key: int, seed: int) -> int:
    """Seeded splitmix64 finalizer on a 64-bit key (pure Python)."""
    z = ((key ^ seed) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix64_array(keys: np.ndarray, seed: int) -> np.ndarray:
    """Vectorized :func:`mix64`; returns uint64."""
    with np.errstate(over="ignore"):
        z = (np.asarray(keys, dtype=np.uint64) ^ np.uint64(seed & MASK64)) + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def split_hash(h: int, m: int) -> tuple[int, int]:
    """Start and step in [0, m) from the two 32-bit halves of h.

    Each half is scaled into range by a multiply-shift rather than a modulo.
    The step is made odd for even m so that it is coprime with powers of two.
    """
    h1 = ((h & 0xFFFFFFFF) * m) >> 32
    h2 = ((h >> 32) * m) >> 32
    if m % 2 == 0:
        h2 |= 1
    return h1, h2


def positions(key: int, m: int, k: int, seed: int) -> List[int]:
    """Double-hashing positions (h1 + i*h2) mod m for i in [0, k)."""
    h1, h2 = split_hash(mix64(key, seed), m)
    return [(h1 + i * h2) % m for i in range(k)]


def optimal_k(m: int, n: int) -> int:
    return max(1, round((m / n) * math.log(2)))


def index_bits(m: int) -> int:
    """Bits needed to address one position of an m-bit filter."""
    return max(1, math.ceil(math.log2(m))) if m > 1 else 1


# --------------------------------------------------------------------------
# filters

class CountingFilter:
    """Counting Bloom filter with saturating, sticky 4-bit counters."""

    def __init__(self, m: int, k: int, seed: int = 0):
        if m < 1 or k < 1:
            raise InvalidArgument(f"m and k must be positive (m={m}, k={k})")
        self.m = m
        self.k = k
        self.seed = seed & MASK64
        self.counters = np.zeros(m, dtype=np.uint8)

    def positions(self, key: int) -> List[int]:
        return positions(key, self.m, self.k, self.seed)

    def insert(self, key: int) -> None:
        c = self.counters
        for p in self.positions(key):
            if c[p] < COUNTER_MAX:
                c[p] += 1

    def remove(self, key: int) -> None:
        c = self.counters
        for p in self.positions(key):
            v = c[p]
            assert v > 0, f"remove of a key that was never inserted (position {p})"
            if v < COUNTER_MAX:
                c[p] = v - 1

    def __contains__(self, key: int) -> bool:
        c = self.counters
        return all(c[p] > 0 for p in self.positions(key))


def new_filter(m: int, n: int, seed: int = 0) -> CountingFilter:
    """Counting filter of m counters sized for n elements (FP-optimal k)."""
    if m < 1 or n < 1:
        raise InvalidArgument(f"m and n must be positive (m={m}, n={n})")
    return CountingFilter(m, optimal_k(m, n), seed)


class BitFilter:
    """Plain Bloom filter, the form advertised to clients."""

    def __init__(self, m: int, k: int, seed: int = 0, bits=None):
        if m < 1 or k < 1:
            raise InvalidArgument(f"m and k must be positive (m={m}, k={k})")
        self.m = m
        self.k = k
        self.seed = seed & MASK64
        if bits is None:
            self.bits = np.zeros(m, dtype=np.uint8)
        else:
            self.bits = np.asarray(bits, dtype=np.uint8).copy()
            if self.bits.shape != (m,):
                raise InvalidArgument(f"bit array has shape {self.bits.shape}, expected ({m},)")

    @classmethod
    def from_bits(cls, bits: Sequence[int], k: int = 1, seed: int = 0) -> "BitFilter":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(len(bits), k, seed, bits)

    def copy(self) -> "BitFilter":
        return BitFilter(self.m, self.k, self.seed, self.bits)

    def same_shape(self, other: "BitFilter") -> bool:
        return self.m == other.m and self.k == other.k and self.seed == other.seed

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitFilter):
            return NotImplemented
        return self.same_shape(other) and bool(np.array_equal(self.bits, other.bits))

    def __contains__(self, key: int) -> bool:
        return query(self, key)

    def query_many(self, keys: np.ndarray) -> np.ndarray:
        """Vectorized membership test for an array of 64-bit keys."""
        h = mix64_array(keys, self.seed)
        m = np.uint64(self.m)
        h1 = ((h & np.uint64(0xFFFFFFFF)) * m) >> np.uint64(32)
        h2 = ((h >> np.uint64(32)) * m) >> np.uint64(32)
        if self.m % 2 == 0:
            h2 = h2 | np.uint64(1)
        out = np.ones(len(h), dtype=bool)
        for i in range(self.k):
            out &= self.bits[(h1 + np.uint64(i) * h2) % m].astype(bool)
        return out

    def fingerprint(self) -> int:
        return hash((self.m, self.k, self.seed, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"BitFilter(m={self.m}, k={self.k}, set={int(self.bits.sum())})"


def compress(f: CountingFilter) -> BitFilter:
    return BitFilter(f.m, f.k, f.seed, (f.counters > 0).astype(np.uint8))


def query(b: BitFilter, key: int) -> bool:
    bits = b.bits
    return all(bits[p] for p in positions(key, b.m, b.k, b.seed))


def diff(prev: BitFilter, cur: BitFilter) -> List[int]:
    """Sorted positions at which the two filters differ."""
    if prev.m != cur.m:
        raise InvalidArgument(f"size mismatch: {prev.m} != {cur.m}")
    return np.flatnonzero(prev.bits != cur.bits).tolist()


# --------------------------------------------------------------------------
# advertisements

FULL = "full"
DELTA = "delta"


@dataclass(frozen=True)
class Advertisement:
    kind: str
    m: int
    bit_cost: int
    snapshot: BitFilter | None = None
    flips: tuple = ()

    @classmethod
    def full(cls, snapshot: BitFilter) -> "Advertisement":
        return cls(FULL, snapshot.m, snapshot.m, snapshot=snapshot.copy())

    @classmethod
    def delta(cls, m: int, flips: Iterable[int]) -> "Advertisement":
        flips = tuple(sorted(flips))
        if any(p < 0 or p >= m for p in flips) or len(set(flips)) != len(flips):
            raise InvalidArgument("delta positions must be distinct and in [0, m)")
        return cls(DELTA, m, len(flips) * index_bits(m), flips=flips)

    @property
    def is_full(self) -> bool:
        return self.kind == FULL


def delta_is_cheaper(n_flips: int, m: int) -> bool:
    return n_flips * index_bits(m) < m


def choose_update(prev: BitFilter, cur: BitFilter) -> Advertisement:
    """Delta when it costs strictly fewer bits than the full filter."""
    if not prev.same_shape(cur):
        raise InvalidArgument("filters differ in shape; a full advertisement is required")
    flips = diff(prev, cur)
    if delta_is_cheaper(len(flips), cur.m):
        return Advertisement.delta(cur.m, flips)
    return Advertisement.full(cur)


def apply(client: BitFilter, adv: Advertisement) -> BitFilter:
    if adv.is_full:
        return adv.snapshot.copy()
    if client.m != adv.m:
        raise InvalidArgument(f"delta for m={adv.m} applied to filter of m={client.m}")
    out = client.copy()
    if adv.flips:
        idx = np.fromiter(adv.flips, dtype=np.int64, count=len(adv.flips))
        out.bits[idx] ^= 1
    return out


# --------------------------------------------------------------------------
# wire format: type bit, then either m payload bits or a 32-bit count and
# count fixed-width positions.  Only the payload enters bandwidth accounting.

def encode(adv: Advertisement) -> bytes:
    if adv.is_full:
        body = [1] + adv.snapshot.bits.tolist()
    else:
        w = index_bits(adv.m)
        body = [0] + [(len(adv.flips) >> s) & 1 for s in range(31, -1, -1)]
        for p in adv.flips:
            body.extend((p >> s) & 1 for s in range(w - 1, -1, -1))
    return np.packbits(np.asarray(body, dtype=np.uint8)).tobytes()


def decode(data: bytes, m: int, k: int = 1, seed: int = 0) -> Advertisement:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits[0] == 1:
        if len(bits) < 1 + m:
            raise InvalidArgument("truncated full advertisement")
        return Advertisement.full(BitFilter(m, k, seed, bits[1:1 + m]))
    count = int("".join(map(str, bits[1:33])), 2)
    w = index_bits(m)
    if len(bits) < 33 + count * w:
        raise InvalidArgument("truncated delta advertisement")
    weights = 1 << np.arange(w - 1, -1, -1, dtype=np.int64)
    raw = bits[33:33 + count * w].astype(np.int64).reshape(count, w)
    return Advertisement.delta(m, (raw @ weights).tolist())


def wire_bits(adv: Advertisement) -> int:
    """Length of :func:`encode` output in bits before byte padding."""
    return 1 + (adv.m if adv.is_full else 32 + adv.bit_cost)
