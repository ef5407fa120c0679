"""Bounded cache with pluggable eviction and admit/evict notifications.

The virtual clock is the number of ``put`` calls issued so far; every
simulated request issues exactly one put, so ``now`` doubles as the request
index.  Touches are idempotent within one clock tick, which keeps the cache
state independent of whether the client also issued a ``get``.
"""

from __future__ import annotations

import random
from collections import OrderedDict
from typing import Callable, Dict, List, Optional, Protocol

from .indicator import mix64

SAMPLE_SIZE = 64

EventSink = Callable[[str, int], None]


class Policy(Protocol):
    def __contains__(self, key: int) -> bool: ...
    def __len__(self) -> int: ...
    def touch(self, key: int, now: int) -> None: ...
    def admit(self, key: int, now: int) -> None: ...
    def victim(self, now: int) -> int: ...
    def discard(self, key: int) -> None: ...
    def keys(self) -> List[int]: ...


class LRUPolicy:
    def __init__(self):
        self._order: OrderedDict[int, None] = OrderedDict()

    def __contains__(self, key):
        return key in self._order

    def __len__(self):
        return len(self._order)

    def touch(self, key, now):
        self._order.move_to_end(key)

    def admit(self, key, now):
        self._order[key] = None

    def victim(self, now):
        return next(iter(self._order))

    def discard(self, key):
        del self._order[key]

    def keys(self):
        return list(self._order)


def hyperbolic_victim(items, now: int, seed: int = 0) -> int:
    """Argmin of count / (now - inserted) over ``(key, count, inserted)``.

    Ties go to the older insertion, then to the smaller key hash.  Priorities
    are compared by cross-multiplication so there is no rounding.
    """
    best = None
    for key, count, inserted in items:
        age = max(now - inserted, 1)
        if best is None:
            best = (key, count, age, inserted)
            continue
        _, bcount, bage, binserted = best
        lhs, rhs = count * bage, bcount * age
        if lhs < rhs or (lhs == rhs and (inserted, mix64(key, seed)) < (binserted, mix64(best[0], seed))):
            best = (key, count, age, inserted)
    if best is None:
        raise LookupError("victim requested from an empty cache")
    return best[0]


class HyperbolicPolicy:
    """Sampled hyperbolic caching: evict the lowest access-rate item."""

    def __init__(self, seed: int = 0, sample_size: int = SAMPLE_SIZE):
        self.seed = seed
        self.sample_size = sample_size
        self._rng = random.Random(seed)
        self._keys: List[int] = []
        self._slot: Dict[int, int] = {}
        # key -> [count, inserted, last_touch]
        self._meta: Dict[int, list] = {}

    def __contains__(self, key):
        return key in self._meta

    def __len__(self):
        return len(self._keys)

    def touch(self, key, now):
        meta = self._meta[key]
        if meta[2] != now:
            meta[0] += 1
            meta[2] = now

    def admit(self, key, now):
        self._slot[key] = len(self._keys)
        self._keys.append(key)
        self._meta[key] = [1, now, now]

    def sample(self) -> List[int]:
        n = len(self._keys)
        if n <= self.sample_size:
            return list(self._keys)
        return [self._keys[i] for i in self._rng.sample(range(n), self.sample_size)]

    def victim(self, now):
        meta = self._meta
        return hyperbolic_victim(((key, meta[key][0], meta[key][1]) for key in self.sample()), now, self.seed)

    def discard(self, key):
        i = self._slot.pop(key)
        last = self._keys.pop()
        if i < len(self._keys):
            self._keys[i] = last
            self._slot[last] = i
        del self._meta[key]

    def keys(self):
        return list(self._keys)


POLICIES = {
    "lru": lambda seed: LRUPolicy(),
    "hyperbolic": lambda seed: HyperbolicPolicy(seed),
}


def make_policy(name: str, seed: int = 0) -> Policy:
    try:
        return POLICIES[name.lower()](seed)
    except KeyError:
        raise ValueError(f"unknown cache policy {name!r}; choose from {sorted(POLICIES)}") from None


class Cache:
    """Holds at most ``capacity`` keys; reports every admission and eviction."""

    def __init__(self, capacity: int, policy: Policy | str = "lru", sink: Optional[EventSink] = None, seed: int = 0):
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self.policy = make_policy(policy, seed) if isinstance(policy, str) else policy
        self.sink = sink
        self.now = 0

    def __contains__(self, key: int) -> bool:
        return key in self.policy

    def __len__(self) -> int:
        return len(self.policy)

    def contents(self) -> set:
        return set(self.policy.keys())

    def get(self, key: int) -> bool:
        """Look up ``key``; True on hit.  Misses do not admit."""
        if key in self.policy:
            self.policy.touch(key, self.now)
            return True
        return False

    def put(self, key: int) -> None:
        """Admit ``key`` (evicting if full), or refresh it if resident."""
        policy = self.policy
        if key in policy:
            policy.touch(key, self.now)
        else:
            if len(policy) >= self.capacity:
                victim = policy.victim(self.now)
                policy.discard(victim)
                self._emit("evict", victim)
            policy.admit(key, self.now)
            self._emit("admit", key)
        self.now += 1

    def _emit(self, event: str, key: int) -> None:
        if self.sink is not None:
            self.sink(event, key)
