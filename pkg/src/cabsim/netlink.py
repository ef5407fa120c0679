"""Segment-scoped policing between the cache and its clients."""

from __future__ import annotations

import math
from typing import Optional

from .indicator import Advertisement, BitFilter, apply, query


class TokenBucket:
    """``budget_per_segment`` bits per segment, no carry-over, atomic sends."""

    def __init__(self, budget_per_segment: float):
        self.budget_per_segment = budget_per_segment
        self.delivered_bits = 0

    def try_consume(self, bits: int) -> bool:
        if self.delivered_bits + bits > self.budget_per_segment:
            return False
        self.delivered_bits += bits
        return True

    def reset(self) -> None:
        self.delivered_bits = 0


class ClientView:
    """The indicator as the client has reconstructed it from delivered updates."""

    def __init__(self):
        self.filter: Optional[BitFilter] = None

    def query(self, key: int) -> bool:
        return self.filter is not None and query(self.filter, key)

    def receive(self, adv: Advertisement) -> None:
        if adv.is_full:
            self.filter = adv.snapshot.copy()
        else:
            self.filter = apply(self.filter, adv)

    def fingerprint(self) -> Optional[int]:
        return None if self.filter is None else self.filter.fingerprint()


class Link:
    """Forwards advertisements to the client while the segment's tokens last.

    With ``police=False`` every advertisement is delivered (used for
    unconstrained measurements); drops then never happen.
    """

    def __init__(self, budget_per_segment: float, police: bool = True):
        self.bucket = TokenBucket(budget_per_segment if police else math.inf)
        self.client = ClientView()
        self.dropped = 0

    @property
    def delivered_bits(self) -> int:
        return self.bucket.delivered_bits

    def try_send(self, adv: Advertisement) -> bool:
        if not self.bucket.try_consume(adv.bit_cost):
            self.dropped += 1
            return False
        self.client.receive(adv)
        return True

    def segment_reset(self) -> None:
        self.bucket.reset()
        self.dropped = 0
