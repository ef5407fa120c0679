import random

from cabsim.indicator import Advertisement, BitFilter
from cabsim.netlink import Link, TokenBucket


def full(m):
    return Advertisement.full(BitFilter(m, 1))


def test_thirteen_full_filters_fit_a_segment():
    link = Link(3_276_800)
    sent = [link.try_send(full(245760)) for _ in range(20)]
    assert sent == [True] * 13 + [False] * 7
    assert link.delivered_bits == 13 * 245760
    assert link.dropped == 7


def test_exhausted_bucket_drops_nonzero_but_passes_empty_delta():
    b = TokenBucket(100)
    assert b.try_consume(100)
    assert not b.try_consume(1)
    link = Link(100)
    assert link.try_send(full(100))
    assert not link.try_send(Advertisement.delta(100, [3]))
    assert link.try_send(Advertisement.delta(100, []))


def test_reset_restores_full_budget_without_carry_over():
    link = Link(1000)
    assert not link.try_send(full(1001))
    link.segment_reset()
    link.segment_reset()
    assert link.delivered_bits == 0
    assert link.try_send(full(1000))
    assert not link.try_send(full(1))
    link.segment_reset()
    assert link.try_send(full(1000))
    assert not link.try_send(full(1))


def test_drop_leaves_client_untouched():
    link = Link(150)
    x = BitFilter.from_bits([0, 1, 0, 1] * 25)
    assert link.try_send(Advertisement.full(x))
    before = link.client.fingerprint()
    assert not link.try_send(Advertisement.delta(100, list(range(10))))
    assert link.client.fingerprint() == before
    assert link.client.filter == x


def test_client_applies_deltas():
    link = Link(10**6)
    assert link.client.fingerprint() is None
    assert not link.client.query(5)
    link.try_send(full(64))
    link.try_send(Advertisement.delta(64, [0, 5, 9]))
    assert link.client.filter.bits.nonzero()[0].tolist() == [0, 5, 9]


def test_unpoliced_link_delivers_everything():
    link = Link(10, police=False)
    assert all(link.try_send(full(1000)) for _ in range(5))


def test_random_sends_never_exceed_budget():
    rng = random.Random(3)
    for trial in range(200):
        budget = rng.randrange(1, 5000)
        link = Link(budget)
        for _ in range(50):
            if rng.random() < 0.1:
                link.segment_reset()
            m = rng.randrange(1, 700)
            link.try_send(full(m))
            assert link.delivered_bits <= budget
