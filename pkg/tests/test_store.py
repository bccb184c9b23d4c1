import random

import pytest
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from pactight.store import AbsentError, CapacityError, MetadataStore, OverlapError


class FixedRng:
    """Returns queued values from getrandbits, then defers to a Random."""

    def __init__(self, values, seed=0):
        self.values = list(values)
        self.rng = random.Random(seed)

    def getrandbits(self, n):
        return self.values.pop(0) if self.values else self.rng.getrandbits(n)


def test_array_elements_share_one_tag():
    s = MetadataStore()
    tag = s.add(0x1000, 8, 50, random.Random(0))
    for i in range(50):
        e = s.lookup(0x1000 + 8 * i)
        assert e.tag == tag and e.type_size == 8 and e.array_size == 50
    assert s.lookup(0x1000 + 8 * 50) is None
    assert s.lookup(0x1004) is None
    assert len(s) == 50


def test_zero_tag_is_redrawn():
    s = MetadataStore()
    assert s.add(0x10, 8, 1, FixedRng([0, 0, 5])) == 5


def test_overlap_and_absent():
    s = MetadataStore()
    s.add(0x100, 16, 4, random.Random(1))
    with pytest.raises(OverlapError):
        s.add(0x110, 16, 1, random.Random(1))
    assert s.remove(0x100) == 4
    with pytest.raises(AbsentError):
        s.remove(0x100)


def test_interior_remove_rejected_and_neighbours_kept():
    s = MetadataStore()
    s.add(0x1000, 8, 4, random.Random(2))
    s.add(0x1020, 8, 4, random.Random(3))
    with pytest.raises(AbsentError):
        s.remove(0x1008)
    assert len(s) == 8
    s.remove(0x1000)
    assert all(s.lookup(0x1020 + 8 * i) for i in range(4))


def test_forced_tag_validation():
    s = MetadataStore(tag_width=32)
    with pytest.raises(ValueError):
        s.add(0x10, 8, 1, None, tag=0)
    with pytest.raises(ValueError):
        s.add(0x10, 8, 1, None, tag=1 << 32)
    assert s.add(0x10, 8, 1, None, tag=0xDEAD) == 0xDEAD


def test_growth_keeps_load_bound():
    s = MetadataStore(capacity=8)
    rng = random.Random(4)
    for i in range(1000):
        s.add(0x10000 + 16 * i, 16, 1, rng)
        assert len(s) <= 0.7 * s.capacity
    assert all(s.lookup(0x10000 + 16 * i) for i in range(1000))


def test_capacity_error_when_bounded():
    s = MetadataStore(capacity=8, max_capacity=16)
    rng = random.Random(5)
    with pytest.raises(CapacityError):
        for i in range(100):
            s.add(16 * i, 16, 1, rng)


@pytest.mark.parametrize("width,per", [(64, 16), (32, 12)])
def test_stats_bytes_per_entry(width, per):
    s = MetadataStore(tag_width=width)
    rng = random.Random(6)
    for n in range(1, 200):
        s.add(0x8000 + 64 * n, 8, 1 + n % 3, rng)
        st_ = s.stats()
        assert st_.bytes_per_entry == per
        assert st_.total_bytes == per * st_.live_entries == per * len(s)
    d = s.stats().to_dict()
    assert set(d) >= {"live_entries", "bytes_per_entry", "total_bytes", "probe_length_histogram"}
    assert sum(d["probe_length_histogram"].values()) == len(s)


def test_slot_view():
    s = MetadataStore()
    tag = s.add(0x40, 8, 1, random.Random(7))
    i = s.slot_of(0x40)
    assert s.slot(i) == (0x40, tag)
    assert s.slot_of(0x48) is None


def test_churn_against_dict_model():
    s = MetadataStore(capacity=8)
    model = {}
    rng = random.Random(8)
    for _ in range(20000):
        base = 16 * rng.randrange(512)
        if base in model:
            assert s.remove(base) == 1
            del model[base]
        else:
            model[base] = s.add(base, 16, 1, rng)
        if rng.random() < 0.05:
            for b, t in model.items():
                assert s.lookup(b).tag == t
    assert len(s) == len(model)
    assert sorted(k for k, _ in s.items()) == sorted(model)


class StoreMachine(RuleBasedStateMachine):
    def __init__(self):
        super().__init__()
        self.store = MetadataStore(capacity=8)
        self.model = {}
        self.rng = random.Random(0)

    @rule(slot=st.integers(0, 63), n=st.integers(1, 4))
    def add(self, slot, n):
        base = 64 * slot
        if any(base + 16 * i in self.model for i in range(n)):
            with pytest.raises(OverlapError):
                self.store.add(base, 16, n, self.rng)
            return
        tag = self.store.add(base, 16, n, self.rng)
        for i in range(n):
            self.model[base + 16 * i] = (tag, base)

    @precondition(lambda self: self.model)
    @rule(data=st.data())
    def remove(self, data):
        bases = sorted({b for _, b in self.model.values()})
        base = data.draw(st.sampled_from(bases))
        self.store.remove(base)
        self.model = {k: v for k, v in self.model.items() if v[1] != base}

    @invariant()
    def agrees(self):
        assert len(self.store) == len(self.model)
        for k, (tag, _) in self.model.items():
            assert self.store.lookup(k).tag == tag


TestStoreMachine = StoreMachine.TestCase
TestStoreMachine.settings = settings(max_examples=60, stateful_step_count=40, deadline=None)
