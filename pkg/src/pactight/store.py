"""Metadata store: per-element random tags in a linear-probing hash table.

Keys are element addresses.  An allocation of ``array_size`` elements gets
one fresh tag and one entry per element, so a lookup is an exact-key probe
and never a range search.  Entries are 8 + 4 + 4 bytes with 64-bit tags and
4 + 4 + 4 bytes with 32-bit tags.

Deletion uses backward-shift, so there are no tombstones and probe
sequences stay short after churn.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

_GOLDEN = 0x9E3779B97F4A7C15
_EMPTY = -1


class StoreError(Exception):
    pass


class OverlapError(StoreError):
    def __init__(self, address: int):
        super().__init__(f"element {address:#x} already has live metadata")
        self.address = address


class AbsentError(StoreError):
    def __init__(self, address: int):
        super().__init__(f"no live metadata at {address:#x}")
        self.address = address


class CapacityError(StoreError):
    pass


@dataclass(frozen=True)
class MetadataEntry:
    tag: int
    type_size: int
    array_size: int
    base: int = 0


@dataclass
class StoreStats:
    live_entries: int
    bytes_per_entry: int
    total_bytes: int
    probe_length_histogram: Dict[int, int] = field(default_factory=dict)
    capacity: int = 0
    tag_width: int = 64

    def to_dict(self) -> dict:
        return {
            "live_entries": self.live_entries,
            "bytes_per_entry": self.bytes_per_entry,
            "total_bytes": self.total_bytes,
            "capacity": self.capacity,
            "tag_width": self.tag_width,
            "load_factor": self.live_entries / self.capacity if self.capacity else 0.0,
            "probe_length_histogram": {str(k): v for k, v in sorted(self.probe_length_histogram.items())},
        }


ENTRY_BYTES = {64: 16, 32: 12}


class MetadataStore:
    def __init__(self, tag_width: int = 64, capacity: int = 64, max_load: float = 0.7,
                 max_capacity: Optional[int] = None):
        if tag_width not in ENTRY_BYTES:
            raise ValueError("tag_width must be 64 or 32")
        if not 0 < max_load < 1:
            raise ValueError("max_load must be in (0, 1)")
        cap = 8
        while cap < capacity:
            cap <<= 1
        self.tag_width = tag_width
        self.max_load = max_load
        self.max_capacity = max_capacity
        self._alloc(cap)
        self._live = 0

    def _alloc(self, cap: int):
        self._cap = cap
        self._shift = 64 - (cap.bit_length() - 1)
        self._keys: List[int] = [_EMPTY] * cap
        self._vals: List[Optional[MetadataEntry]] = [None] * cap

    def __len__(self):
        return self._live

    @property
    def capacity(self) -> int:
        return self._cap

    def _home(self, key: int) -> int:
        return ((key * _GOLDEN) & 0xFFFFFFFFFFFFFFFF) >> self._shift

    def _find(self, key: int) -> int:
        mask = self._cap - 1
        i = self._home(key)
        keys = self._keys
        while True:
            k = keys[i]
            if k == key or k == _EMPTY:
                return i
            i = (i + 1) & mask

    def _ensure_room(self, extra: int):
        need = self._live + extra
        if need <= self._cap * self.max_load:
            return
        cap = self._cap
        while need > cap * self.max_load:
            cap <<= 1
        if self.max_capacity is not None and cap > self.max_capacity:
            raise CapacityError(
                f"{need} entries exceed load bound {self.max_load} at max capacity {self.max_capacity}")
        old = [(k, v) for k, v in zip(self._keys, self._vals) if k != _EMPTY]
        self._alloc(cap)
        for k, v in old:
            i = self._find(k)
            self._keys[i] = k
            self._vals[i] = v

    def fresh_tag(self, rng) -> int:
        while True:
            tag = rng.getrandbits(self.tag_width)
            if tag:
                return tag

    def add(self, base: int, type_size: int, array_size: int, rng, tag: Optional[int] = None) -> int:
        """Insert one entry per element of a new allocation; returns the shared tag."""
        if type_size < 1 or array_size < 1:
            raise ValueError("type_size and array_size must be >= 1")
        addrs = [base + i * type_size for i in range(array_size)]
        for a in addrs:
            if self._keys[self._find(a)] == a:
                raise OverlapError(a)
        self._ensure_room(array_size)
        if tag is None:
            tag = self.fresh_tag(rng)
        elif tag == 0 or tag >> self.tag_width:
            raise ValueError("tag must be non-zero and fit the tag width")
        entry = MetadataEntry(tag, type_size, array_size, base)
        for a in addrs:
            i = self._find(a)
            self._keys[i] = a
            self._vals[i] = entry
        self._live += array_size
        return tag

    def lookup(self, elem: int) -> Optional[MetadataEntry]:
        i = self._find(elem)
        if self._keys[i] == elem:
            return self._vals[i]
        return None

    def _delete_slot(self, i: int):
        mask = self._cap - 1
        keys, vals = self._keys, self._vals
        keys[i] = _EMPTY
        vals[i] = None
        j = i
        while True:
            j = (j + 1) & mask
            k = keys[j]
            if k == _EMPTY:
                return
            home = self._home(k)
            # k stays put iff its home lies cyclically in (i, j]
            if i <= j:
                stays = i < home <= j
            else:
                stays = home > i or home <= j
            if not stays:
                keys[i], vals[i] = k, vals[j]
                keys[j], vals[j] = _EMPTY, None
                i = j

    def remove(self, base: int) -> int:
        """Drop every element entry of the allocation starting at ``base``."""
        entry = self.lookup(base)
        if entry is None or entry.base != base:
            # nothing live, or an interior element rather than an allocation
            raise AbsentError(base)
        n = 0
        for idx in range(entry.array_size):
            a = base + idx * entry.type_size
            i = self._find(a)
            if self._keys[i] == a:
                self._delete_slot(i)
                n += 1
        self._live -= n
        return n

    def items(self) -> Iterator[Tuple[int, MetadataEntry]]:
        for k, v in zip(self._keys, self._vals):
            if k != _EMPTY:
                yield k, v

    def slot(self, index: int) -> Tuple[int, int]:
        """Raw (key, tag) of one table slot; zeros when empty."""
        k = self._keys[index % self._cap]
        if k == _EMPTY:
            return 0, 0
        return k, self._vals[index % self._cap].tag

    def slot_of(self, elem: int) -> Optional[int]:
        i = self._find(elem)
        return i if self._keys[i] == elem else None

    def probe_length(self, key: int) -> int:
        mask = self._cap - 1
        i = self._home(key)
        n = 1
        while self._keys[i] != key:
            if self._keys[i] == _EMPTY:
                return n
            i = (i + 1) & mask
            n += 1
        return n

    def stats(self) -> StoreStats:
        per = ENTRY_BYTES[self.tag_width]
        hist = Counter(self.probe_length(k) for k, _ in self.items())
        return StoreStats(self._live, per, self._live * per, dict(hist), self._cap, self.tag_width)
