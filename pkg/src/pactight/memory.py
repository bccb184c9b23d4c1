"""Sparse simulated memory.

Storage is a dict of aligned 8-byte cells.  Programs touch whole cells; the
attacker may read or write any byte range.  Segments carry permissions so
that code and vtables stay read-only and the metadata window stays hidden.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

CODE_BASE = 0x0000_0040_0000
FUNC_STRIDE = 0x1000
RODATA_BASE = 0x0000_0800_0000
GLOBAL_BASE = 0x0000_1000_0000
HEAP_BASE = 0x0000_2000_0000
STORE_WINDOW = 0x0000_5000_0000_0000
STACK_TOP = 0x0000_7FFF_0000_0000
SEGMENT_SIZE = 0x0100_0000

MASK64 = (1 << 64) - 1


class MemoryFault(Exception):
    def __init__(self, address: int, reason: str):
        super().__init__(f"{reason} at {address:#018x}")
        self.address = address
        self.reason = reason


@dataclass(frozen=True)
class Segment:
    name: str
    start: int
    end: int
    writable: bool


SEGMENTS = (
    Segment("code", CODE_BASE, CODE_BASE + SEGMENT_SIZE, False),
    Segment("rodata", RODATA_BASE, RODATA_BASE + SEGMENT_SIZE, False),
    Segment("globals", GLOBAL_BASE, GLOBAL_BASE + SEGMENT_SIZE, True),
    Segment("heap", HEAP_BASE, HEAP_BASE + 0x1000_0000, True),
    Segment("stack", STACK_TOP - 0x1000_0000, STACK_TOP, True),
)


def segment_of(address: int) -> Optional[Segment]:
    for seg in SEGMENTS:
        if seg.start <= address < seg.end:
            return seg
    return None


class Memory:
    def __init__(self):
        self.cells: Dict[int, int] = {}

    def check(self, address: int, write: bool):
        seg = segment_of(address)
        if seg is None:
            raise MemoryFault(address, "unmapped access")
        if write and not seg.writable:
            raise MemoryFault(address, "write to read-only segment")

    def read(self, address: int) -> int:
        if address & 7:
            raise MemoryFault(address, "misaligned access")
        self.check(address, False)
        return self.cells.get(address, 0)

    def write(self, address: int, value: int, privileged: bool = False):
        if address & 7:
            raise MemoryFault(address, "misaligned access")
        if not privileged:
            self.check(address, True)
        self.cells[address] = value & MASK64

    def read_bytes(self, address: int, n: int) -> bytes:
        out = bytearray()
        for a in range(address, address + n):
            cell = self.cells.get(a & ~7, 0)
            out.append((cell >> (8 * (a & 7))) & 0xFF)
        return bytes(out)

    def write_bytes(self, address: int, data: bytes):
        for off, b in enumerate(data):
            a = address + off
            base = a & ~7
            shift = 8 * (a & 7)
            cell = self.cells.get(base, 0)
            self.cells[base] = (cell & ~(0xFF << shift) & MASK64) | (b << shift)


class BumpHeap:
    """First-fit free-list allocator with LIFO reuse per size class."""

    def __init__(self, memory: Memory, base: int = HEAP_BASE):
        self.memory = memory
        self.next = base
        self.live: Dict[int, int] = {}
        self.free_lists: Dict[int, List[int]] = {}
        self.freed: Dict[int, int] = {}

    @staticmethod
    def _round(size: int) -> int:
        return max(16, (size + 15) & ~15)

    def malloc(self, size: int) -> int:
        size = self._round(size)
        bucket = self.free_lists.get(size)
        if bucket:
            addr = bucket.pop()
            del self.freed[addr]
        else:
            addr = self.next
            self.next += size
        self.live[addr] = size
        for a in range(addr, addr + size, 8):
            self.memory.cells.pop(a, None)
        return addr

    def free(self, addr: int) -> bool:
        """Returns False on a double or invalid free (allocator corruption)."""
        size = self.live.pop(addr, None)
        if size is None:
            return False
        self.free_lists.setdefault(size, []).append(addr)
        self.freed[addr] = size
        return True
