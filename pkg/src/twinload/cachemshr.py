"""Single-level write-back cache with an MSHR file bounding outstanding misses."""

from __future__ import annotations

import enum
import heapq
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple


class CacheError(Exception):
    pass


class NoPendingMiss(CacheError):
    pass


class AccessResult(enum.Enum):
    HIT = "hit"
    MISS_ISSUED = "miss-issued"
    MISS_MERGED = "miss-merged"  # secondary miss to a line already in flight
    MISS_BLOCKED = "miss-blocked"


class Eviction(NamedTuple):
    addr: int
    dirty: bool
    data: bytes


@dataclass
class CacheLine:
    data: bytes
    dirty: bool = False


class MshrFile:
    """Outstanding-miss registers with time-weighted occupancy tracking.

    Misses that find the file full wait in ``blocked`` and are granted
    registers lowest priority value first (the engine passes program
    order, so older loads go first), FIFO among equals. ``tracked``
    classifies addresses into a second occupancy counter (used for
    extended-memory traffic).
    """

    def __init__(self, capacity: int, tracked: Optional[Callable[[int], bool]] = None):
        if capacity < 1:
            raise ValueError("MSHR capacity must be at least 1")
        self.capacity = capacity
        self.in_flight: Dict[int, float] = {}
        self.blocked: List[Tuple[int, int, int]] = []  # heap of (priority, seq, addr)
        self._bseq = 0
        self._tracked = tracked
        self._n_tracked = 0
        self._last = 0
        self._area = 0
        self._area_tracked = 0
        self.peak = 0

    def __len__(self):
        return len(self.in_flight)

    def block(self, addr: int, priority: int = 0) -> None:
        heapq.heappush(self.blocked, (priority, self._bseq, addr))
        self._bseq += 1

    def unblock(self) -> int:
        return heapq.heappop(self.blocked)[2]

    @property
    def full(self) -> bool:
        return len(self.in_flight) >= self.capacity

    def _advance(self, now: int) -> None:
        if now > self._last:
            dt = now - self._last
            self._area += len(self.in_flight) * dt
            self._area_tracked += self._n_tracked * dt
            self._last = now

    def allocate(self, addr: int, now: int) -> None:
        if self.full:
            raise CacheError("MSHR file full")
        self._advance(now)
        self.in_flight[addr] = now
        if self._tracked is not None and self._tracked(addr):
            self._n_tracked += 1
        self.peak = max(self.peak, len(self.in_flight))

    def release(self, addr: int, now: int) -> None:
        if addr not in self.in_flight:
            raise NoPendingMiss(f"no outstanding miss for {addr:#x}")
        self._advance(now)
        del self.in_flight[addr]
        if self._tracked is not None and self._tracked(addr):
            self._n_tracked -= 1

    def average(self, until: int, tracked: bool = False) -> float:
        """Time-weighted mean occupancy over [0, until]."""
        if until <= 0:
            return 0.0
        self._advance(until)
        return (self._area_tracked if tracked else self._area) / until


class CacheModel:
    def __init__(self, sets: int = 512, ways: int = 8, line_size: int = 64, mshr_capacity: int = 10,
                 tracked: Optional[Callable[[int], bool]] = None):
        if sets < 1 or ways < 1:
            raise ValueError("cache needs at least one set and one way")
        self.sets = sets
        self.ways = ways
        self.line_size = line_size
        self._sets: List["OrderedDict[int, CacheLine]"] = [OrderedDict() for _ in range(sets)]
        self.mshr = MshrFile(mshr_capacity, tracked)
        self.hits = 0
        self.misses = 0

    def _set(self, addr: int) -> "OrderedDict[int, CacheLine]":
        return self._sets[(addr // self.line_size) % self.sets]

    def _check(self, addr: int) -> None:
        if addr % self.line_size:
            raise CacheError(f"address {addr:#x} not line aligned")

    def contains(self, addr: int) -> bool:
        return addr in self._set(addr)

    def peek(self, addr: int) -> Optional[CacheLine]:
        return self._set(addr).get(addr)

    def access(self, addr: int, kind: str = "load", now: int = 0,
               priority: int = 0) -> Tuple[AccessResult, Optional[bytes]]:
        """Look up ``addr``; on a miss, claim an MSHR or queue behind a full file.

        ``kind`` is ``"load"`` or ``"rfo"``; both allocate on miss.
        """
        self._check(addr)
        s = self._set(addr)
        line = s.get(addr)
        if line is not None:
            s.move_to_end(addr)
            self.hits += 1
            return AccessResult.HIT, line.data
        mshr = self.mshr
        if addr in mshr.in_flight:
            return AccessResult.MISS_MERGED, None
        self.misses += 1
        if mshr.full:
            mshr.block(addr, priority)
            return AccessResult.MISS_BLOCKED, None
        mshr.allocate(addr, now)
        return AccessResult.MISS_ISSUED, None

    def retry_blocked(self, now: int) -> Tuple[List[int], List[int]]:
        """Issue queued misses while MSHRs are free.

        Returns (issued, resident): addresses that now own an MSHR, and
        queued addresses that meanwhile became cached.
        """
        issued, resident = [], []
        mshr = self.mshr
        while mshr.blocked and not mshr.full:
            addr = mshr.unblock()
            if addr in mshr.in_flight:
                continue
            if self.contains(addr):
                resident.append(addr)
                continue
            mshr.allocate(addr, now)
            issued.append(addr)
        return issued, resident

    def fill(self, addr: int, line: bytes, now: int = 0) -> Optional[Eviction]:
        self.mshr.release(addr, now)
        return self.install(addr, line)

    def install(self, addr: int, line: bytes, dirty: bool = False) -> Optional[Eviction]:
        s = self._set(addr)
        victim = None
        if addr in s:
            s[addr].data = line
            s.move_to_end(addr)
            return None
        if len(s) >= self.ways:
            vaddr, vline = s.popitem(last=False)
            victim = Eviction(vaddr, vline.dirty, vline.data)
        s[addr] = CacheLine(line, dirty)
        return victim

    def invalidate(self, addr: int) -> Optional[Eviction]:
        """Drop ``addr``; the returned eviction carries data to write back when dirty."""
        line = self._set(addr).pop(addr, None)
        if line is None:
            return None
        return Eviction(addr, line.dirty, line.data)

    def write(self, addr: int, offset: int, data: bytes) -> None:
        line = self._set(addr).get(addr)
        if line is None:
            raise CacheError(f"store to uncached line {addr:#x}")
        buf = bytearray(line.data)
        buf[offset: offset + len(data)] = data
        line.data = bytes(buf)
        line.dirty = True

    def cas(self, addr: int, offset: int, expected: bytes, new: bytes) -> bool:
        """Atomic compare-and-swap of one operand inside a cached line."""
        line = self._set(addr).get(addr)
        if line is None:
            raise CacheError(f"CAS on uncached line {addr:#x}")
        if line.data[offset: offset + len(expected)] != expected:
            return False
        self.write(addr, offset, new)
        return True

    def dirty_lines(self) -> List[Tuple[int, bytes]]:
        return [(a, l.data) for s in self._sets for a, l in s.items() if l.dirty]

    def outstanding_reads(self, until: int, tracked: bool = False) -> float:
        return self.mshr.average(until, tracked)
