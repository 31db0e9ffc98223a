"""Discrete-event simulation of a core, a cache, and two DDRx channels.

The local channel drives plain DIMMs. The extension channel either drives
DIMMs directly (Ideal, IncreasedTRL) or goes through MEC1 (twin-load).
Time is in integer picoseconds throughout.
"""

from __future__ import annotations

import gc
import hashlib
import heapq
import random
from bisect import bisect_left, insort
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .addrmap import (GEOMETRIES, KB, LAYOUTS, AddressSpaceLayout, DramGeometry, ExtendedMemoryManager,
                      Region, canonical, classify, decompose)
from .cachemshr import AccessResult, CacheModel
from .frontend import (LOADERS, Cas, Delay, Fence, Flush, Inject, Issue, Mechanism, MechanismKind, Probe, SafeRead,
                       SafeWrite, StoreOutcome, TwinContext, TwinLoadOutcome, Wait, load_plain, store_plain,
                       store_tl, twin_load)
from .mec import FakeLine, Mec1, build_topology, min_lvc_size
from .memory import FAKE_BYTE, BackingStore
from .metrics import SimStats
from .timing import (BankTimingState, CommandKind, DramCommand, TimingParams, access_plan, ns,
                     preset, validate_stream)
from .trace import Op, TraceError, TraceRecord, validate


class ConfigError(Exception):
    pass


class SimulationInvariantError(Exception):
    pass


@dataclass
class SimConfig:
    mechanism: Mechanism = field(default_factory=lambda: Mechanism(MechanismKind.IDEAL))
    timing: TimingParams = field(default_factory=lambda: preset("ddr3-1600"))
    layout: AddressSpaceLayout = LAYOUTS["desk-scale"]
    geometry: DramGeometry = GEOMETRIES["desk-scale"]
    topology: str = "four-layer"
    node_delay: int = 0
    cache_sets: int = 512
    cache_ways: int = 8
    mshr_capacity: int = 10
    hit_latency: int = 0
    lvc_size: int = 16
    seed: int = 0
    eviction_rate: float = 0.0
    cpi_gap: int = 310  # ps per non-memory instruction
    window: int = 64
    onchip_latency: int = ns(20)  # core to controller, one way
    exception_latency: int = ns(1000)
    scheduler: str = "fcfs"
    twin_delay: Optional[int] = None  # explicit issue gap between twins; None derives it
    twin_spacing: str = "auto"  # auto | issue | return
    retry_limit: int = 2
    cas_limit: int = 2
    cas_width: int = 8
    block_size: int = 64 * KB
    fake_byte: int = FAKE_BYTE
    collision_rate: float = 0.0
    record_commands: bool = True
    strict: bool = False

    def check(self) -> None:
        try:
            self.geometry.check_layout(self.layout)
            build_topology(self.topology, self.geometry.logical_dimms, self.node_delay)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        positive = ("cache_sets", "cache_ways", "mshr_capacity", "lvc_size", "window", "retry_limit", "cas_limit")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("eviction_rate", "collision_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.scheduler not in ("fcfs", "hit-first"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        for name in ("cpi_gap", "onchip_latency", "exception_latency", "hit_latency", "node_delay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.twin_spacing not in ("auto", "issue", "return"):
            raise ConfigError(f"unknown twin_spacing {self.twin_spacing!r}")
        if self.twin_delay is not None and self.twin_delay < 0:
            raise ConfigError("twin_delay must be non-negative")
        if self.cas_width < 1 or self.geometry.line_size % self.cas_width:
            raise ConfigError("cas_width must divide the line size")


# --- event queue ------------------------------------------------------------

class EventQueue:
    """Min-heap of (time, insertion sequence, callback, args)."""

    def __init__(self):
        self._heap: List[tuple] = []
        self._seq = 0
        self.now = 0

    def push(self, time: int, fn: Callable, *args) -> None:
        if time < self.now:
            raise SimulationInvariantError(f"event scheduled in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, self._seq, fn, args))
        self._seq += 1

    def pop(self) -> Tuple[int, Callable, tuple]:
        time, _, fn, args = heapq.heappop(self._heap)
        self.now = time
        return time, fn, args

    def __len__(self):
        return len(self._heap)


# --- memory channels --------------------------------------------------------

class _Request:
    __slots__ = ("write", "addr", "bank", "row", "column", "arrival")

    def __init__(self, write, addr, bank, row, column, arrival):
        self.write, self.addr, self.bank, self.row, self.column, self.arrival = write, addr, bank, row, column, arrival


class Channel:
    """Per-bank request queues, bank timing state, and the command log.

    Column commands are spaced at least tCCD apart across the whole
    channel since they share the data bus. ``extra`` stretches read
    latency and keeps the bank busy for that long after each RD.
    """

    def __init__(self, name: str, events: EventQueue, params: TimingParams, geometry: DramGeometry,
                 deliver: Callable[[int, bytes], None], read_line: Callable[[int], bytes],
                 mec1: Optional[Mec1] = None, extra: int = 0, onchip: int = 0, scheduler: str = "fcfs",
                 record: bool = True):
        self.name = name
        self.events = events
        self.params = params
        self.deliver = deliver
        self.read_line = read_line
        self.mec1 = mec1
        self.extra = extra
        self.onchip = onchip
        self.hit_first = scheduler == "hit-first"
        n = geometry.banks
        self.banks = [BankTimingState() for _ in range(n)]
        self.queues = [deque() for _ in range(n)]
        self.busy = [False] * n
        self._slots: List[int] = []
        self.log: Optional[List[DramCommand]] = [] if record else None
        self.reads = self.writes = self.row_hits = self.row_misses = 0
        self.latencies: Optional[List[Tuple[int, int]]] = None  # set to a list to record (arrival, data time)

    def submit(self, req: _Request) -> None:
        """Queue a request; ``req.arrival`` may lie in the future (on-chip transit)."""
        self.queues[req.bank].append(req)
        if not self.busy[req.bank]:
            self.busy[req.bank] = True
            self._pick(req.bank, self.events.now)

    def _choose(self, bank: int) -> _Request:
        q = self.queues[bank]
        if self.hit_first:
            row = self.banks[bank].open_row
            now = self.events.now
            for i, r in enumerate(q):
                if r.arrival > now:
                    break
                if r.row == row:
                    del q[i]
                    return r
        return q.popleft()

    def _reserve(self, t: int, now: int) -> int:
        slots, ccd = self._slots, self.params.ccd
        k = bisect_left(slots, now - ccd + 1)
        if k:
            del slots[:k]
        i = bisect_left(slots, t - ccd + 1)
        while i < len(slots) and slots[i] < t + ccd:
            t = slots[i] + ccd
            i += 1
        insort(slots, t)
        return t

    def _pick(self, bank: int, now: int) -> None:
        if not self.queues[bank]:
            self.busy[bank] = False
            return
        req = self._choose(bank)
        params = self.params
        state = self.banks[bank]
        start = req.arrival if req.arrival > now else now
        cmds, _ = access_plan(state, (req.row, req.column, bank), start, params, write=req.write)
        col = cmds[-1]
        t = self._reserve(col.time, now)
        if t != col.time:
            cmds[-1] = col = col.at(t)
        # the plan already honours every per-bank rule; the log is audited afterwards
        row, act, rd, wr, pre = state.open_row, state.last_act, state.last_read, state.last_write, state.last_pre
        mec1 = self.mec1
        for cmd in cmds[:-1]:
            if cmd.kind is CommandKind.ACT:
                row, act = cmd.row, cmd.time
                if mec1 is not None:
                    mec1.on_act(bank, cmd.row, cmd.time)
            else:
                row, pre = None, cmd.time
                if mec1 is not None:
                    mec1.on_pre(bank, cmd.time)
        if req.write:
            self.writes += 1
            wr = t
        else:
            self.reads += 1
            if len(cmds) == 1:
                self.row_hits += 1
            else:
                self.row_misses += 1
            # a stretched tRL keeps the bank busy until the data leaves
            rd = t + self.extra
        state = BankTimingState(row, act, rd, wr, pre)
        self.banks[bank] = state
        if self.log is not None:
            self.log.extend(cmds)
        self.events.push(t, self._column, req, t)

    def _column(self, req: _Request, t: int) -> None:
        if not req.write:
            if self.mec1 is not None:
                resp = self.mec1.on_read(req.bank, req.column, t)
                line, data_time = resp.line, resp.data_time
            else:
                line, data_time = self.read_line(req.addr), t + self.params.tRL + self.extra
            if self.latencies is not None:
                self.latencies.append((req.arrival, data_time))
            self.events.push(data_time + self.onchip, self.deliver, req.addr, line)
        self._pick(req.bank, t)

    def validate(self):
        if self.log is None:
            return None
        cmds = sorted(self.log, key=lambda c: c.time)
        return validate_stream(cmds, self.params, channel_ccd=True)


# --- core -------------------------------------------------------------------

class Ticket:
    """One cache access issued by an operation."""
    __slots__ = ("addr", "op", "done", "value", "hit", "dram", "time", "seq", "waiters")

    def __init__(self, addr: int, op: "_Op"):
        self.addr = addr
        self.op = op
        self.done = False
        self.value = None
        self.hit = False
        self.dram = False
        self.time = None
        self.seq = 0
        self.waiters: List["_Op"] = []


class _CasWait:
    __slots__ = ("action", "ticket")

    def __init__(self, action, ticket):
        self.action, self.ticket = action, ticket


class _Op:
    __slots__ = ("index", "gen", "record", "pending", "waiting", "finished", "quiesced", "result",
                 "start", "done_at", "end", "expected")

    def __init__(self, index: int, record: Optional[TraceRecord] = None):
        self.index = index
        self.gen = None
        self.record = record
        self.pending = 0
        self.waiting = None
        self.finished = False
        self.quiesced = False
        self.result = None
        self.start = None
        self.done_at = None  # result available to dependants
        self.end = None  # all of its accesses settled
        self.expected = None


def _first_done(tickets) -> Optional[Ticket]:
    """Earliest completed ticket; completion sequence numbers follow time."""
    best = None
    for t in tickets:
        if t.done and (best is None or t.seq < best.seq):
            best = t
    return best


def store_word(seed: int, record_id: int, width: int = 8) -> bytes:
    return hashlib.blake2b(f"{seed}:{record_id}".encode(), digest_size=width).digest()


def line_of(addr: int, line_size: int) -> int:
    return addr - addr % line_size


class Simulator:
    def __init__(self, config: SimConfig, trace: Sequence[TraceRecord] = ()):
        config.check()
        self.config = c = config
        self.trace = list(trace)
        self.params = c.timing
        self.layout = c.layout
        self.geometry = g = c.geometry
        self.line = g.line_size
        self.events = EventQueue()
        self.fake = FakeLine.of(self.line, c.fake_byte)
        self.memory = BackingStore(c.seed, self.line, self._collision_lines(), c.fake_byte)
        self.cache = CacheModel(c.cache_sets, c.cache_ways, self.line, c.mshr_capacity, tracked=self._is_ext)
        self.manager = ExtendedMemoryManager(c.layout, c.block_size)
        self.manager.ensure(c.layout.extended.limit - 1)
        self.hierarchy = build_topology(c.topology, g.logical_dimms, c.node_delay)
        mech = c.mechanism
        self.mec1 = None
        if mech.twin:
            self.mec1 = Mec1(self.hierarchy, g, c.timing, self.memory, c.lvc_size, self.fake,
                             c.exception_latency, schedule=self.events.push)
        read_line = self._dram_read
        self.local = Channel("local", self.events, c.timing, g, self._data_return, read_line,
                             onchip=c.onchip_latency, scheduler=c.scheduler, record=c.record_commands)
        extra = mech.extra if mech.kind is MechanismKind.INC_TRL else 0
        self.extension = Channel("extension", self.events, c.timing, g, self._data_return, read_line,
                                 mec1=self.mec1, extra=extra, onchip=c.onchip_latency, scheduler=c.scheduler,
                                 record=c.record_commands)
        wait_first, delay = self.twin_spacing() if mech.twin else (False, 0)
        self.ctx = TwinContext(self.fake, self.manager.shadow_address, c.retry_limit, c.cas_limit,
                               delay, c.cas_width, wait_first)
        self.rng = random.Random(c.seed)
        self._ops: List[_Op] = []
        self._waiters: Dict[int, List[Ticket]] = {}
        self._routes: Dict[int, tuple] = {}
        self._ready: deque = deque()
        self._fences: List[_Op] = []
        self._barrier = 0
        self._retire = 0
        self._next = 0
        self._last_start = 0
        self._wakeup = None
        self._core_dirty = False
        self._seq = 0
        self._deps: List[Tuple[Tuple[int, ...], Tuple[int, ...]]] = []
        self.counters = dict(retries=0, exceptions=0, cas_failures=0, safe_stores=0, injected=0,
                             twin_loads=0, paired=0, value_mismatches=0, clflushes=0)
        self._prepare()

    # --- setup ------------------------------------------------------------

    def round_trip_extra(self) -> int:
        """Worst extra round-trip delay between MEC1 and an extended DIMM."""
        ext = self.layout.extended
        g = self.geometry
        step = 1 << (g.flag_bit - g.dimm_bits)  # address span of one DIMM
        dimms = {decompose(a - a % g.line_size, g).dimm for a in range(ext.base, ext.limit, step)}
        dimms.add(decompose(ext.limit - g.line_size, g).dimm)
        return max(2 * self.hierarchy.one_way_delay(d, self.params) for d in dimms)

    def twin_spacing(self) -> Tuple[bool, int]:
        """How far apart the two loads of a pair are issued: (wait for the first, extra delay).

        The forced row miss spaces the RDs by tRTP + tRP + tRCD, which
        covers round trips up to that long, so ``issue`` sends the twins
        back to back there. Past it a fixed issue gap is only safe if it
        covers the whole round trip. ``return`` holds the second load
        until the first returns, which spaces the RDs by at least
        tRL + 2 x on-chip latency whatever the bank queues do (the shadow
        row may already be open), and delays it by any remainder. ``auto`` uses ``issue`` while
        the row miss suffices and ``return`` beyond. TL-LF always waits
        (fence). An explicit ``twin_delay`` is a plain issue gap.
        """
        c = self.config
        if c.twin_delay is not None:
            return False, c.twin_delay
        p = self.params
        need = self.round_trip_extra()
        waited = p.tRL + 2 * c.onchip_latency
        if c.mechanism.kind is MechanismKind.TL_LF:
            return False, max(0, need - waited)
        mode = c.twin_spacing
        if mode == "auto":
            mode = "issue" if need <= p.row_miss_delay else "return"
        if mode == "issue":
            return False, 0 if need <= p.row_miss_delay else need
        return True, max(0, need - waited)

    def _collision_lines(self) -> List[int]:
        rate = self.config.collision_rate
        if not rate:
            return []
        rng = random.Random(self.config.seed ^ 0x5A5A)
        lines = sorted({line_of(r.vaddr, self.config.geometry.line_size) for r in self.trace
                        if classify(r.vaddr, self.config.layout) is Region.EXTENDED})
        return [a for a in lines if rng.random() < rate]

    def _is_ext(self, addr: int) -> bool:
        return addr >= self.layout.extended.base

    def _prepare(self) -> None:
        try:
            validate(self.trace, self.layout)
        except TraceError:
            raise
        index = {r.id: i for i, r in enumerate(self.trace)}
        last_store: Dict[int, int] = {}
        loads_since: Dict[int, List[int]] = {}
        golden: Dict[int, bytes] = {}
        width = self.config.cas_width
        for i, r in enumerate(self.trace):
            op = _Op(i, r)
            self._ops.append(op)
            ln = line_of(r.vaddr, self.line)
            prior = []
            if r.op is Op.STORE:
                prior.extend(loads_since.pop(ln, ()))
                if ln in last_store:
                    prior.append(last_store[ln])
                last_store[ln] = i
                data = golden.get(ln) or self.memory.read(ln)
                off = (r.vaddr % self.line) & ~(width - 1)
                buf = bytearray(data)
                buf[off: off + width] = store_word(self.config.seed, r.id, width)
                golden[ln] = bytes(buf)
            else:
                if ln in last_store:
                    prior.append(last_store[ln])
                loads_since.setdefault(ln, []).append(i)
                op.expected = golden.get(ln) or self.memory.read(ln)
            self._deps.append((tuple(index[d] for d in r.depends_on), tuple(prior)))
        self.golden = golden

    def _dram_read(self, addr: int) -> bytes:
        return self.memory.read(canonical(addr, self.layout))

    # --- operation construction ------------------------------------------

    def _make(self, rec: TraceRecord):
        kind = self.config.mechanism.kind
        ln = line_of(rec.vaddr, self.line)
        twin = self.mec1 is not None and classify(ln, self.layout) is Region.EXTENDED
        if rec.op is Op.LOAD:
            if not twin:
                return load_plain(self.ctx, ln)
            # without interrupts the injection point after the load is a no-op
            return twin_load(self.ctx, kind, ln) if self.config.eviction_rate else LOADERS[kind](self.ctx, ln)
        width = self.config.cas_width
        off = (rec.vaddr % self.line) & ~(width - 1)
        data = store_word(self.config.seed, rec.id, width)
        if twin:
            return store_tl(self.ctx, kind, ln, off, data)
        return store_plain(self.ctx, ln, off, data)

    # --- driver -----------------------------------------------------------

    def _step(self, op: _Op, value: Any = None, redo: Any = None) -> None:
        gen = op.gen
        cache = self.cache
        while True:
            if redo is not None:
                action, redo = redo, None
            else:
                try:
                    action = gen.send(value)
                except StopIteration as stop:
                    self._finish(op, stop.value)
                    return
            cls = type(action)
            value = None
            if cls is Issue:
                value = self._issue(op, action.addr, action.kind)
            elif cls is Wait:
                ts = action.tickets
                if action.any:
                    value = _first_done(ts)
                    if value is not None:
                        continue
                elif all(t.done for t in ts):
                    value = tuple(t.value for t in ts)
                    continue
                op.waiting = action
                for t in ts:
                    if not t.done:
                        t.waiters.append(op)
                return
            elif cls is Fence:
                if op.pending == 0 and self._retire == op.index:
                    continue
                op.waiting = action
                self._fences.append(op)
                self._barrier += 1
                return
            elif cls is Cas:
                if cache.contains(action.addr):
                    value = self._cas(action)
                    continue
                t = self._issue(op, action.addr, "rfo")
                if t.done:
                    redo = action
                    continue
                op.waiting = _CasWait(action, t)
                t.waiters.append(op)
                return
            elif cls is Flush:
                self._evict(action.addr)
                self.counters["clflushes"] += 1
            elif cls is Probe:
                value = cache.contains(action.addr)
            elif cls is Delay:
                op.waiting = action
                self.events.push(self.events.now + action.ps, self._resume, op, None)
                return
            elif cls is Inject:
                self._inject(action.addrs)
            elif cls is SafeRead:
                line, done = self.mec1.exception_read(action.addr, self.events.now)
                self.counters["exceptions"] += 1
                op.waiting = action
                self.events.push(done, self._resume, op, line)
                return
            elif cls is SafeWrite:
                done = self.mec1.exception_write(action.addr, action.offset, action.data, self.events.now)
                self.counters["exceptions"] += 1
                op.waiting = action
                self.events.push(done, self._resume, op, None)
                return
            else:
                raise SimulationInvariantError(f"unknown action {action!r}")

    def _resume(self, op: _Op, value: Any) -> None:
        op.waiting = None
        self._ready.append((op, value, None))

    def _wake(self, op: _Op) -> None:
        w = op.waiting
        if type(w) is Wait:
            ts = w.tickets
            if w.any:
                value = _first_done(ts)
                if value is None:
                    return
            elif all(t.done for t in ts):
                value = tuple(t.value for t in ts)
            else:
                return
            op.waiting = None
            self._ready.append((op, value, None))
        elif type(w) is _CasWait and w.ticket.done:
            op.waiting = None
            self._ready.append((op, None, w.action))

    def _cas(self, action: Cas) -> bool:
        if action.expected is None:
            self.cache.write(action.addr, action.offset, action.new)
            return True
        return self.cache.cas(action.addr, action.offset, action.expected, action.new)

    def _issue(self, op: _Op, addr: int, kind: str = "load") -> Ticket:
        t = Ticket(addr, op)
        op.pending += 1
        pending = self._waiters.get(addr)
        if pending is not None:
            pending.append(t)
            return t
        result, line = self.cache.access(addr, kind, self.events.now, op.index)
        if result is AccessResult.HIT:
            t.hit = True
            if self.config.hit_latency:
                self.events.push(self.events.now + self.config.hit_latency, self._complete, t, line)
            else:
                self._complete(t, line)
            return t
        if result is AccessResult.MISS_MERGED:
            raise SimulationInvariantError(f"in-flight miss {addr:#x} has no waiters")
        t.dram = True
        self._waiters[addr] = [t]
        if result is AccessResult.MISS_ISSUED:
            self._send(addr, write=False)
        return t

    def _complete(self, t: Ticket, line: bytes) -> None:
        t.done = True
        t.value = line
        t.time = self.events.now
        self._seq += 1
        t.seq = self._seq
        op = t.op
        op.pending -= 1
        waiters, t.waiters = t.waiters, []
        for w in waiters:
            self._wake(w)
        if op.pending == 0:
            if op.finished:
                self._quiesce(op)
            elif op.waiting is not None and type(op.waiting) is Fence:
                self._core_dirty = True

    def _finish(self, op: _Op, result: Any) -> None:
        op.finished = True
        op.done_at = self.events.now
        op.result = result
        self._account(op, result)
        self._core_dirty = True
        if op.pending == 0:
            self._quiesce(op)

    def _quiesce(self, op: _Op) -> None:
        op.quiesced = True
        op.end = self.events.now
        ops = self._ops
        while self._retire < len(ops) and ops[self._retire].quiesced:
            self._retire += 1
        self._core_dirty = True

    def _account(self, op: _Op, result: Any) -> None:
        c = self.counters
        load = result.load if isinstance(result, StoreOutcome) else result
        if isinstance(result, StoreOutcome):
            c["cas_failures"] += result.cas_failures
            c["safe_stores"] += result.safe_path
        if isinstance(load, TwinLoadOutcome):
            c["retries"] += load.retries
            if load.attempts:
                c["twin_loads"] += 1
                c["paired"] += load.attempts[0].paired
        if op.expected is not None and isinstance(result, TwinLoadOutcome) and result.value != op.expected:
            c["value_mismatches"] += 1

    def _check_fences(self) -> None:
        if not self._fences:
            return
        keep = []
        for op in self._fences:
            if op.pending == 0 and self._retire == op.index:
                self._barrier -= 1
                op.waiting = None
                self._ready.append((op, None, None))
            else:
                keep.append(op)
        self._fences = keep

    def _core_wakeup(self) -> None:
        self._wakeup = None
        self._core_dirty = True

    def _try_start(self) -> None:
        trace = self.trace
        ops = self._ops
        now = self.events.now
        while self._next < len(trace):
            if self._barrier:
                return
            i = self._next
            if i - self._retire >= self.config.window:
                return
            explicit, implicit = self._deps[i]
            if any(not ops[d].finished for d in explicit) or any(not ops[d].quiesced for d in implicit):
                return
            rec = trace[i]
            due = self._last_start + rec.gap * self.config.cpi_gap
            if due > now:
                if self._wakeup != due:
                    self._wakeup = due
                    self.events.push(due, self._core_wakeup)
                return
            op = ops[i]
            op.gen = self._make(rec)
            op.start = now
            self._last_start = now
            self._next += 1
            self._ready.append((op, None, None))
            self._settle_ready()

    def _settle_ready(self) -> None:
        ready = self._ready
        while ready:
            op, value, redo = ready.popleft()
            self._step(op, value, redo)

    def _settle(self) -> None:
        while True:
            if self._ready:
                self._settle_ready()
                continue
            if self._core_dirty:
                self._core_dirty = False
                self._check_fences()
                self._try_start()
                continue
            return

    # --- memory side ------------------------------------------------------

    def _send(self, addr: int, write: bool) -> None:
        route = self._routes.get(addr)
        if route is None:
            chan = self.local if classify(addr, self.layout) is Region.LOCAL else self.extension
            row, bank, column, _ = decompose(addr, self.geometry)
            route = self._routes[addr] = (chan, bank, row, column)
        chan, bank, row, column = route
        # every request sees the same on-chip latency, so queueing now keeps arrival order
        chan.submit(_Request(write, addr, bank, row, column, self.events.now + self.config.onchip_latency))

    def _data_return(self, addr: int, line: bytes) -> None:
        cache = self.cache
        ev = cache.fill(addr, line, self.events.now)
        if ev is not None and ev.dirty:
            self._writeback(ev.addr, ev.data)
        for t in self._waiters.pop(addr, ()):
            self._complete(t, line)
        if not cache.mshr.blocked:
            return
        issued, resident = cache.retry_blocked(self.events.now)
        for a in issued:
            self._send(a, write=False)
        for a in resident:
            data = cache.peek(a).data
            for t in self._waiters.pop(a, ()):
                t.dram = False
                t.hit = True
                self._complete(t, data)

    def _writeback(self, addr: int, data: bytes) -> None:
        canon = canonical(addr, self.layout)
        self.memory.write(canon, data)
        if self.mec1 is not None and classify(canon, self.layout) is Region.EXTENDED:
            self.mec1.on_write(canon, self.events.now)
        self._send(addr, write=True)

    def _evict(self, addr: int) -> None:
        ev = self.cache.invalidate(addr)
        if ev is not None and ev.dirty:
            self._writeback(ev.addr, ev.data)

    def _inject(self, addrs: Sequence[int]) -> None:
        rate = self.config.eviction_rate
        if not rate:
            return
        if self.rng.random() >= rate:
            return
        present = [a for a in addrs if self.cache.contains(a)]
        if present:
            self._evict(self.rng.choice(present))
            self.counters["injected"] += 1

    # --- entry points -----------------------------------------------------

    def _loop(self) -> None:
        events = self.events
        self._core_dirty = True
        # the loop allocates heavily but frees almost everything by refcount;
        # generational collection passes only cost time here
        enabled = gc.isenabled()
        gc.disable()
        try:
            self._settle()
            heap, pop = events._heap, heapq.heappop
            while heap:
                events.now, _, fn, args = pop(heap)
                fn(*args)
                if self._ready or self._core_dirty:
                    self._settle()
        finally:
            if enabled:
                gc.enable()

    def execute(self, gen) -> Any:
        """Run a single operation to completion on the current machine state."""
        op = _Op(len(self._ops))
        self._ops.append(op)
        op.gen = gen
        op.start = self.events.now
        self._ready.append((op, None, None))
        self._loop()
        if not op.quiesced:
            raise SimulationInvariantError("operation did not complete")
        return op.result

    def run(self) -> SimStats:
        self._loop()
        stuck = [op.index for op in self._ops if not op.quiesced]
        if stuck:
            raise SimulationInvariantError(f"{len(stuck)} operations never completed (first: {stuck[0]})")
        return self.finish()

    def drain(self) -> None:
        """Write every dirty cache line back to memory (no timing)."""
        for addr, data in self.cache.dirty_lines():
            self.memory.write(canonical(addr, self.layout), data)

    def memory_mismatches(self) -> int:
        return sum(1 for ln, data in self.golden.items() if self.memory.read(ln) != data)

    def violations(self) -> int:
        n = 0
        for chan in (self.local, self.extension):
            report = chan.validate()
            if report is not None:
                n += len(report.violations)
        return n

    def finish(self) -> SimStats:
        self.drain()
        c = self.counters
        elapsed = max((op.end for op in self._ops if op.end is not None), default=0)
        reads = self.local.reads + self.extension.reads
        writes = self.local.writes + self.extension.writes
        mec = self.mec1.stats if self.mec1 is not None else None
        stats = SimStats(
            mechanism=str(self.config.mechanism),
            completed_ops=sum(1 for op in self._ops if op.quiesced and op.record is not None),
            elapsed_ns=elapsed / 1000,
            read_bandwidth=reads * self.line * 1e12 / elapsed if elapsed else 0.0,
            avg_outstanding_reads=self.cache.outstanding_reads(elapsed),
            avg_outstanding_ext_reads=self.cache.outstanding_reads(elapsed, tracked=True),
            dram_reads=reads,
            dram_writes=writes,
            row_hits=self.local.row_hits + self.extension.row_hits,
            row_misses=self.local.row_misses + self.extension.row_misses,
            llc_misses=self.cache.misses,
            twin_loads=c["twin_loads"],
            twin_pairing_rate=c["paired"] / c["twin_loads"] if c["twin_loads"] else 0.0,
            retries=c["retries"],
            exceptions=c["exceptions"],
            lvc_premature_evictions=mec.premature_evictions if mec else 0,
            lvc_evictions=mec.lvc_evictions if mec else 0,
            cas_failures=c["cas_failures"],
            safe_stores=c["safe_stores"],
            injected_evictions=c["injected"],
            bus_utilization=(reads + writes) * self.params.burst / (2 * elapsed) if elapsed else 0.0,
            value_mismatches=c["value_mismatches"],
            memory_mismatches=self.memory_mismatches(),
            timing_violations=self.violations(),
        )
        if self.config.strict and (stats.value_mismatches or stats.memory_mismatches or stats.timing_violations):
            raise SimulationInvariantError(
                f"run failed its own checks: {stats.value_mismatches} value mismatches, "
                f"{stats.memory_mismatches} memory mismatches, {stats.timing_violations} timing violations")
        return stats


def run(config: SimConfig, trace: Sequence[TraceRecord]) -> SimStats:
    return Simulator(config, trace).run()


def run_sync(config: SimConfig, make: Callable[[Simulator], Any], sim: Optional[Simulator] = None):
    """Execute one operation built by ``make(sim)``; returns (result, simulator)."""
    sim = sim or Simulator(config)
    return sim.execute(make(sim)), sim


# --- latency sweeps ---------------------------------------------------------

def point_config(config: SimConfig, mechanism: Mechanism, latency: int) -> SimConfig:
    """Configuration that adds ``latency`` ps of round-trip delay to extended reads.

    Twin-load spends it as propagation through one MEC hop; IncreasedTRL
    as extra tRL on the extended DIMMs. Ideal ignores it. Twin-load runs
    get an LVC at least as large as the sizing rule asks for and, unless
    configured otherwise, issue each second load after the first returns
    so every point of a sweep schedules twins the same way.
    """
    if mechanism.twin:
        timing = config.timing.with_(tPD=latency // 2)
        spacing = "return" if config.twin_spacing == "auto" else config.twin_spacing
        return replace(config, mechanism=mechanism, topology="flat", timing=timing, node_delay=0,
                       lvc_size=max(config.lvc_size, min_lvc_size(timing)), twin_spacing=spacing)
    if mechanism.kind is MechanismKind.INC_TRL:
        return replace(config, mechanism=Mechanism(MechanismKind.INC_TRL, latency))
    return replace(config, mechanism=mechanism)


def _run_point(args) -> SimStats:
    config, trace = args
    return run(config, trace)


@dataclass
class SweepRow:
    latency_ns: float
    mechanism: str
    normalized: float
    stats: SimStats


def sweep(config: SimConfig, trace: Sequence[TraceRecord], latencies: Sequence[int],
          mechanisms: Sequence[Mechanism], jobs: int = 1) -> List[SweepRow]:
    """One run per (latency, mechanism), normalised to Ideal at zero latency."""
    if not latencies:
        raise ConfigError("sweep needs at least one latency value")
    if not mechanisms:
        raise ConfigError("sweep needs at least one mechanism")
    points = [(lat, m) for lat in latencies for m in mechanisms]
    # one MEC design serves the whole sweep, sized for its largest latency
    widest = config.timing.with_(tPD=max(latencies) // 2)
    config = replace(config, lvc_size=max(config.lvc_size, min_lvc_size(widest)))
    base_cfg = point_config(config, Mechanism(MechanismKind.IDEAL), 0)
    jobs_in = [(base_cfg, trace)] + [(point_config(config, m, lat), trace) for lat, m in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, jobs_in))
    else:
        results = [_run_point(j) for j in jobs_in]
    base = results[0].elapsed_ns
    rows = []
    for (lat, m), st in zip(points, results[1:]):
        norm = base / st.elapsed_ns if st.elapsed_ns else 1.0
        rows.append(SweepRow(lat / 1000, m.kind.value, norm, st))
    return rows
