"""Memory Extending Chip hierarchy.

MEC1 (the top node) tracks open rows per logical bank in the Bank State
Table, turns the first load of a twin pair into a prefetch that returns
fake data, and serves the second load from the Load Value Cache. Lower
nodes only route commands by DIMM id.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

from .addrmap import DramGeometry, compose, row_dimm
from .memory import FAKE_BYTE, BackingStore, fake_line
from .timing import PS_PER_NS, TimingParams


class MecError(Exception):
    pass


class UnroutableDimm(MecError):
    pass


class ClosedBankRead(MecError):
    pass


@dataclass(frozen=True)
class FakeLine:
    pattern: bytes

    @classmethod
    def of(cls, line_size: int = 64, byte: int = FAKE_BYTE) -> "FakeLine":
        return cls(fake_line(line_size, byte))

    def matches(self, line: bytes) -> bool:
        return line == self.pattern


def is_fake(line: bytes, fake: FakeLine) -> bool:
    return line == fake.pattern


class Role(enum.Enum):
    TOP = "top"
    MIDDLE = "middle"
    LEAF = "leaf"


@dataclass
class MecNode:
    name: str
    layer: int
    role: Role
    routing_table: Dict[int, str] = field(default_factory=dict)
    children: List[str] = field(default_factory=list)
    dimms: Tuple[int, ...] = ()
    delay: int = 0  # processing time per traversal, on top of tPD


class Hierarchy:
    """A tree of MEC nodes rooted at MEC1.

    ``links`` are (parent, child) pairs; ``leaf_dimms`` maps each node that
    drives DIMMs to the DIMM ids it owns. A single-node hierarchy (MEC1
    driving DIMMs itself) has no links.
    """

    def __init__(self, links: Sequence[Tuple[str, str]], leaf_dimms: Dict[str, Sequence[int]],
                 top: str = "mec1", node_delay: int = 0):
        parents: Dict[str, str] = {}
        kids: Dict[str, List[str]] = {top: []}
        for parent, child in links:
            if child in parents or child == top:
                raise ValueError(f"node {child!r} has more than one parent")
            parents[child] = parent
            kids.setdefault(parent, []).append(child)
            kids.setdefault(child, [])
        for name in kids:
            if name != top and name not in parents:
                raise ValueError(f"node {name!r} is not connected to {top!r}")
        self.top = top
        self.nodes: Dict[str, MecNode] = {}
        depth = {top: 1}
        order = [top]
        for name in order:
            for c in kids[name]:
                depth[c] = depth[name] + 1
                order.append(c)
        if len(order) != len(kids):
            raise ValueError("topology contains a cycle")
        for name in order:
            role = Role.TOP if name == top else (Role.LEAF if not kids[name] else Role.MIDDLE)
            self.nodes[name] = MecNode(name, depth[name], role, children=list(kids[name]),
                                       dimms=tuple(leaf_dimms.get(name, ())), delay=node_delay)
        owner: Dict[int, str] = {}
        for name, dimms in leaf_dimms.items():
            if name not in self.nodes:
                raise ValueError(f"DIMMs assigned to unknown node {name!r}")
            if self.nodes[name].children:
                raise ValueError(f"node {name!r} has children and cannot own DIMMs")
            for d in dimms:
                if d in owner:
                    raise ValueError(f"DIMM {d} owned by both {owner[d]!r} and {name!r}")
                owner[d] = name
        self._paths: Dict[int, Tuple[str, ...]] = {}
        for d, name in owner.items():
            path = [name]
            while path[-1] != top:
                path.append(parents[path[-1]])
            path.reverse()
            self._paths[d] = tuple(path)
            for parent, child in zip(path, path[1:]):
                self.nodes[parent].routing_table[d] = child

    @property
    def layers(self) -> int:
        return max(n.layer for n in self.nodes.values())

    def path(self, dimm: int) -> Tuple[str, ...]:
        try:
            return self._paths[dimm]
        except KeyError:
            raise UnroutableDimm(f"no route to DIMM {dimm}") from None

    def hops(self, dimm: int) -> int:
        return len(self.path(dimm)) - 1

    def one_way_delay(self, dimm: int, params: TimingParams) -> int:
        path = self.path(dimm)
        return sum(params.tPD + self.nodes[n].delay for n in path[1:])

    def dimms(self) -> List[int]:
        return sorted(self._paths)


def forward(node: MecNode, dimm: int) -> str:
    """Child port a command for ``dimm`` leaves ``node`` on."""
    if node.role is Role.LEAF:
        raise MecError(f"leaf node {node.name!r} does not forward")
    try:
        return node.routing_table[dimm]
    except KeyError:
        raise UnroutableDimm(f"{node.name} has no route to DIMM {dimm}") from None


def parse_tree(text: str, node_delay: int = 0) -> Hierarchy:
    """Custom hierarchy: ``mec1>a mec1>b | a=0,1,2,3 b=4,5,6,7``.

    Left of the bar are parent>child links, right of it each DIMM-owning
    node with its DIMM ids. The root is ``mec1``.
    """
    links_part, sep, leaves_part = text.partition("|")
    if not sep:
        raise ValueError("custom topology needs 'links | leaves'")
    links = []
    for item in links_part.split():
        parent, arrow, child = item.partition(">")
        if not arrow or not parent or not child:
            raise ValueError(f"bad link {item!r}; expected parent>child")
        links.append((parent, child))
    leaves = {}
    for item in leaves_part.split():
        node, eq, ids = item.partition("=")
        if not eq or not node:
            raise ValueError(f"bad leaf {item!r}; expected node=id,id,...")
        leaves[node] = [int(d) for d in ids.split(",") if d]
    return Hierarchy(links, leaves, node_delay=node_delay)


def build_topology(name: str, dimms: int = 8, node_delay: int = 0) -> Hierarchy:
    """Named topologies: ``four-layer`` (4-layer binary tree), ``flat`` (MEC1 -> one
    leaf MEC), ``single`` (MEC1 drives the DIMMs), or ``custom: ...`` as
    accepted by ``parse_tree``. Every DIMM id below ``dimms`` must be routable."""
    if name.startswith("custom:"):
        tree = parse_tree(name[len("custom:"):], node_delay)
        missing = sorted(set(range(dimms)) - set(tree.dimms()))
        if missing:
            raise ValueError(f"custom topology leaves DIMMs {missing} unroutable")
        return tree
    ids = list(range(dimms))
    if name == "single":
        return Hierarchy([], {"mec1": ids}, node_delay=node_delay)
    if name == "flat":
        return Hierarchy([("mec1", "leaf")], {"leaf": ids}, node_delay=node_delay)
    if name == "four-layer":
        links = [("mec1", "mec2.0"), ("mec1", "mec2.1")]
        for i in range(2):
            for j in range(2):
                links.append((f"mec2.{i}", f"mec3.{2 * i + j}"))
        leaves = []
        for k in range(4):
            for j in range(2):
                leaf = f"mec4.{2 * k + j}"
                links.append((f"mec3.{k}", leaf))
                leaves.append(leaf)
        owned = {leaf: [d for d in ids if d % len(leaves) == i] for i, leaf in enumerate(leaves)}
        return Hierarchy(links, {k: v for k, v in owned.items() if v}, node_delay=node_delay)
    raise KeyError(f"unknown topology {name!r}; known: four-layer, flat, single")


def min_lvc_size(params: TimingParams, propagation: Optional[int] = None) -> int:
    """Smallest LVC size M with M > (2*tPD + tRL) / tCCD (at least 1)."""
    tpd = params.tPD if propagation is None else propagation
    bound = (2 * tpd + params.tRL) / params.ccd
    return max(1, math.floor(bound) + 1)


@dataclass
class BstEntry:
    open: bool = False
    row: int = 0
    dimm: int = 0


@dataclass
class LvcEntry:
    entry_id: int
    valid: bool = False
    tag: int = -1
    data: Optional[bytes] = None
    lru: int = 0
    serial: int = 0
    fill_due: Optional[int] = None
    pending: Optional[bytes] = None

    def arrived(self, by: int) -> bool:
        return self.data is not None or (self.fill_due is not None and self.fill_due <= by)

    def line(self) -> bytes:
        return self.data if self.data is not None else self.pending


class BusResponse(NamedTuple):
    data_time: int
    line: bytes
    first_load: bool


@dataclass
class ExceptionRegisters:
    address: int = 0
    flag: int = 0
    data: Optional[bytes] = None


@dataclass
class MecStats:
    reads: int = 0
    first_loads: int = 0
    second_loads: int = 0
    early_second_loads: int = 0
    lvc_evictions: int = 0
    premature_evictions: int = 0
    stale_fills: int = 0
    write_invalidations: int = 0
    exception_reads: int = 0
    exception_writes: int = 0


Scheduler = Callable[..., None]


class Mec1:
    """Top-level extension chip facing the memory controller."""

    def __init__(self, hierarchy: Hierarchy, geometry: DramGeometry, params: TimingParams,
                 memory: BackingStore, lvc_size: int = 16, fake: Optional[FakeLine] = None,
                 exception_latency: int = 1000 * PS_PER_NS, schedule: Optional[Scheduler] = None):
        if lvc_size < 1:
            raise ValueError("LVC needs at least one entry")
        self.hierarchy = hierarchy
        self.node = hierarchy.nodes[hierarchy.top]
        self.geometry = geometry
        self.params = params
        self.memory = memory
        self.fake = fake or FakeLine.of(geometry.line_size)
        self.exception_latency = exception_latency
        self.schedule = schedule
        self.bst = [BstEntry() for _ in range(geometry.banks)]
        self.lvc = [LvcEntry(i) for i in range(lvc_size)]
        self._tags: Dict[int, int] = {}
        self._stamp = 0
        self._serial = 0
        self._consumed = set()
        self._flag_mask = ~(1 << geometry.flag_bit)
        self.regs = ExceptionRegisters()
        self.stats = MecStats()
        self._delay_cache: Dict[int, int] = {}

    # --- command handling -------------------------------------------------

    def on_act(self, bank: int, row: int, now: int) -> Optional[str]:
        dimm = row_dimm(row, self.geometry)
        e = self.bst[bank]
        e.open, e.row, e.dimm = True, row, dimm
        if self.node.children:
            return forward(self.node, dimm)
        self.hierarchy.path(dimm)  # MEC1 owns the DIMM; raises if it does not
        return None

    def on_pre(self, bank: int, now: int) -> None:
        self.bst[bank].open = False

    def address(self, bank: int, column: int) -> int:
        e = self.bst[bank]
        if not e.open:
            raise ClosedBankRead(f"RD to bank {bank} with no open row in the BST")
        return compose(e.row, bank, column, self.geometry)

    def tag_of(self, addr: int) -> int:
        return addr & self._flag_mask

    def round_trip(self, dimm: int) -> int:
        d = self._delay_cache.get(dimm)
        if d is None:
            d = self._delay_cache[dimm] = 2 * self.hierarchy.one_way_delay(dimm, self.params) + self.params.tRL
        return d

    def on_read(self, bank: int, column: int, now: int) -> BusResponse:
        tag = self.tag_of(self.address(bank, column))
        self.stats.reads += 1
        data_time = now + self.params.tRL
        idx = self._tags.get(tag)
        if idx is not None:
            entry = self.lvc[idx]
            if entry.arrived(data_time):
                line = entry.line()
                if entry.data is None:
                    self._consumed.add(entry.serial)  # fill lands within this RD's tRL
                self._free(entry)
                self.stats.second_loads += 1
                return BusResponse(data_time, line, False)
            # fill still in flight: answer fake and keep the entry for a retry
            self._stamp += 1
            entry.lru = self._stamp
            self.stats.early_second_loads += 1
            return BusResponse(data_time, self.fake.pattern, False)
        self._prefetch(tag, self.bst[bank].dimm, now)
        self.stats.first_loads += 1
        return BusResponse(data_time, self.fake.pattern, True)

    def on_write(self, addr: int, now: int) -> None:
        """A write reached the extended memory; any buffered copy is now stale."""
        idx = self._tags.get(self.tag_of(addr))
        if idx is not None:
            self._free(self.lvc[idx])
            self.stats.write_invalidations += 1

    def on_fill(self, entry_id: int, tag: int, data: bytes, now: int, serial: Optional[int] = None) -> bool:
        entry = self.lvc[entry_id]
        if entry.valid and entry.tag == tag and (serial is None or entry.serial == serial):
            entry.data = data
            entry.pending = None
            return True
        if serial in self._consumed:
            self._consumed.discard(serial)
            return False
        self.stats.stale_fills += 1
        return False

    # --- LVC --------------------------------------------------------------

    def _free(self, entry: LvcEntry) -> None:
        entry.valid = False
        self._tags.pop(entry.tag, None)
        entry.tag = -1
        entry.data = entry.pending = None
        entry.fill_due = None

    def _allocate(self, tag: int, now: int) -> LvcEntry:
        victim = None
        for e in self.lvc:
            if not e.valid:
                victim = e
                break
        if victim is None:
            victim = min(self.lvc, key=lambda e: e.lru)
            self.stats.lvc_evictions += 1
            if not victim.arrived(now):
                self.stats.premature_evictions += 1
            self._free(victim)
        self._stamp += 1
        self._serial += 1
        victim.valid = True
        victim.tag = tag
        victim.lru = self._stamp
        victim.serial = self._serial
        self._tags[tag] = victim.entry_id
        return victim

    def _prefetch(self, tag: int, dimm: int, now: int) -> LvcEntry:
        entry = self._allocate(tag, now)
        # the leaf reads DRAM when the forwarded RD arrives; writes are ordered behind it
        data = self.memory.read(tag)
        entry.fill_due = now + self.round_trip(dimm)
        entry.pending = data
        if self.schedule is not None:
            self.schedule(entry.fill_due, self.on_fill, entry.entry_id, tag, data, entry.fill_due, entry.serial)
        return entry

    def lvc_lookup(self, addr: int) -> Optional[LvcEntry]:
        idx = self._tags.get(self.tag_of(addr))
        return None if idx is None else self.lvc[idx]

    def live_entries(self) -> int:
        return len(self._tags)

    # --- safe path --------------------------------------------------------

    def exception_read(self, addr: int, now: int = 0) -> Tuple[bytes, int]:
        """Uncached register path: write the address, poll the flag, read the data."""
        regs = self.regs
        regs.address = self.tag_of(addr)
        regs.flag = 0
        regs.data = self.memory.read(regs.address)
        regs.flag = 1
        self.stats.exception_reads += 1
        return regs.data, now + self.exception_latency

    def exception_write(self, addr: int, offset: int, data: bytes, now: int = 0) -> int:
        tag = self.tag_of(addr)
        self.regs.address = tag
        self.memory.write_word(tag, offset, data)
        self.on_write(tag, now)
        self.stats.exception_writes += 1
        return now + self.exception_latency
