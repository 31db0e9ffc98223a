"""Physical address layout (local / extended / shadow) and DRAM coordinate mapping.

Address bits, most to least significant::

    flag | dimm | row | bank | column | line offset

The flag bit is the top bit of the logical row the controller sees, so an
extended address and its shadow land in the same bank with different rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Tuple

KB = 1 << 10
MB = 1 << 20
GB = 1 << 30


class AddressError(Exception):
    pass


class OutOfRange(AddressError):
    pass


class NotExtendable(AddressError):
    pass


class MisalignedAddress(AddressError):
    pass


class FieldOverflow(AddressError):
    pass


class OutOfExtendedMemory(AddressError):
    pass


class Region(enum.Enum):
    LOCAL = "local"
    EXTENDED = "extended"
    SHADOW = "shadow"


@dataclass(frozen=True)
class Range:
    base: int
    limit: int

    def __post_init__(self):
        if self.limit < self.base:
            raise ValueError(f"range limit {self.limit:#x} below base {self.base:#x}")

    @property
    def size(self) -> int:
        return self.limit - self.base

    def __contains__(self, addr: int) -> bool:
        return self.base <= addr < self.limit

    def overlaps(self, other: "Range") -> bool:
        return self.base < other.limit and other.base < self.limit


@dataclass(frozen=True)
class AddressSpaceLayout:
    local: Range
    extended: Range
    shadow: Range
    flag_bit: int

    def __post_init__(self):
        if self.shadow.size != self.extended.size:
            raise ValueError("shadow and extended ranges must be the same size")
        flag = 1 << self.flag_bit
        if self.shadow.base != self.extended.base ^ flag or self.extended.base & flag:
            raise ValueError(f"flipping bit {self.flag_bit} must map extended onto shadow")
        if self.extended.size and (self.extended.limit - 1) & flag:
            raise ValueError("extended range crosses the flag bit")
        for a, b in ((self.local, self.extended), (self.local, self.shadow), (self.extended, self.shadow)):
            if a.overlaps(b):
                raise ValueError(f"ranges {a} and {b} overlap")

    @property
    def ext_mem_size(self) -> int:
        return self.extended.size

    @property
    def flag(self) -> int:
        return 1 << self.flag_bit


LAYOUTS = {
    "full-scale": AddressSpaceLayout(Range(0, 8 * GB), Range(8 * GB, 32 * GB),
                                      Range(40 * GB, 64 * GB), flag_bit=35),
    # the full-scale layout scaled down by 2^10
    "desk-scale": AddressSpaceLayout(Range(0, 8 * MB), Range(8 * MB, 32 * MB),
                                     Range(40 * MB, 64 * MB), flag_bit=25),
}


def classify(addr: int, layout: AddressSpaceLayout) -> Region:
    if addr in layout.local:
        return Region.LOCAL
    if addr in layout.extended:
        return Region.EXTENDED
    if addr in layout.shadow:
        return Region.SHADOW
    raise OutOfRange(f"address {addr:#x} is in no mapped range")


def shadow_of(addr: int, layout: AddressSpaceLayout) -> int:
    """The twin of an extended or shadow address (flag bit flipped)."""
    if classify(addr, layout) is Region.LOCAL:
        raise NotExtendable(f"address {addr:#x} is local memory")
    return addr ^ layout.flag


def canonical(addr: int, layout: AddressSpaceLayout) -> int:
    """Address of the storage actually backing ``addr`` (shadow folds onto extended)."""
    return addr & ~layout.flag if addr in layout.shadow else addr


def _log2(n: int, name: str) -> int:
    if n <= 0 or n & (n - 1):
        raise ValueError(f"{name} must be a power of two, got {n}")
    return n.bit_length() - 1


@dataclass(frozen=True)
class DramGeometry:
    channels: int = 1
    logical_dimms: int = 8
    ranks_per_dimm: int = 2
    banks_per_rank: int = 8
    row_bits: int = 5
    column_bits: int = 7
    line_size: int = 64
    offset_bits: int = field(init=False, repr=False)
    bank_bits: int = field(init=False, repr=False)
    dimm_bits: int = field(init=False, repr=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "offset_bits", _log2(self.line_size, "line_size"))
        set_(self, "bank_bits", _log2(self.channels, "channels")
             + _log2(self.ranks_per_dimm, "ranks_per_dimm") + _log2(self.banks_per_rank, "banks_per_rank"))
        set_(self, "dimm_bits", _log2(self.logical_dimms, "logical_dimms"))
        if self.row_bits <= 0 or self.column_bits < 0:
            raise ValueError("row_bits must be positive and column_bits non-negative")

    @property
    def banks(self) -> int:
        return 1 << self.bank_bits

    @property
    def row_field_bits(self) -> int:
        """Width of the logical row the controller sees: flag + dimm + row."""
        return 1 + self.dimm_bits + self.row_bits

    @property
    def flag_bit(self) -> int:
        return self.offset_bits + self.column_bits + self.bank_bits + self.dimm_bits + self.row_bits

    @property
    def capacity(self) -> int:
        """Bytes of real storage addressed (shadow excluded)."""
        return (self.channels * self.logical_dimms * self.ranks_per_dimm * self.banks_per_rank
                * (1 << (self.row_bits + self.column_bits)) * self.line_size)

    def check_layout(self, layout: AddressSpaceLayout) -> None:
        if layout.flag_bit != self.flag_bit:
            raise ValueError(f"layout flag bit {layout.flag_bit} is not the row MSB ({self.flag_bit})")
        if max(layout.local.limit, layout.extended.limit) > self.capacity:
            raise ValueError("layout exceeds geometry capacity")


GEOMETRIES = {
    "desk-scale": DramGeometry(),
    "full-scale": DramGeometry(row_bits=12, column_bits=10),
}


class DramCoord(NamedTuple):
    row: int
    bank: int
    column: int
    dimm: int


def decompose(addr: int, geometry: DramGeometry) -> DramCoord:
    g = geometry
    if addr & (g.line_size - 1):
        raise MisalignedAddress(f"address {addr:#x} not aligned to {g.line_size}B lines")
    if addr >> (g.flag_bit + 1):
        raise FieldOverflow(f"address {addr:#x} exceeds {g.flag_bit + 1} address bits")
    a = addr >> g.offset_bits
    column = a & ((1 << g.column_bits) - 1)
    a >>= g.column_bits
    bank = a & ((1 << g.bank_bits) - 1)
    row = a >> g.bank_bits
    return DramCoord(row, bank, column, row_dimm(row, g))


def row_dimm(row: int, geometry: DramGeometry) -> int:
    """Physical DIMM id carried in the high row bits (flag bit ignored)."""
    return (row >> geometry.row_bits) & ((1 << geometry.dimm_bits) - 1)


def compose(row: int, bank: int, column: int, geometry: DramGeometry) -> int:
    g = geometry
    for name, value, bits in (("row", row, g.row_field_bits), ("bank", bank, g.bank_bits),
                              ("column", column, g.column_bits)):
        if not 0 <= value < (1 << bits):
            raise FieldOverflow(f"{name} {value} does not fit in {bits} bits")
    return ((((row << g.bank_bits) | bank) << g.column_bits) | column) << g.offset_bits


class Block(NamedTuple):
    extended_base: int
    shadow_base: int
    size: int


class ExtendedMemoryManager:
    """Block allocator pairing extended memory with its shadow.

    Virtual extended addresses equal physical ones. The shadow of a block
    is placed ``ext_mem_size`` above it in virtual space and mapped onto
    the flag-flipped physical range, which is the only translation kept.
    """

    def __init__(self, layout: AddressSpaceLayout, block_size: int = 64 * KB):
        if block_size <= 0 or layout.ext_mem_size % block_size:
            raise ValueError(f"block size {block_size} must divide the extended range")
        self.layout = layout
        self.block_size = block_size
        self._free: List[int] = []
        self._next = layout.extended.base
        self.blocks: Dict[int, Block] = {}

    def alloc_block(self, size: int) -> Tuple[int, int]:
        if size == 0:
            return ()
        if size < 0 or size % self.block_size:
            raise ValueError(f"size {size} is not a multiple of the {self.block_size}B block")
        count = size // self.block_size
        # contiguous requests come from the bump pointer; single blocks may reuse freed ones
        if count == 1 and self._free:
            base = self._free.pop()
        else:
            if self._next + size > self.layout.extended.limit:
                raise OutOfExtendedMemory(f"cannot allocate {size}B of extended memory")
            base = self._next
            self._next += size
        shadow = base + self.layout.ext_mem_size
        for i in range(count):
            b = base + i * self.block_size
            self.blocks[b] = Block(b, shadow + i * self.block_size, self.block_size)
        return base, shadow

    def free_block(self, extended_base: int, size: int = 0) -> None:
        size = size or self.block_size
        for b in range(extended_base, extended_base + size, self.block_size):
            if b not in self.blocks:
                raise KeyError(f"block {b:#x} is not allocated")
            del self.blocks[b]
            self._free.append(b)

    def ensure(self, addr: int) -> None:
        """Allocate blocks up to and including the one holding ``addr``."""
        while addr >= self._next:
            self.alloc_block(self.block_size)

    def is_allocated(self, addr: int) -> bool:
        return addr - addr % self.block_size in self.blocks

    def twin_virtual(self, p: int) -> int:
        return p + self.layout.ext_mem_size

    def translate(self, vaddr: int) -> int:
        """Virtual to physical; only the shadow window differs."""
        ext = self.layout.extended
        size = self.layout.ext_mem_size
        if ext.base + size <= vaddr < ext.limit + size:
            p = vaddr - size
            if not self.is_allocated(p):
                raise OutOfRange(f"shadow address {vaddr:#x} has no allocated block")
            return p ^ self.layout.flag
        return vaddr

    def shadow_address(self, p: int) -> int:
        """Physical shadow address used for the twin of extended address ``p``."""
        return self.translate(self.twin_virtual(p))


def alloc_block(manager: ExtendedMemoryManager, size: int) -> Tuple[int, int]:
    return manager.alloc_block(size)
