"""Memory trace records, the text trace format, and synthetic generators.

Trace files are line oriented::

    # twinload-trace v1
    <id> <LOAD|STORE> <hex vaddr> <gap> [dep,dep,...]

``gap`` counts non-memory instructions executed before the record.
"""

from __future__ import annotations

import enum
import io
import random
import re
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, TextIO, Tuple, Union

from .addrmap import AddressSpaceLayout, OutOfRange, Region, classify

TRACE_HEADER = "# twinload-trace v1"
_HEADER_RE = re.compile(r"^#\s*twinload-trace\s+v(\d+)\s*$")


class TraceError(Exception):
    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


class ParseError(TraceError):
    def __init__(self, message: str, line: int):
        Exception.__init__(self, f"line {line}: {message}")
        self.index = None
        self.line = line


class FootprintTooLarge(TraceError):
    pass


class Op(enum.Enum):
    LOAD = "LOAD"
    STORE = "STORE"


class TraceRecord(NamedTuple):
    id: int
    op: Op
    vaddr: int
    depends_on: Tuple[int, ...] = ()
    gap: int = 0


def validate(records: Sequence[TraceRecord], layout: Optional[AddressSpaceLayout] = None) -> None:
    """Raise TraceError unless ids increase, dependences point backwards and
    every address is local or extended memory."""
    seen = set()
    prev = None
    for i, r in enumerate(records):
        if prev is not None and r.id <= prev:
            raise TraceError(f"id {r.id} does not increase (previous {prev})", i)
        prev = r.id
        if r.gap < 0:
            raise TraceError(f"negative gap {r.gap}", i)
        for d in r.depends_on:
            if d not in seen:
                raise TraceError(f"dependence on {d} which is not an earlier record", i)
        seen.add(r.id)
        if layout is not None:
            try:
                region = classify(r.vaddr, layout)
            except OutOfRange:
                raise TraceError(f"address {r.vaddr:#x} outside local and extended memory", i) from None
            if region is Region.SHADOW:
                raise TraceError(f"address {r.vaddr:#x} is in shadow memory", i)


def parse_trace(text: Union[str, TextIO]) -> List[TraceRecord]:
    stream = io.StringIO(text) if isinstance(text, str) else text
    records = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER_RE.match(line)
            if m and m.group(1) != "1":
                raise ParseError(f"unsupported trace version v{m.group(1)}", lineno)
            continue
        fields = line.split("#", 1)[0].split()
        if len(fields) not in (4, 5):
            raise ParseError(f"expected 4 or 5 fields, got {len(fields)}", lineno)
        try:
            rid = int(fields[0])
        except ValueError:
            raise ParseError(f"bad id {fields[0]!r}", lineno) from None
        try:
            op = Op(fields[1].upper())
        except ValueError:
            raise ParseError(f"unknown op {fields[1]!r}", lineno) from None
        try:
            vaddr = int(fields[2], 16)
            gap = int(fields[3])
            deps = tuple(int(d) for d in fields[4].split(",") if d) if len(fields) == 5 else ()
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        records.append(TraceRecord(rid, op, vaddr, deps, gap))
    return records


def load_trace(path: Union[str, Path], layout: Optional[AddressSpaceLayout] = None) -> List[TraceRecord]:
    with open(path) as fh:
        records = parse_trace(fh)
    validate(records, layout)
    return records


def format_trace(records: Iterable[TraceRecord]) -> str:
    out = [TRACE_HEADER]
    for r in records:
        line = f"{r.id} {r.op.value} {r.vaddr:#x} {r.gap}"
        if r.depends_on:
            line += " " + ",".join(map(str, r.depends_on))
        out.append(line)
    return "\n".join(out) + "\n"


def write_trace(records: Iterable[TraceRecord], path: Union[str, Path]) -> None:
    Path(path).write_text(format_trace(records))


def gen_synthetic(kind: str, footprint: int, count: int, seed: int, layout: AddressSpaceLayout,
                  stride: int = 64, store_fraction: float = 0.0, gap: int = 0,
                  line_size: int = 64, base: Optional[int] = None) -> List[TraceRecord]:
    """Synthetic traces over extended memory.

    ``uniform`` draws independent random lines (GUPS-like), ``stride``
    walks the footprint with a fixed step, ``chase`` draws random lines
    where each record depends on the previous one.
    """
    base = layout.extended.base if base is None else base
    if footprint <= 0 or footprint % line_size:
        raise TraceError(f"footprint {footprint} must be a positive multiple of {line_size}")
    if base < layout.extended.base or base + footprint > layout.extended.limit:
        raise FootprintTooLarge(f"footprint of {footprint}B at {base:#x} does not fit the extended range")
    rng = random.Random(seed)
    lines = footprint // line_size
    records = []
    for i in range(count):
        if kind == "uniform" or kind == "chase":
            addr = base + rng.randrange(lines) * line_size
        elif kind == "stride":
            addr = base + (i * stride) % footprint
            addr -= addr % line_size
        else:
            raise ValueError(f"unknown generator {kind!r}; expected uniform, stride or chase")
        op = Op.STORE if store_fraction and rng.random() < store_fraction else Op.LOAD
        deps = (i - 1,) if kind == "chase" and i else ()
        records.append(TraceRecord(i, op, addr, deps, gap))
    return records


def parse_generator(spec: str) -> Tuple[str, int]:
    """``uniform`` | ``chase`` | ``stride:<bytes>`` -> (kind, stride)."""
    name, _, arg = spec.partition(":")
    if name == "stride":
        return "stride", int(arg or 64)
    if name in ("uniform", "chase") and not arg:
        return name, 64
    raise ValueError(f"bad generator spec {spec!r}")
