"""Run statistics and their serialisation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from typing import Iterable, List, Optional, Sequence, Union


@dataclass
class SimStats:
    mechanism: str = ""
    completed_ops: int = 0
    elapsed_ns: float = 0.0
    read_bandwidth: float = 0.0  # bytes per second
    avg_outstanding_reads: float = 0.0
    avg_outstanding_ext_reads: float = 0.0
    dram_reads: int = 0
    dram_writes: int = 0
    row_hits: int = 0
    row_misses: int = 0
    llc_misses: int = 0
    twin_loads: int = 0
    twin_pairing_rate: float = 0.0
    retries: int = 0
    exceptions: int = 0
    lvc_premature_evictions: int = 0
    lvc_evictions: int = 0
    cas_failures: int = 0
    safe_stores: int = 0
    injected_evictions: int = 0
    bus_utilization: float = 0.0
    value_mismatches: int = 0
    memory_mismatches: int = 0
    timing_violations: int = 0

    def as_row(self) -> dict:
        return asdict(self)


FIELDS = [f.name for f in fields(SimStats)]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def emit_stats(stats: Union[SimStats, Sequence[SimStats]], fmt: str = "csv",
               extra: Optional[Sequence[dict]] = None) -> str:
    """Serialise one or more runs as ``csv`` or an aligned ``table``.

    ``extra`` holds per-row leading columns (e.g. sweep parameters); all
    dicts must share the same keys.
    """
    rows = [stats] if isinstance(stats, SimStats) else list(stats)
    extra = list(extra) if extra is not None else [{} for _ in rows]
    if len(extra) != len(rows):
        raise ValueError("extra columns must match the number of rows")
    lead = list(extra[0]) if extra else []
    header = lead + FIELDS
    body = [[_fmt(e[k]) for k in lead] + [_fmt(getattr(s, f)) for f in FIELDS] for s, e in zip(rows, extra)]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt == "table":
        return format_table(header, body)
    raise ValueError(f"unknown format {fmt!r}; expected csv or table")


def format_table(header: List[str], body: Iterable[Sequence[str]]) -> str:
    body = [list(map(str, r)) for r in body]
    widths = [max([len(h)] + [len(r[i]) for r in body]) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def merge(runs: Iterable[SimStats]) -> List[SimStats]:
    """Aggregation across runs is just collection in a stable order."""
    return list(runs)
