"""Cost and performance-per-dollar model for doubling memory capacity.

Four systems are compared: the two-socket baseline, twin-load (MECs and
a second set of DIMMs), a four-socket NUMA server, and a two-server
cluster. Costs are amortised over ``years`` and kept as exact
fractions; rounding happens only when printing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Dict, List, Mapping, Sequence, Tuple, Union

Number = Union[int, float, str, Fraction]


class System(enum.Enum):
    BASELINE = "baseline"
    TL = "tl"
    NUMA = "numa"
    CLUSTER = "cluster"


def _q(value: Number) -> Fraction:
    # str() keeps 0.74 as 74/100 instead of its binary approximation
    return Fraction(str(value)) if isinstance(value, float) else Fraction(value)


@dataclass(frozen=True)
class CostInputs:
    """Prices in dollars, counts, and multipliers of the cost table."""
    processor: Fraction = Fraction(1166)
    numa_processor: Fraction = Fraction(3616)  # four-socket capable part
    memory: Fraction = Fraction(175)  # per DIMM
    board: Fraction = Fraction(1000)  # motherboard and disk
    mec: Fraction = Fraction(100)
    power: Fraction = Fraction(252)
    other: Fraction = Fraction(1325)
    years: Fraction = Fraction(3)

    baseline_processors: Fraction = Fraction(2)
    baseline_dimms: Fraction = Fraction(8)
    tl_dimms: Fraction = Fraction(16)
    tl_mecs: Fraction = Fraction(8)
    tl_power: Fraction = Fraction("1.3")
    numa_processors: Fraction = Fraction(4)
    numa_dimms: Fraction = Fraction(16)
    numa_board: Fraction = Fraction("1.5")
    numa_power: Fraction = Fraction("1.8")
    numa_other: Fraction = Fraction("1.5")
    cluster_processors: Fraction = Fraction(4)
    cluster_dimms: Fraction = Fraction(16)
    cluster_board: Fraction = Fraction(2)
    cluster_power: Fraction = Fraction(2)
    cluster_other: Fraction = Fraction(2)

    c_tl: Fraction = Fraction("0.74")
    c_numa: Fraction = Fraction("0.76")  # remote access penalty
    x: Fraction = Fraction(1)  # speedup from doubling capacity; cancels in every ratio

    def __post_init__(self):
        for f in fields(self):
            value = _q(getattr(self, f.name))
            if value < 0:
                raise ValueError(f"cost input {f.name} must be non-negative")
            object.__setattr__(self, f.name, value)
        if self.years == 0:
            raise ValueError("amortisation years must be positive")

    def with_overrides(self, overrides: Mapping[str, Number]) -> "CostInputs":
        known = {f.name for f in fields(self)}
        bad = sorted(set(overrides) - known)
        if bad:
            raise KeyError(f"unknown cost input(s): {', '.join(bad)}")
        return replace(self, **{k: _q(v) for k, v in overrides.items()})


def components(system: System, inputs: CostInputs = CostInputs()) -> Dict[str, Fraction]:
    """Per-row costs of one system, hardware already divided by ``years``."""
    i = inputs
    y = i.years
    if system is System.BASELINE:
        rows = (i.baseline_processors * i.processor, i.baseline_dimms * i.memory, i.board, 0, i.power, i.other)
    elif system is System.TL:
        rows = (i.baseline_processors * i.processor, i.tl_dimms * i.memory, i.board, i.tl_mecs * i.mec,
                i.tl_power * i.power, i.other)
    elif system is System.NUMA:
        rows = (i.numa_processors * i.numa_processor, i.numa_dimms * i.memory, i.numa_board * i.board, 0,
                i.numa_power * i.power, i.numa_other * i.other)
    else:
        rows = (i.cluster_processors * i.processor, i.cluster_dimms * i.memory, i.cluster_board * i.board, 0,
                i.cluster_power * i.power, i.cluster_other * i.other)
    proc, mem, board, mec, power, other = rows
    return {"processor": proc / y, "memory": mem / y, "board": board / y, "mec": Fraction(mec) / y,
            "power": Fraction(power), "other": Fraction(other)}


def total_cost(system: System, inputs: CostInputs = CostInputs()) -> Fraction:
    return sum(components(system, inputs).values(), Fraction(0))


def speedup(system: System, inputs: CostInputs = CostInputs(), c: Number = 1) -> Fraction:
    """Delivered speedup over the baseline.

    ``c`` is the parallel efficiency of the systems that double the
    processor count (the cluster, and NUMA on top of its remote access
    penalty); it does not apply to the baseline or twin-load.
    """
    c = _q(c)
    if system is System.BASELINE:
        return Fraction(1)
    if system is System.TL:
        return inputs.x * inputs.c_tl
    if system is System.NUMA:
        return 2 * inputs.x * inputs.c_numa * c
    return 2 * inputs.x * c


def perf_per_dollar(system: System, inputs: CostInputs = CostInputs(), c: Number = 1) -> Fraction:
    """Performance per dollar relative to twin-load (twin-load itself is 1)."""
    def raw(s):
        return speedup(s, inputs, c) / total_cost(s, inputs)
    tl = raw(System.TL)
    if tl == 0:
        raise ZeroDivisionError("twin-load delivers no performance with these inputs")
    return raw(system) / tl


def break_even(system: System, inputs: CostInputs = CostInputs()) -> Fraction:
    """Parallel efficiency at which ``system`` matches twin-load per dollar."""
    at_one = perf_per_dollar(system, inputs, 1)
    if system in (System.BASELINE, System.TL) or at_one == 0:
        raise ValueError(f"{system.value} does not depend on parallel efficiency")
    # relative performance per dollar is linear in c through the origin
    return 1 / at_one


def efficiency_curve(inputs: CostInputs = CostInputs(), steps: int = 20) -> List[Tuple[Fraction, Fraction, Fraction]]:
    """(c, NUMA, Cluster) performance per dollar relative to twin-load for c in [0, 1]."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    out = []
    for k in range(steps + 1):
        c = Fraction(k, steps)
        out.append((c, perf_per_dollar(System.NUMA, inputs, c), perf_per_dollar(System.CLUSTER, inputs, c)))
    return out


def dollars(value: Fraction) -> str:
    return f"${float(value):,.2f}"


def cost_report(inputs: CostInputs = CostInputs(), steps: int = 20) -> str:
    """Cost table and efficiency curve as plain text (the curve part is CSV)."""
    systems = list(System)
    rows = ["processor", "memory", "board", "mec", "power", "other"]
    comp = {s: components(s, inputs) for s in systems}
    width = 12
    lines = ["cost".ljust(10) + "".join(s.value.rjust(width) for s in systems)]
    for r in rows:
        lines.append(r.ljust(10) + "".join(dollars(comp[s][r]).rjust(width) for s in systems))
    lines.append("total".ljust(10) + "".join(dollars(total_cost(s, inputs)).rjust(width) for s in systems))
    ratio = perf_per_dollar(System.TL, inputs) / perf_per_dollar(System.NUMA, inputs)
    lines.append("")
    lines.append(f"tl vs numa performance per dollar (full parallel efficiency): {float(ratio):.4f}")
    lines.append(f"cluster break-even parallel efficiency: {float(break_even(System.CLUSTER, inputs)):.4f}")
    lines.append("")
    lines.append("c,numa,cluster")
    for c, numa, cluster in efficiency_curve(inputs, steps):
        lines.append(f"{float(c):.4g},{float(numa):.6f},{float(cluster):.6f}")
    return "\n".join(lines) + "\n"


def parse_overrides(pairs: Sequence[str]) -> Dict[str, Fraction]:
    out = {}
    for p in pairs:
        key, sep, value = p.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {p!r}")
        out[key.strip()] = _q(value.strip())
    return out
