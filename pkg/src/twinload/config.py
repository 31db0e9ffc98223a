"""INI configuration files for the simulator, sweeps and the cost model.

Example::

    # twinload-config v1
    [timing]
    preset = ddr3-1600
    tPD = 3.4            ; ns

    [mechanism]
    name = tl-ooo

    [sweep]
    latencies = 0, 15, 30, 45
    mechanisms = tl-lf, tl-ooo, inc-trl

Durations are in nanoseconds unless the key says otherwise. Every
section and key is optional; unknown ones are errors so typos surface.
"""

from __future__ import annotations

import configparser
import io
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .addrmap import GEOMETRIES, LAYOUTS, AddressSpaceLayout, DramGeometry, Range
from .cost import CostInputs
from .engine import ConfigError, SimConfig
from .frontend import Mechanism, parse_mechanism
from .timing import PRESETS, ns

CONFIG_HEADER = "# twinload-config v1"
CONFIG_ENV = "TWINLOAD_CONFIG"
_HEADER_RE = re.compile(r"^#\s*twinload-config\s+v(\d+)\s*$")

DEFAULT_LATENCIES = tuple(range(0, 136, 15))
DEFAULT_SWEEP_MECHANISMS = ("tl-lf", "tl-ooo", "inc-trl")

_TIMING_NS = ("tRL", "tRTP", "tRP", "tRCD", "tPD", "clock")
_TIMING_CYCLES = ("tBURST", "tCCD")

SCHEMA = {
    "timing": {"preset", *_TIMING_NS, *_TIMING_CYCLES},
    "layout": {"preset", "local", "extended", "shadow", "flag_bit", "channels", "dimms", "ranks",
               "banks", "row_bits", "column_bits", "line_size", "block_size"},
    "topology": {"name", "node_delay", "links", "leaves"},
    "cache": {"sets", "ways", "mshr", "hit_latency"},
    "lvc": {"size", "fake_byte"},
    "mechanism": {"name", "twin_spacing", "twin_delay", "retry_limit", "cas_limit", "cas_width",
                  "exception_latency", "eviction_rate", "collision_rate"},
    "engine": {"seed", "window", "cpi_gap", "onchip_latency", "scheduler", "record_commands", "strict"},
    "cost": {f.name for f in fields(CostInputs)},
    "sweep": {"latencies", "mechanisms", "jobs"},
    "trace": {"generator", "footprint", "count", "seed", "store_fraction", "gap"},
}


@dataclass
class TraceSettings:
    """Synthetic trace used when no trace file is given."""
    generator: str = "uniform"
    footprint: int = 16 << 20
    count: int = 10000
    seed: Optional[int] = None  # None follows the engine seed
    store_fraction: float = 0.0
    gap: int = 0


@dataclass
class SweepSettings:
    latencies: Tuple[float, ...] = DEFAULT_LATENCIES  # ns
    mechanisms: Tuple[str, ...] = DEFAULT_SWEEP_MECHANISMS
    jobs: int = 1


@dataclass
class Settings:
    sim: SimConfig = field(default_factory=SimConfig)
    cost: CostInputs = field(default_factory=CostInputs)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    trace: TraceSettings = field(default_factory=TraceSettings)


def default_config_path() -> Optional[Path]:
    """Config file named by the environment, if any."""
    value = os.environ.get(CONFIG_ENV)
    return Path(value) if value else None


def parse_override(text: str) -> Tuple[str, str, str]:
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise ConfigError(f"override {text!r} is not section.key=value")
    return section.lower(), name.strip(), value.strip()


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    p.optionxform = str  # keep tRL and friends as written
    return p


def _check_header(text: str, where: str) -> None:
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _HEADER_RE.match(line)
        if m and m.group(1) != "1":
            raise ConfigError(f"{where}: unsupported config version v{m.group(1)}")
        return


def read_parser(text: str = "", overrides: Sequence[str] = (), where: str = "<config>") -> configparser.ConfigParser:
    _check_header(text, where)
    p = _parser()
    try:
        p.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(f"{where}: {exc}") from None
    for o in overrides:
        section, key, value = parse_override(o)
        if not p.has_section(section):
            p.add_section(section)
        p.set(section, key, value)
    for section in p.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in p[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    return p


class _Section:
    """Typed getters that turn bad values into ConfigError."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.data = parser[name] if parser.has_section(name) else {}

    def __contains__(self, key):
        return key in self.data

    def _get(self, key, convert, default):
        if key not in self.data:
            return default
        raw = self.data[key]
        try:
            return convert(raw)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{self.name}.{key} = {raw!r}: {exc}") from None

    def str(self, key, default=None):
        return self._get(key, str, default)

    def int(self, key, default=None):
        return self._get(key, lambda s: int(s, 0), default)

    def float(self, key, default=None):
        return self._get(key, float, default)

    def ns(self, key, default=None):
        return self._get(key, lambda s: ns(float(s)), default)

    def bool(self, key, default=None):
        def conv(s):
            v = s.strip().lower()
            if v in ("1", "yes", "true", "on"):
                return True
            if v in ("0", "no", "false", "off"):
                return False
            raise ValueError("expected a boolean")
        return self._get(key, conv, default)

    def list(self, key, default=None):
        return self._get(key, lambda s: tuple(x.strip() for x in s.split(",") if x.strip()), default)


def _range(text: str) -> Range:
    lo, sep, hi = text.partition("-")
    if not sep:
        raise ValueError("expected base-limit")
    return Range(int(lo, 0), int(hi, 0))


def _timing(s: _Section):
    base = s._get("preset", lambda n: PRESETS[n], PRESETS["ddr3-1600"])
    changes = {k: s.ns(k) for k in _TIMING_NS if k in s}
    changes.update({k: s.int(k) for k in _TIMING_CYCLES if k in s})
    try:
        return replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(f"timing: {exc}") from None


def _layout(s: _Section) -> Tuple[AddressSpaceLayout, DramGeometry]:
    name = s.str("preset", "desk-scale")
    if name not in LAYOUTS:
        raise ConfigError(f"unknown layout preset {name!r}; known: {sorted(LAYOUTS)}")
    layout, geometry = LAYOUTS[name], GEOMETRIES[name]
    geo_keys = {"channels": "channels", "dimms": "logical_dimms", "ranks": "ranks_per_dimm",
                "banks": "banks_per_rank", "row_bits": "row_bits", "column_bits": "column_bits",
                "line_size": "line_size"}
    try:
        changes = {attr: s.int(key) for key, attr in geo_keys.items() if key in s}
        if changes:
            geometry = DramGeometry(**{**{a: getattr(geometry, a) for a in geo_keys.values()}, **changes})
        ranges = {k: s._get(k, _range, None) for k in ("local", "extended", "shadow")}
        if any(ranges.values()) or "flag_bit" in s:
            layout = AddressSpaceLayout(ranges["local"] or layout.local, ranges["extended"] or layout.extended,
                                        ranges["shadow"] or layout.shadow, s.int("flag_bit", layout.flag_bit))
    except ValueError as exc:
        raise ConfigError(f"layout: {exc}") from None
    return layout, geometry


def _topology(s: _Section, default: str) -> str:
    links, leaves = s.str("links"), s.str("leaves")
    if links is None and leaves is None:
        return s.str("name", default)
    if "name" in s and s.str("name") != "custom":
        raise ConfigError("topology.links/leaves describe a custom tree; drop topology.name or set it to custom")
    return f"custom: {links or ''} | {leaves or ''}"


def settings_from_parser(p: configparser.ConfigParser) -> Settings:
    sec = {name: _Section(p, name) for name in SCHEMA}
    d = SimConfig()
    layout, geometry = _layout(sec["layout"])
    mech = sec["mechanism"]._get("name", parse_mechanism, d.mechanism)
    m, e, c, t = sec["mechanism"], sec["engine"], sec["cache"], sec["trace"]
    sim = SimConfig(
        mechanism=mech,
        timing=_timing(sec["timing"]),
        layout=layout,
        geometry=geometry,
        topology=_topology(sec["topology"], d.topology),
        node_delay=sec["topology"].ns("node_delay", d.node_delay),
        cache_sets=c.int("sets", d.cache_sets),
        cache_ways=c.int("ways", d.cache_ways),
        mshr_capacity=c.int("mshr", d.mshr_capacity),
        hit_latency=c.ns("hit_latency", d.hit_latency),
        lvc_size=sec["lvc"].int("size", d.lvc_size),
        fake_byte=sec["lvc"].int("fake_byte", d.fake_byte),
        seed=e.int("seed", d.seed),
        eviction_rate=m.float("eviction_rate", d.eviction_rate),
        collision_rate=m.float("collision_rate", d.collision_rate),
        cpi_gap=e.ns("cpi_gap", d.cpi_gap),
        window=e.int("window", d.window),
        onchip_latency=e.ns("onchip_latency", d.onchip_latency),
        exception_latency=m.ns("exception_latency", d.exception_latency),
        scheduler=e.str("scheduler", d.scheduler),
        twin_delay=m.ns("twin_delay", d.twin_delay),
        twin_spacing=m.str("twin_spacing", d.twin_spacing),
        retry_limit=m.int("retry_limit", d.retry_limit),
        cas_limit=m.int("cas_limit", d.cas_limit),
        cas_width=m.int("cas_width", d.cas_width),
        block_size=sec["layout"].int("block_size", d.block_size),
        record_commands=e.bool("record_commands", d.record_commands),
        strict=e.bool("strict", d.strict),
    )
    if not 0 <= sim.fake_byte <= 0xFF:
        raise ConfigError("lvc.fake_byte must fit in one byte")
    sim.check()

    cost_sec = sec["cost"]
    try:
        cost = CostInputs().with_overrides({k: cost_sec.data[k] for k in cost_sec.data})
    except (ValueError, KeyError, ZeroDivisionError) as exc:
        raise ConfigError(f"cost: {exc}") from None

    sw = sec["sweep"]
    latencies = sw._get("latencies", lambda s: tuple(float(x) for x in s.split(",") if x.strip()),
                        SweepSettings.latencies)
    mechanisms = sw.list("mechanisms", SweepSettings.mechanisms)
    for name in mechanisms:
        try:
            parse_mechanism(name)
        except ValueError as exc:
            raise ConfigError(f"sweep.mechanisms: {exc}") from None
    if not latencies or not mechanisms:
        raise ConfigError("sweep needs at least one latency and one mechanism")
    if any(x < 0 for x in latencies):
        raise ConfigError("sweep latencies must be non-negative")
    sweep = SweepSettings(latencies, mechanisms, sw.int("jobs", 1))
    if sweep.jobs < 1:
        raise ConfigError("sweep.jobs must be at least 1")

    trace = TraceSettings(t.str("generator", "uniform"), t.int("footprint", TraceSettings.footprint),
                          t.int("count", TraceSettings.count), t.int("seed", None),
                          t.float("store_fraction", 0.0), t.int("gap", 0))
    if trace.count < 0 or trace.gap < 0 or not 0.0 <= trace.store_fraction <= 1.0:
        raise ConfigError("trace count and gap must be non-negative and store_fraction in [0, 1]")
    return Settings(sim, cost, sweep, trace)


def load_settings(path: Union[str, Path, None] = None, overrides: Sequence[str] = (),
                  seed: Optional[int] = None) -> Settings:
    """Read ``path`` (or the file named by the environment), apply overrides, then ``seed``."""
    if path is None:
        path = default_config_path()
    text, where = "", "<defaults>"
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        where = str(path)
    settings = settings_from_parser(read_parser(text, overrides, where))
    if seed is not None:
        settings.sim = replace(settings.sim, seed=seed)
    return settings


def format_settings(settings: Settings) -> str:
    """A config file that reproduces ``settings`` for the commonly changed keys."""
    s = settings.sim
    p = _parser()
    t = s.timing
    p["timing"] = {"tRL": t.tRL / 1000, "tBURST": t.tBURST, "tCCD": t.tCCD, "tRTP": t.tRTP / 1000,
                   "tRP": t.tRP / 1000, "tRCD": t.tRCD / 1000, "tPD": t.tPD / 1000, "clock": t.clock / 1000}
    p["topology"] = {"name": s.topology, "node_delay": s.node_delay / 1000}
    p["cache"] = {"sets": s.cache_sets, "ways": s.cache_ways, "mshr": s.mshr_capacity,
                  "hit_latency": s.hit_latency / 1000}
    p["lvc"] = {"size": s.lvc_size, "fake_byte": hex(s.fake_byte)}
    p["mechanism"] = {"name": str(s.mechanism), "twin_spacing": s.twin_spacing, "retry_limit": s.retry_limit,
                      "cas_limit": s.cas_limit, "cas_width": s.cas_width,
                      "exception_latency": s.exception_latency / 1000,
                      "eviction_rate": s.eviction_rate, "collision_rate": s.collision_rate}
    p["engine"] = {"seed": s.seed, "window": s.window, "cpi_gap": s.cpi_gap / 1000,
                   "onchip_latency": s.onchip_latency / 1000, "scheduler": s.scheduler}
    p["sweep"] = {"latencies": ", ".join(f"{x:g}" for x in settings.sweep.latencies),
                  "mechanisms": ", ".join(settings.sweep.mechanisms), "jobs": settings.sweep.jobs}
    buf = io.StringIO()
    buf.write(CONFIG_HEADER + "\n")
    p.write(buf)
    return buf.getvalue()
