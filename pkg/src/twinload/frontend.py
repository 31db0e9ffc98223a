"""Software side of twin-load: load/store sequences for each mechanism.

Each operation is a generator that yields memory actions (``Issue``,
``Wait``, ``Fence`` ...) and receives their results; the engine drives
it against the simulated cache and memory system. ``run_sync`` in the
engine module executes a single operation outside a full trace run.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Any, Callable, List, NamedTuple, Optional, Sequence, Tuple

from .mec import FakeLine
from .timing import ns


# --- actions ----------------------------------------------------------------

class Issue(NamedTuple):
    addr: int
    kind: str = "load"


class Wait(NamedTuple):
    tickets: Tuple[Any, ...]
    any: bool = False


class Fence(NamedTuple):
    full: bool = False


class Delay(NamedTuple):
    ps: int


class Flush(NamedTuple):
    addr: int


class Probe(NamedTuple):
    addr: int


class Cas(NamedTuple):
    """Compare-and-swap inside a line; ``expected=None`` is a plain store."""
    addr: int
    offset: int
    expected: Optional[bytes]
    new: bytes


class SafeRead(NamedTuple):
    addr: int


class SafeWrite(NamedTuple):
    addr: int
    offset: int
    data: bytes


class Inject(NamedTuple):
    """Point where an interrupt may evict one of ``addrs`` from the cache."""
    addrs: Tuple[int, ...]


# --- mechanism selection ----------------------------------------------------

class MechanismKind(enum.Enum):
    IDEAL = "ideal"
    TL_LF = "tl-lf"
    TL_OOO = "tl-ooo"
    INC_TRL = "inc-trl"


@dataclass(frozen=True)
class Mechanism:
    kind: MechanismKind
    extra: int = 0  # ps, IncreasedTRL only

    def __post_init__(self):
        if self.extra < 0:
            raise ValueError("extra latency must be non-negative")
        if self.extra and self.kind is not MechanismKind.INC_TRL:
            raise ValueError("only inc-trl carries an extra latency")

    @property
    def twin(self) -> bool:
        return self.kind in (MechanismKind.TL_LF, MechanismKind.TL_OOO)

    def __str__(self):
        if self.kind is MechanismKind.INC_TRL:
            return f"inc-trl:{self.extra / 1000:g}"
        return self.kind.value


_MECH_RE = re.compile(r"^(ideal|tl-lf|tl-ooo|inc-trl)(?::([0-9.]+))?$")


def parse_mechanism(text: str) -> Mechanism:
    m = _MECH_RE.match(text.strip().lower())
    if not m:
        raise ValueError(f"unknown mechanism {text!r}; expected ideal | tl-lf | tl-ooo | inc-trl:<ns>")
    kind = MechanismKind(m.group(1))
    if m.group(2) is not None and kind is not MechanismKind.INC_TRL:
        raise ValueError(f"mechanism {kind.value} takes no latency argument")
    return Mechanism(kind, ns(float(m.group(2) or 0)))


# --- outcomes ---------------------------------------------------------------

class Source(enum.Enum):
    FIRST_LOAD = "first-load"
    SECOND_LOAD = "second-load"
    CACHE_HIT = "cache-hit"
    EXCEPTION_PATH = "exception-path"


class CacheState(enum.IntEnum):
    S1 = 1
    S2 = 2
    S3 = 3
    S4 = 4


class StateInfo(NamedTuple):
    state: CacheState
    expected_reads: int
    expected_result: Tuple[str, str]


_TABLE = {
    (False, False): StateInfo(CacheState.S1, 2, ("v", "v'")),
    (True, True): StateInfo(CacheState.S2, 0, ("v", "v'")),
    (True, False): StateInfo(CacheState.S3, 1, ("v", "v'")),
    (False, True): StateInfo(CacheState.S4, 1, ("v'", "v'")),
}


def classify_state(p_cached: bool, p_shadow_cached: bool) -> StateInfo:
    """Cache state of a twin pair before a twin-load.

    ``p_cached`` refers to the twin line that holds the correct value and
    ``p_shadow_cached`` to the one holding fake data.
    """
    return _TABLE[bool(p_cached), bool(p_shadow_cached)]


@dataclass
class Attempt:
    tickets: Tuple[Any, Any]
    state: Optional[CacheState] = None

    @property
    def dram_reads(self) -> int:
        return sum(1 for t in self.tickets if t.dram)

    @property
    def paired(self) -> bool:
        return all(t.dram for t in self.tickets)


@dataclass
class TwinLoadOutcome:
    value: Optional[bytes] = None
    source: Optional[Source] = None
    retries: int = 0
    state: Optional[CacheState] = None
    line_addr: Optional[int] = None
    attempts: List[Attempt] = field(default_factory=list)
    fake: Optional[FakeLine] = None

    @property
    def exception(self) -> bool:
        return self.source is Source.EXCEPTION_PATH

    @property
    def dram_reads(self) -> int:
        """DRAM reads of the first twin-load attempt."""
        return self.attempts[0].dram_reads if self.attempts else 0

    @property
    def total_dram_reads(self) -> int:
        return sum(a.dram_reads for a in self.attempts)

    @property
    def results(self) -> Tuple[str, str]:
        """Values returned by the first attempt as ('v' | "v'") labels, correct value first."""
        if not self.attempts:
            return ()
        labels = ["v'" if self.fake.matches(t.value) else "v" for t in self.attempts[0].tickets]
        return tuple(sorted(labels, key=lambda s: s != "v"))


@dataclass
class StoreOutcome:
    load: TwinLoadOutcome
    cas_failures: int = 0
    safe_path: bool = False


@dataclass
class TwinContext:
    fake: FakeLine
    shadow: Callable[[int], int]
    retry_limit: int = 2  # twin-load attempts before the safe path
    cas_limit: int = 2
    twin_delay: int = 0
    cas_width: int = 8
    wait_first: bool = False  # TL-OoO: hold the second load until the first returns


# --- helpers ----------------------------------------------------------------

def _observe(tickets, fake: FakeLine) -> CacheState:
    h1, h2 = tickets[0].hit, tickets[1].hit
    if not h1 and not h2:
        return CacheState.S1
    if h1 and h2:
        return CacheState.S2
    hit = tickets[0] if h1 else tickets[1]
    return CacheState.S4 if fake.matches(hit.value) else CacheState.S3


def _finish(outcome: TwinLoadOutcome, ticket, first) -> TwinLoadOutcome:
    outcome.value = ticket.value
    outcome.line_addr = ticket.addr
    if ticket.hit:
        outcome.source = Source.CACHE_HIT
    else:
        outcome.source = Source.FIRST_LOAD if ticket is first else Source.SECOND_LOAD
    return outcome


def retry(ctx: TwinContext, p: int, s: int):
    """Return both twin lines to State 1 before another twin-load."""
    yield Flush(p)
    yield Flush(s)
    yield Fence(full=True)


def _safe_load(ctx: TwinContext, p: int, outcome: TwinLoadOutcome):
    outcome.value = yield SafeRead(p)
    outcome.source = Source.EXCEPTION_PATH
    outcome.line_addr = None
    return outcome


# --- loads ------------------------------------------------------------------

def load_plain(ctx: Optional[TwinContext], p: int):
    t = yield Issue(p)
    (value,) = yield Wait((t,))
    return TwinLoadOutcome(value=value, source=Source.CACHE_HIT if t.hit else Source.FIRST_LOAD,
                           line_addr=p, fake=ctx.fake if ctx else None)


def load_increased_trl(ctx: Optional[TwinContext], p: int):
    # the stretched tRL and bank hold live in the memory channel
    return (yield from load_plain(ctx, p))


def load_tl_ooo(ctx: TwinContext, p: int, settle: bool = False):
    """Issue both twins without a fence and keep whichever value is real.

    With ``settle`` the operation also waits for the other twin to return,
    so no fill for this pair is still in flight when it finishes.
    """
    s = ctx.shadow(p)
    fake = ctx.fake
    outcome = TwinLoadOutcome(fake=fake)
    for attempt in range(ctx.retry_limit):
        if attempt:
            yield from retry(ctx, p, s)
            outcome.retries += 1
        t1 = yield Issue(p)
        if ctx.wait_first:
            yield Wait((t1,))
        if ctx.twin_delay:
            yield Delay(ctx.twin_delay)
        t2 = yield Issue(s)
        outcome.attempts.append(Attempt((t1, t2)))
        first = yield Wait((t1, t2), any=True)
        other = t2 if first is t1 else t1
        if fake.matches(first.value):
            yield Wait((other,))
            chosen = None if fake.matches(other.value) else other
        else:
            chosen = first
            if settle:
                yield Wait((other,))
        state = _observe((t1, t2), fake)
        outcome.attempts[-1].state = state
        if outcome.state is None:
            outcome.state = state
        if chosen is not None:
            return _finish(outcome, chosen, t1)
    return (yield from _safe_load(ctx, p, outcome))


def load_tl_lf(ctx: TwinContext, p: int, settle: bool = True):
    """Prefetch the extended address, fence, then demand the shadow address."""
    s = ctx.shadow(p)
    fake = ctx.fake
    outcome = TwinLoadOutcome(fake=fake)
    for attempt in range(ctx.retry_limit):
        if attempt:
            yield from retry(ctx, p, s)
            outcome.retries += 1
        t1 = yield Issue(p)
        yield Fence()
        if ctx.twin_delay:
            yield Delay(ctx.twin_delay)
        t2 = yield Issue(s)
        outcome.attempts.append(Attempt((t1, t2)))
        yield Wait((t2,))
        state = _observe((t1, t2), fake)
        outcome.attempts[-1].state = state
        if outcome.state is None:
            outcome.state = state
        if not fake.matches(t2.value):
            return _finish(outcome, t2, t1)
        if not fake.matches(t1.value):
            return _finish(outcome, t1, t1)
    return (yield from _safe_load(ctx, p, outcome))


LOADERS = {
    MechanismKind.IDEAL: load_plain,
    MechanismKind.INC_TRL: load_increased_trl,
    MechanismKind.TL_OOO: load_tl_ooo,
    MechanismKind.TL_LF: load_tl_lf,
}


def twin_load(ctx: TwinContext, kind: MechanismKind, p: int):
    """Load then give the interrupt model a chance to evict one twin."""
    outcome = yield from LOADERS[kind](ctx, p)
    if kind in (MechanismKind.TL_OOO, MechanismKind.TL_LF):
        yield Inject((p, ctx.shadow(p)))
    return outcome


# --- stores -----------------------------------------------------------------

def store_plain(ctx: Optional[TwinContext], p: int, offset: int, data: bytes):
    yield Cas(p, offset, None, data)
    return StoreOutcome(TwinLoadOutcome(line_addr=p))


def store_tl(ctx: TwinContext, kind: MechanismKind, p: int, offset: int, data: bytes):
    """Twin-load the line, then CAS the new word into whichever twin holds it.

    A failed CAS (the line was evicted and refetched as fake) restarts from
    the twin-load. Values that look fake, and repeated CAS failures, use
    the safe path. Both twin lines are flushed afterwards so neither cache
    nor MEC1 keeps a copy older than memory.
    """
    s = ctx.shadow(p)
    width = len(data)
    fake_word = ctx.fake.pattern[:width]
    out = StoreOutcome(TwinLoadOutcome(fake=ctx.fake))
    for _ in range(ctx.cas_limit):
        if kind is MechanismKind.TL_OOO:
            load = yield from load_tl_ooo(ctx, p, settle=True)
        else:
            load = yield from load_tl_lf(ctx, p)
        out.load.retries += load.retries
        if out.load.state is None:
            out.load.state = load.state
            out.load.attempts = load.attempts
        expected = None if load.exception else load.value[offset: offset + width]
        if expected is None or expected == fake_word:
            break
        target = load.line_addr
        yield Inject((target,))
        if (yield Cas(target, offset, expected, data)):
            out.load.value = load.value
            out.load.source = load.source
            out.load.line_addr = target
            yield Flush(p)
            yield Flush(s)
            return out
        out.cas_failures += 1
    yield Flush(p)
    yield Flush(s)
    yield SafeWrite(p, offset, data)
    out.safe_path = True
    out.load.source = Source.EXCEPTION_PATH
    return out
