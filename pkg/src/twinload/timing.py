"""DDRx bank timing: parameters, per-bank state machine and a stream checker.

All times are integer picoseconds. Cycle-denominated parameters (tCCD,
tBURST) are stored in cycles and converted with the clock period.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

PS_PER_NS = 1000


class TimingError(Exception):
    pass


class IllegalTransition(TimingError):
    """Command not valid in the current bank state (e.g. RD to a closed bank)."""


class TimingViolation(TimingError):
    """Command issued before its earliest legal time."""


def ns(value: float) -> int:
    """Convert nanoseconds to integer picoseconds."""
    return int(round(value * PS_PER_NS))


def to_ns(ps: int) -> float:
    return ps / PS_PER_NS


@dataclass(frozen=True)
class TimingParams:
    tRL: int
    tBURST: int  # cycles
    tCCD: int  # cycles
    tRTP: int
    tRP: int
    tRCD: int
    tPD: int  # one-way, per forwarding hop
    clock: int

    def __post_init__(self):
        for name in ("tRL", "tBURST", "tCCD", "tRTP", "tRP", "tRCD", "clock"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        # tPD = 0 models a controller wired straight to the DIMMs
        if self.tPD < 0:
            raise ValueError(f"tPD must be non-negative, got {self.tPD}")

    @classmethod
    def from_ns(cls, tRL, tBURST, tCCD, tRTP, tRP, tRCD, tPD, clock) -> "TimingParams":
        return cls(tRL=ns(tRL), tBURST=int(tBURST), tCCD=int(tCCD), tRTP=ns(tRTP),
                   tRP=ns(tRP), tRCD=ns(tRCD), tPD=ns(tPD), clock=ns(clock))

    @property
    def ccd(self) -> int:
        """tCCD in picoseconds."""
        return self.tCCD * self.clock

    @property
    def burst(self) -> int:
        """tBURST in picoseconds."""
        return self.tBURST * self.clock

    @property
    def row_miss_delay(self) -> int:
        """Minimum RD-to-RD gap when the second RD hits another row of the bank."""
        return self.tRTP + self.tRP + self.tRCD

    def with_(self, **changes) -> "TimingParams":
        return replace(self, **changes)


PRESETS = {
    # datasheet values at DDR3-1600
    "ddr3-1600": TimingParams.from_ns(tRL=13.75, tBURST=4, tCCD=4, tRTP=7.5, tRP=13.75,
                                      tRCD=13.75, tPD=3.4, clock=1.25),
    # CL13 at 1.071 ns; provided for comparison only
    "ddr3-1866": TimingParams.from_ns(tRL=13.923, tBURST=4, tCCD=4, tRTP=7.5, tRP=13.923,
                                      tRCD=13.923, tPD=3.4, clock=1.071),
}


def preset(name: str) -> TimingParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown timing preset {name!r}; known: {sorted(PRESETS)}") from None


class CommandKind(enum.Enum):
    ACT = "ACT"
    RD = "RD"
    WR = "WR"
    PRE = "PRE"

    @property
    def is_column(self) -> bool:
        return self is CommandKind.RD or self is CommandKind.WR


_COLUMN_KINDS = frozenset((CommandKind.RD, CommandKind.WR))


class _Command(NamedTuple):
    kind: CommandKind
    bank: int
    time: int
    row: Optional[int] = None
    column: Optional[int] = None


class DramCommand(_Command):
    """One DRAM command; only ACT carries a row and only RD/WR a column."""
    __slots__ = ()

    def __new__(cls, kind: CommandKind, bank: int, time: int, row: Optional[int] = None,
                column: Optional[int] = None):
        if (row is None) == (kind is CommandKind.ACT):
            raise ValueError(f"{kind.value} must {'' if kind is CommandKind.ACT else 'not '}carry a row")
        if (column is None) == (kind in _COLUMN_KINDS):
            raise ValueError(f"{kind.value} must {'' if kind in _COLUMN_KINDS else 'not '}carry a column")
        return _Command.__new__(cls, kind, bank, time, row, column)

    def at(self, time: int) -> "DramCommand":
        return _Command.__new__(DramCommand, self.kind, self.bank, time, self.row, self.column)

    def __repr__(self):
        extra = f", row={self.row}" if self.row is not None else ""
        extra += f", column={self.column}" if self.column is not None else ""
        return f"DramCommand({self.kind.value}, bank={self.bank}, time={self.time}{extra})"


class BankTimingState(NamedTuple):
    open_row: Optional[int] = None
    last_act: Optional[int] = None
    last_read: Optional[int] = None
    last_write: Optional[int] = None
    last_pre: Optional[int] = None

    @property
    def is_open(self) -> bool:
        return self.open_row is not None


def _after(stamp: Optional[int], gap: int) -> int:
    return stamp + gap if stamp is not None else 0


def earliest_issue(cmd: DramCommand, state: BankTimingState, params: TimingParams) -> int:
    """Earliest time >= cmd.time at which cmd may legally issue to this bank."""
    kind = cmd.kind
    t = cmd.time
    if kind is CommandKind.ACT:
        if state.open_row is not None:
            raise IllegalTransition(f"ACT to bank {cmd.bank} with row {state.open_row} still open")
        return max(t, _after(state.last_pre, params.tRP))
    if kind.is_column:
        if state.open_row is None:
            raise IllegalTransition(f"{kind.value} to closed bank {cmd.bank}")
        return max(t, _after(state.last_act, params.tRCD),
                   _after(state.last_read, params.ccd), _after(state.last_write, params.ccd))
    # PRE; precharging an idle bank is a legal no-op
    return max(t, _after(state.last_read, params.tRTP), _after(state.last_write, params.tRTP))


def apply_command(state: BankTimingState, cmd: DramCommand, params: TimingParams) -> BankTimingState:
    """Return the bank state after cmd; raises if cmd is early or illegal."""
    earliest = earliest_issue(cmd, state, params)
    if cmd.time < earliest:
        raise TimingViolation(f"{cmd.kind.value}@{cmd.time}ps to bank {cmd.bank} before earliest {earliest}ps")
    kind, t = cmd.kind, cmd.time
    row, act, rd, wr, pre = state.open_row, state.last_act, state.last_read, state.last_write, state.last_pre
    if kind is CommandKind.ACT:
        row, act = cmd.row, t
    elif kind is CommandKind.PRE:
        row, pre = None, t
    elif kind is CommandKind.RD:
        rd = t
    else:
        wr = t
    return BankTimingState(row, act, rd, wr, pre)


def access_plan(state: BankTimingState, target: Tuple[int, int, int], now: int,
                params: TimingParams, write: bool = False,
                ) -> Tuple[List[DramCommand], int]:
    """Commands needed to read (or write) ``target = (row, column, bank)`` no earlier than ``now``.

    Returns the command list and the time the first data beat appears,
    which is always the column command time plus tRL.
    """
    row, column, bank = target
    commands = []
    new = _Command.__new__  # shapes below are valid by construction
    # same rules as earliest_issue, folded forward without rebuilding states
    open_row, act, rd, wr, pre = state.open_row, state.last_act, state.last_read, state.last_write, state.last_pre
    if open_row is not None and open_row != row:
        t = max(now, _after(rd, params.tRTP), _after(wr, params.tRTP))
        commands.append(new(DramCommand, CommandKind.PRE, bank, t, None, None))
        open_row, pre = None, t
    if open_row is None:
        t = max(now, _after(pre, params.tRP))
        commands.append(new(DramCommand, CommandKind.ACT, bank, t, row, None))
        act = t
    ccd = params.ccd
    t = max(now, _after(act, params.tRCD), _after(rd, ccd), _after(wr, ccd))
    commands.append(new(DramCommand, CommandKind.WR if write else CommandKind.RD, bank, t, None, column))
    return commands, t + params.tRL


def plan_state(state: BankTimingState, commands: Iterable[DramCommand], params: TimingParams) -> BankTimingState:
    for cmd in commands:
        state = apply_command(state, cmd, params)
    return state


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    required: int
    actual: int

    def __str__(self):
        return f"#{self.index}: {self.rule} requires {self.required}ps, got {self.actual}ps"


@dataclass
class ViolationReport:
    violations: List[Violation] = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __bool__(self):
        # truthy when there is something to report
        return bool(self.violations)


def validate_stream(commands: Sequence[DramCommand], params: TimingParams,
                    channel_ccd: bool = False) -> ViolationReport:
    """Check a time-ordered command stream against the bank-level rules.

    With ``channel_ccd`` the tCCD spacing is also enforced between column
    commands to different banks of the channel.
    """
    report = ViolationReport(checked=len(commands))
    out = report.violations
    banks = {}
    prev_time = None
    last_col_any = None
    ccd = params.ccd
    for i, cmd in enumerate(commands):
        t = cmd.time
        if prev_time is not None and t < prev_time:
            out.append(Violation(i, "order", prev_time, t))
        prev_time = t
        b = banks.get(cmd.bank)
        if b is None:
            b = banks[cmd.bank] = [None, None, None, None]  # open_row, act, col, pre
        open_row, last_act, last_col, last_pre = b
        kind = cmd.kind
        if kind is CommandKind.ACT:
            if open_row is not None:
                out.append(Violation(i, "open-bank", 0, 0))
            if last_pre is not None and t - last_pre < params.tRP:
                out.append(Violation(i, "tRP", params.tRP, t - last_pre))
            b[0] = cmd.row
            b[1] = t
        elif kind is CommandKind.PRE:
            if last_col is not None and t - last_col < params.tRTP:
                out.append(Violation(i, "tRTP", params.tRTP, t - last_col))
            b[0] = None
            b[3] = t
        else:
            if open_row is None:
                out.append(Violation(i, "closed-bank", 0, 0))
            if last_act is not None and t - last_act < params.tRCD:
                out.append(Violation(i, "tRCD", params.tRCD, t - last_act))
            if last_col is not None and t - last_col < ccd:
                out.append(Violation(i, "tCCD", ccd, t - last_col))
            if channel_ccd and last_col_any is not None and t - last_col_any < ccd:
                out.append(Violation(i, "tCCD-channel", ccd, t - last_col_any))
            b[2] = t
            last_col_any = t
    return report
