import pytest
from hypothesis import given, settings, strategies as st

from twinload.timing import (BankTimingState, CommandKind, DramCommand, IllegalTransition, TimingViolation,
                             access_plan, apply_command, earliest_issue, ns, plan_state, preset, validate_stream)

P = preset("ddr3-1600")
ACT, RD, WR, PRE = CommandKind.ACT, CommandKind.RD, CommandKind.WR, CommandKind.PRE


def test_preset_matches_datasheet_values():
    assert (P.tRL, P.tRP, P.tRCD, P.tRTP) == (13750, 13750, 13750, 7500)
    assert (P.tCCD, P.tBURST, P.clock) == (4, 4, 1250)
    assert P.ccd == 5000
    assert P.row_miss_delay == 35000


def test_params_reject_nonpositive():
    with pytest.raises(ValueError):
        P.with_(tRL=0)
    with pytest.raises(ValueError):
        P.with_(tPD=-1)


def test_command_shape_is_checked():
    with pytest.raises(ValueError):
        DramCommand(ACT, 0, 0)
    with pytest.raises(ValueError):
        DramCommand(RD, 0, 0, row=3, column=1)
    with pytest.raises(ValueError):
        DramCommand(PRE, 0, 0, column=1)
    assert DramCommand(RD, 1, 5, column=2).at(9).time == 9


def test_rd_after_rd_waits_tccd():
    state = BankTimingState(open_row=7, last_act=-100000, last_read=0)
    assert earliest_issue(DramCommand(RD, 0, 0, column=1), state, P) == 4 * 1250


def test_pre_after_rd_waits_trtp():
    state = BankTimingState(open_row=7, last_act=-100000, last_read=0)
    assert earliest_issue(DramCommand(PRE, 0, 0), state, P) == ns(7.5)


def test_rd_without_history_issues_immediately():
    state = BankTimingState(open_row=7)
    assert earliest_issue(DramCommand(RD, 0, 1234, column=0), state, P) == 1234


def test_apply_act_and_pre():
    s = apply_command(BankTimingState(), DramCommand(ACT, 0, 0, row=7), P)
    assert s.open_row == 7 and s.is_open
    s = apply_command(s, DramCommand(PRE, 0, 50000), P)
    assert s.open_row is None


def test_act_to_open_bank_is_illegal():
    with pytest.raises(IllegalTransition):
        apply_command(BankTimingState(open_row=7), DramCommand(ACT, 0, 0, row=9), P)
    with pytest.raises(IllegalTransition):
        apply_command(BankTimingState(), DramCommand(RD, 0, 0, column=0), P)


def test_early_command_is_a_violation():
    s = BankTimingState(open_row=3, last_act=0)
    with pytest.raises(TimingViolation):
        apply_command(s, DramCommand(RD, 0, ns(10), column=5), P)


def test_plan_row_hit():
    cmds, data = access_plan(BankTimingState(open_row=4), (4, 2, 0), 0, P)
    assert [c.kind for c in cmds] == [RD]
    assert cmds[0].time == 0 and data == ns(13.75)


def test_plan_row_miss_after_read_is_35ns():
    state = BankTimingState(open_row=4, last_act=-ns(100), last_read=0)
    cmds, data = access_plan(state, (5, 2, 0), 0, P)
    assert [c.kind for c in cmds] == [PRE, ACT, RD]
    # tRTP, then tRP, then tRCD, added by hand
    assert cmds[-1].time == 7500 + 13750 + 13750 == 35000
    assert data == cmds[-1].time + P.tRL


def test_plan_closed_bank():
    cmds, data = access_plan(BankTimingState(), (5, 2, 0), 0, P)
    assert [c.kind for c in cmds] == [ACT, RD]
    assert data == 13750 + 13750


def test_validate_stream_examples():
    ok = [DramCommand(ACT, 0, 0, row=3), DramCommand(RD, 0, ns(13.75), column=5)]
    assert validate_stream(ok, P).ok
    bad = [DramCommand(ACT, 0, 0, row=3), DramCommand(RD, 0, ns(10), column=5)]
    report = validate_stream(bad, P)
    assert [v.rule for v in report.violations] == ["tRCD"]
    assert report.violations[0].required == 13750 and report.violations[0].actual == 10000
    assert validate_stream([], P).ok


def test_validate_stream_channel_ccd():
    cmds = [DramCommand(ACT, 0, 0, row=1), DramCommand(ACT, 1, 0, row=1),
            DramCommand(RD, 0, 20000, column=0), DramCommand(RD, 1, 21000, column=0)]
    assert validate_stream(cmds, P).ok
    assert [v.rule for v in validate_stream(cmds, P, channel_ccd=True).violations] == ["tCCD-channel"]


requests = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 7), st.integers(0, 3), st.integers(0, 40000),
                              st.booleans()), min_size=1, max_size=60)


@settings(max_examples=150, deadline=None)
@given(requests)
def test_plans_are_always_legal(reqs):
    # one plan per request, each bank planned from its own state, stream audited afterwards
    banks = {}
    now = 0
    log = []
    for bank, row, col, gap, write in reqs:
        now += gap
        state = banks.get(bank, BankTimingState())
        cmds, data = access_plan(state, (row, col, bank), now, P, write=write)
        assert data - cmds[-1].time == P.tRL
        kinds = [c.kind for c in cmds]
        if state.open_row == row:
            assert kinds == [WR if write else RD]
        elif state.open_row is None:
            assert kinds[0] is ACT and len(kinds) == 2
        else:
            assert kinds[:2] == [PRE, ACT] and len(kinds) == 3
        banks[bank] = plan_state(state, cmds, P)
        log.extend(cmds)
    log.sort(key=lambda c: c.time)
    assert validate_stream(log, P).ok


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["tRP", "tRCD", "tRTP"]), st.integers(1, 13750),
       st.sampled_from([ACT, RD, PRE]), st.integers(0, 20000))
def test_relaxing_a_parameter_never_delays(name, smaller, kind, t):
    relaxed = P.with_(**{name: min(smaller, getattr(P, name))})
    if kind is ACT:
        cmd, state = DramCommand(ACT, 0, t, row=1), BankTimingState(last_pre=0, last_read=-5000)
    elif kind is RD:
        cmd, state = DramCommand(RD, 0, t, column=1), BankTimingState(open_row=1, last_act=0)
    else:
        cmd, state = DramCommand(PRE, 0, t), BankTimingState(open_row=1, last_act=0, last_read=0)
    assert earliest_issue(cmd, state, relaxed) <= earliest_issue(cmd, state, P)
