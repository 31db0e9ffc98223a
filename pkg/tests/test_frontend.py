import pytest
from hypothesis import given, settings, strategies as st

from twinload.addrmap import LAYOUTS
from twinload.engine import SimConfig, Simulator, run, run_sync
from twinload.frontend import (CacheState, Mechanism, MechanismKind, Source, classify_state, load_increased_trl,
                               load_plain, load_tl_lf, load_tl_ooo, parse_mechanism, store_tl)
from twinload.timing import CommandKind, ns
from twinload.trace import Op, TraceRecord, gen_synthetic

L = LAYOUTS["desk-scale"]
P_ADDR = L.extended.base + 0x12340
OOO = parse_mechanism("tl-ooo")
LF = parse_mechanism("tl-lf")


def sim_for(mech, **kw):
    return Simulator(SimConfig(mechanism=mech, **kw))


def preload(sim, p, p_cached, s_cached):
    s = sim.ctx.shadow(p)
    if p_cached:
        sim.cache.install(p, sim.memory.read(p))
    if s_cached:
        sim.cache.install(s, sim.fake.pattern)
    return s


def rd_times(sim):
    return [c.time for c in sim.extension.log if c.kind is CommandKind.RD]


def test_mechanism_parsing():
    assert parse_mechanism("inc-trl:35") == Mechanism(MechanismKind.INC_TRL, ns(35))
    assert str(parse_mechanism("inc-trl:35")) == "inc-trl:35"
    assert parse_mechanism("TL-OoO").kind is MechanismKind.TL_OOO
    for bad in ("tl-ooo:5", "nope", "inc-trl:-1"):
        with pytest.raises(ValueError):
            parse_mechanism(bad)
    with pytest.raises(ValueError):
        Mechanism(MechanismKind.INC_TRL, -1)


def test_table_three_mapping():
    assert classify_state(False, False)[:2] == (CacheState.S1, 2)
    assert classify_state(True, True)[:2] == (CacheState.S2, 0)
    assert classify_state(True, False)[:2] == (CacheState.S3, 1)
    info = classify_state(False, True)
    assert (info.state, info.expected_reads, info.expected_result) == (CacheState.S4, 1, ("v'", "v'"))
    assert [classify_state(a, b).expected_result for a, b in ((0, 0), (1, 1), (1, 0))] == [("v", "v'")] * 3


@pytest.mark.parametrize("mech", [OOO, LF])
@pytest.mark.parametrize("p_cached,s_cached", [(False, False), (True, True), (True, False), (False, True)])
def test_each_cache_state_matches_table(mech, p_cached, s_cached):
    sim = sim_for(mech)
    preload(sim, P_ADDR, p_cached, s_cached)
    info = classify_state(p_cached, s_cached)
    load = load_tl_ooo if mech is OOO else load_tl_lf
    out, _ = run_sync(sim.config, lambda s: load(s.ctx, P_ADDR), sim)
    assert out.state is info.state
    assert out.dram_reads == info.expected_reads
    assert out.results == info.expected_result
    assert out.value == sim.memory.read(P_ADDR)
    assert out.retries == (1 if info.state is CacheState.S4 else 0)


def test_state_one_tl_ooo_returns_first_real_value():
    sim = sim_for(OOO)
    out, _ = run_sync(sim.config, lambda s: load_tl_ooo(s.ctx, P_ADDR), sim)
    assert out.source in (Source.FIRST_LOAD, Source.SECOND_LOAD)
    assert out.value == sim.memory.read(P_ADDR)
    # one prefetch RD then the demand RD one forced row miss later
    rd = rd_times(sim)
    assert rd[1] - rd[0] == ns(35)


def test_collision_goes_to_exception_path():
    sim = sim_for(OOO)
    sim.memory.write(P_ADDR, sim.fake.pattern)
    out, _ = run_sync(sim.config, lambda s: load_tl_ooo(s.ctx, P_ADDR), sim)
    assert out.source is Source.EXCEPTION_PATH and out.exception
    assert out.retries == 1 and len(out.attempts) == 2
    assert out.value == sim.fake.pattern


def test_retry_on_consistent_state_is_harmless():
    sim = sim_for(OOO)
    out1, _ = run_sync(sim.config, lambda s: load_tl_ooo(s.ctx, P_ADDR), sim)
    out2, _ = run_sync(sim.config, lambda s: load_tl_ooo(s.ctx, P_ADDR), sim)
    assert out1.value == out2.value == sim.memory.read(P_ADDR)
    assert out2.state is CacheState.S2 and out2.retries == 0


def test_tl_lf_fences_between_loads():
    sim = sim_for(LF)
    out, _ = run_sync(sim.config, lambda s: load_tl_lf(s.ctx, P_ADDR), sim)
    t1, t2 = out.attempts[0].tickets
    assert t1.dram and t2.dram and t1.seq < t2.seq
    rd = rd_times(sim)
    # the demand RD leaves the core only after the prefetch data came back
    assert rd[1] - rd[0] >= sim.params.tRL + 2 * sim.config.onchip_latency
    assert out.source is Source.SECOND_LOAD


def test_tl_lf_state_two_keeps_fence_without_reads():
    sim = sim_for(LF)
    preload(sim, P_ADDR, True, True)
    out, _ = run_sync(sim.config, lambda s: load_tl_lf(s.ctx, P_ADDR), sim)
    assert out.dram_reads == 0 and rd_times(sim) == []


def test_tl_lf_tiny_lvc_recovers_by_retry():
    lay = L
    trace = gen_synthetic("uniform", 4 << 20, 300, 2, lay)
    cfg = SimConfig(mechanism=LF, lvc_size=1, topology="flat", timing=SimConfig().timing.with_(tPD=ns(30)))
    stats = run(cfg, trace)
    assert stats.lvc_premature_evictions > 0 and stats.retries > 0
    assert stats.value_mismatches == 0 and stats.timing_violations == 0


def test_increased_trl_zero_matches_ideal():
    ideal = sim_for(Mechanism(MechanismKind.IDEAL))
    inc = sim_for(Mechanism(MechanismKind.INC_TRL, 0))
    a, _ = run_sync(ideal.config, lambda s: load_plain(s.ctx, P_ADDR), ideal)
    b, _ = run_sync(inc.config, lambda s: load_increased_trl(s.ctx, P_ADDR), inc)
    assert a.value == b.value and ideal.events.now == inc.events.now


@pytest.mark.parametrize("extra_ns", [0, 35, 135])
def test_increased_trl_holds_the_bank(extra_ns):
    extra = ns(extra_ns)
    trace = [TraceRecord(0, Op.LOAD, P_ADDR), TraceRecord(1, Op.LOAD, P_ADDR + 64)]
    sim = Simulator(SimConfig(mechanism=Mechanism(MechanismKind.INC_TRL, extra)), trace)
    sim.run()
    rd = rd_times(sim)
    # same row: the second RD waits out the stretched read, then tCCD
    assert rd[1] - rd[0] == extra + sim.params.ccd
    first_data = rd[0] + sim.params.tRL + extra
    assert sim._ops[0].end == first_data + sim.config.onchip_latency


class _ScriptedRng:
    """Interrupt model stand-in: evicts on the scripted draws only."""

    def __init__(self, draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0) if self.draws else 1.0

    def choice(self, seq):
        return seq[0]


@pytest.mark.parametrize("kind", [MechanismKind.TL_OOO, MechanismKind.TL_LF])
def test_store_cas_failure_is_retried(kind):
    sim = sim_for(Mechanism(kind), eviction_rate=0.5)
    sim.rng = _ScriptedRng([0.0])  # interrupt hits between the first twin-load and its CAS
    data = b"\x77" * 8
    out, _ = run_sync(sim.config, lambda s: store_tl(s.ctx, kind, P_ADDR, 16, data), sim)
    assert out.cas_failures == 1 and not out.safe_path
    sim.drain()
    assert sim.memory.read(P_ADDR)[16:24] == data


def test_undisturbed_store_and_same_value_store():
    sim = sim_for(OOO)
    old = sim.memory.read(P_ADDR)[:8]
    out, _ = run_sync(sim.config, lambda s: store_tl(s.ctx, MechanismKind.TL_OOO, P_ADDR, 0, old), sim)
    assert out.cas_failures == 0 and not out.safe_path
    out, _ = run_sync(sim.config, lambda s: store_tl(s.ctx, MechanismKind.TL_OOO, P_ADDR, 0, b"\x01" * 8), sim)
    sim.drain()
    assert sim.memory.read(P_ADDR)[:8] == b"\x01" * 8


def test_store_to_fake_looking_word_uses_safe_path():
    sim = sim_for(LF)
    sim.memory.write(P_ADDR, sim.fake.pattern)
    out, _ = run_sync(sim.config, lambda s: store_tl(s.ctx, MechanismKind.TL_LF, P_ADDR, 8, b"\x01" * 8), sim)
    assert out.safe_path
    sim.drain()
    assert sim.memory.read(P_ADDR)[8:16] == b"\x01" * 8


def test_ooo_issues_twins_without_fence_when_spacing_allows():
    sim = sim_for(OOO)
    assert sim.twin_spacing() == (False, 0)
    out, _ = run_sync(sim.config, lambda s: load_tl_ooo(s.ctx, P_ADDR), sim)
    t1, t2 = out.attempts[0].tickets
    assert t1.op is t2.op


def test_retries_grow_with_eviction_rate():
    trace = gen_synthetic("uniform", 1 << 20, 1500, 4, L, store_fraction=0.3)
    counts = []
    for rate in (0.0, 0.05, 0.3, 1.0):
        st_ = run(SimConfig(mechanism=OOO, eviction_rate=rate, seed=4), trace)
        counts.append(st_.retries + st_.cas_failures)
        assert st_.value_mismatches == 0 and st_.memory_mismatches == 0
    assert counts == sorted(counts)


records = st.lists(st.tuples(st.integers(0, 31), st.booleans(), st.integers(0, 3)), min_size=1, max_size=40)


@settings(max_examples=40, deadline=None)
@given(records, st.sampled_from(["ideal", "tl-lf", "tl-ooo", "inc-trl:20"]),
       st.sampled_from([0.0, 0.2, 1.0]), st.integers(0, 50))
def test_end_to_end_golden_memory(recs, mech, rate, seed):
    # few distinct lines so loads and stores collide, local lines mixed in
    trace = []
    for i, (line, store, gap) in enumerate(recs):
        base = L.local.base if line % 5 == 0 else L.extended.base
        trace.append(TraceRecord(i, Op.STORE if store else Op.LOAD, base + line * 64 + (line % 8) * 8, (), gap))
    stats = run(SimConfig(mechanism=parse_mechanism(mech), eviction_rate=rate, seed=seed), trace)
    assert stats.completed_ops == len(trace)
    assert stats.value_mismatches == 0 and stats.memory_mismatches == 0 and stats.timing_violations == 0
