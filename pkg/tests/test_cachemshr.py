import pytest
from hypothesis import given, settings, strategies as st

from twinload.addrmap import LAYOUTS, shadow_of
from twinload.cachemshr import AccessResult, CacheError, CacheModel, MshrFile, NoPendingMiss
from twinload.memory import BackingStore

L = LAYOUTS["desk-scale"]
EXT = L.extended.base
LINE = b"\x11" * 64


def test_cold_miss_then_hit():
    c = CacheModel(mshr_capacity=4)
    assert c.access(EXT, "load", 0)[0] is AccessResult.MISS_ISSUED
    assert c.access(EXT, "load", 1)[0] is AccessResult.MISS_MERGED
    assert c.fill(EXT, LINE, 10) is None
    assert c.access(EXT, "load", 11) == (AccessResult.HIT, LINE)


def test_capacity_plus_one_misses_blocks_last():
    c = CacheModel(mshr_capacity=3)
    results = [c.access(EXT + i * 64, "load", 0)[0] for i in range(4)]
    assert results == [AccessResult.MISS_ISSUED] * 3 + [AccessResult.MISS_BLOCKED]
    assert len(c.mshr) == 3
    c.fill(EXT, LINE, 5)
    assert c.retry_blocked(5) == ([EXT + 3 * 64], [])


def test_blocked_misses_granted_oldest_first():
    c = CacheModel(mshr_capacity=1)
    c.access(EXT, "load", 0, priority=0)
    for prio, i in ((7, 1), (3, 2), (3, 3), (5, 4)):
        c.access(EXT + i * 64, "load", 0, priority=prio)
    order = []
    addr = EXT
    for _ in range(4):
        c.fill(addr, LINE, 1)
        (addr,), _ = c.retry_blocked(1)
        order.append((addr - EXT) // 64)
    assert order == [2, 3, 4, 1]


def test_fill_without_miss_raises():
    with pytest.raises(NoPendingMiss):
        CacheModel().fill(EXT, LINE)


def test_fill_full_set_returns_lru_victim_with_dirty_data():
    c = CacheModel(sets=1, ways=2, mshr_capacity=4)
    a, b, d = EXT, EXT + 64, EXT + 128
    for x in (a, b):
        c.access(x, "rfo", 0)
        c.fill(x, LINE, 0)
    c.write(a, 0, b"\x22" * 8)
    c.access(b, "load", 1)  # a is now least recently used
    c.access(d, "load", 2)
    ev = c.fill(d, LINE, 3)
    assert ev.addr == a and ev.dirty and ev.data[:8] == b"\x22" * 8


def test_invalidate():
    c = CacheModel()
    assert c.invalidate(EXT) is None
    c.access(EXT, "load", 0)
    c.fill(EXT, LINE, 0)
    assert c.invalidate(EXT).addr == EXT
    assert c.access(EXT, "load", 1)[0] is AccessResult.MISS_ISSUED


def test_twin_lines_share_a_set_and_flush_to_state_one():
    c = CacheModel()
    s = shadow_of(EXT + 0x1c0, L)
    assert c._set(EXT + 0x1c0) is c._set(s)
    for x in (EXT + 0x1c0, s):
        c.access(x, "load", 0)
        c.fill(x, LINE, 0)
    assert c.contains(EXT + 0x1c0) and c.contains(s)
    c.invalidate(EXT + 0x1c0)
    assert c.contains(s)  # evicting one twin leaves the other
    c.invalidate(s)
    assert not c.contains(EXT + 0x1c0) and not c.contains(s)


def test_cas_compares_operand():
    c = CacheModel()
    c.access(EXT, "rfo", 0)
    c.fill(EXT, LINE, 0)
    assert not c.cas(EXT, 8, b"\x00" * 8, b"\x33" * 8)
    assert c.cas(EXT, 8, b"\x11" * 8, b"\x33" * 8)
    assert c.peek(EXT).data[8:16] == b"\x33" * 8 and c.peek(EXT).dirty
    with pytest.raises(CacheError):
        c.cas(EXT + 64, 0, b"", b"")


def test_outstanding_average():
    assert MshrFile(10).average(100) == 0.0
    m = MshrFile(10)
    m.allocate(1, 0)
    m.allocate(2, 50)
    m.release(1, 100)
    m.release(2, 100)
    # one in flight for 50, two for 50 -> 1.5 over [0, 100]
    assert m.average(100) == 1.5
    assert m.average(200) == 0.75


ops = st.lists(st.tuples(st.sampled_from(["load", "store", "invalidate", "fill"]), st.integers(0, 23),
                         st.binary(min_size=8, max_size=8)), max_size=120)


@settings(max_examples=120, deadline=None)
@given(ops, st.integers(1, 4))
def test_cache_plus_memory_returns_last_write(seq, cap):
    # tiny cache so evictions happen; fills complete in FIFO order when asked
    mem = BackingStore(seed=9)
    cache = CacheModel(sets=2, ways=2, mshr_capacity=cap)
    golden = {}
    pending = []

    def write_back(ev):
        if ev is not None and ev.dirty:
            mem.write(ev.addr, ev.data)

    def complete(addr):
        write_back(cache.fill(addr, mem.read(addr)))
        issued, _ = cache.retry_blocked(0)
        pending.extend(issued)

    for kind, line, word in seq:
        addr = EXT + line * 64
        assert len(cache.mshr) <= cap
        if kind == "fill":
            if pending:
                complete(pending.pop(0))
            continue
        if kind == "invalidate":
            write_back(cache.invalidate(addr))
            continue
        result, data = cache.access(addr, "rfo" if kind == "store" else "load", 0)
        if result is AccessResult.MISS_ISSUED:
            pending.append(addr)
        if result is not AccessResult.HIT:
            continue
        assert data == golden.get(addr, mem.initial(addr))
        if kind == "store":
            cache.write(addr, 0, word)
            golden[addr] = word + golden.get(addr, mem.initial(addr))[8:]
    while pending:
        complete(pending.pop(0))
    assert not cache.mshr.blocked and len(cache.mshr) == 0
    for addr, data in cache.dirty_lines():
        mem.write(addr, data)
    for addr, data in golden.items():
        assert mem.read(addr) == data
