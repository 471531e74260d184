import random

import pytest
from hypothesis import given, settings, strategies as st

from dgassim import ops
from dgassim.config import CacheConfig, MemoryConfig, SpadConfig
from dgassim.kernel import ConfigurationError, SimulationFault
from dgassim.memory import MemRequest, Rule, configure_att, translate

from conftest import small_machine


def test_interleaved_grain_8_picks_controller_by_word():
    att = configure_att([Rule(0, 1 << 20, "interleaved", (0, 1, 2, 3), 8)])
    assert translate(att, 0x18) == (3, 0)
    assert [translate(att, a)[0] for a in (0, 8, 16, 24)] == [0, 1, 2, 3]
    assert translate(att, 0)[1] == 0


def test_block_partitioned_halves():
    att = configure_att([Rule(0, 1 << 20, "block_partitioned", (0, 1))])
    assert translate(att, 0x80000)[0] == 1
    assert translate(att, 0x7FFF8)[0] == 0


def test_overlapping_rules_rejected():
    with pytest.raises(ConfigurationError):
        configure_att([Rule(0, 4096, "interleaved", (0, 1)), Rule(2048, 8192, "interleaved", (0, 1))])


def test_unknown_scheme_rejected():
    with pytest.raises(ConfigurationError):
        configure_att([Rule(0, 4096, "striped", (0,))])


def test_unmapped_address_faults():
    att = configure_att([Rule(4096, 8192, "interleaved", (0, 1))])
    with pytest.raises(SimulationFault):
        translate(att, 100)
    with pytest.raises(SimulationFault):
        translate(att, 8192)


@pytest.mark.parametrize("scheme,grain", [("interleaved", 8), ("interleaved", 64), ("block_partitioned", 64)])
def test_translate_injective_on_random_addresses(scheme, grain):
    size = 1 << 26
    att = configure_att([Rule(0, size, scheme, tuple(range(8)), grain),
                         Rule(size, 2 * size, "interleaved", (1, 3), 256)])
    rng = random.Random(5)
    addrs = {rng.randrange(0, 2 * size) & ~7 for _ in range(100_000)}
    targets = {translate(att, a) for a in addrs}
    assert len(targets) == len(addrs)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.sampled_from([8, 16, 64, 512]), st.integers(0, 4095))
def test_interleave_round_robin_property(k, grain, word):
    att = configure_att([Rule(0, 1 << 16, "interleaved", tuple(range(k)), grain)])
    addr = 8 * word
    ctrl, off = translate(att, addr)
    assert ctrl == (addr // grain) % k
    assert off == (addr // (grain * k)) * grain + addr % grain


def _timed_load(m, addr, cached=False, block=0):
    out = {}
    m.memory.issue_access(MemRequest(addr, 8, "load", cached, (block, 0, 0)),
                          lambda acc: out.setdefault("t", m.engine.now))
    m.engine.run()
    return out["t"]


def test_uncached_local_load_latency():
    m = small_machine(memory=MemoryConfig(dram_latency=100, local_latency=2))
    a = m.alloc("a", 4096)
    m.finalize()
    assert _timed_load(m, a) == 100 + 2 * 2


def test_cached_hit_latency_and_no_traffic():
    m = small_machine(cache=CacheConfig(latency=2))
    a = m.alloc("a", 4096, cached=True)
    m.finalize()
    t0 = _timed_load(m, a, cached=True)
    fetched = m.engine.ledger.controller(0)["fetched_bytes"]
    start = m.engine.now
    t1 = _timed_load(m, a + 8, cached=True) - start
    assert t0 > 100
    assert t1 == 2
    assert m.engine.ledger.controller(0)["fetched_bytes"] == fetched


def test_single_word_use_lands_in_bucket_8():
    m = small_machine()
    a = m.alloc("vec", 4096, cached=True)
    m.finalize()
    _timed_load(m, a + 16, cached=True)
    m.memory.harvest_all()
    hist = m.engine.ledger.line_hist["vec"]
    assert hist[1] == 1 and sum(hist) == 1


def test_spad_loads_do_not_touch_controllers():
    m = small_machine()
    m.finalize()

    def prog():
        yield ops.spad_store(64, 123)
        for _ in range(10_000):
            v = yield ops.spad_load(64)
        assert v == 123
    m.spawn(0, 0, prog())
    assert m.run().ok
    c = m.engine.ledger.controller(0)
    assert c["fetched_bytes"] == 0 and c["busy_cycles"] == 0


def test_remote_spad_load_follows_remote_uncached_path():
    mcfg = MemoryConfig(dram_latency=100, local_latency=2)
    m = small_machine(blocks=4, dims=[4], memory=mcfg, spad=SpadConfig(latency=3))
    a = m.alloc_local("far", 4096, 2)
    m.finalize()
    remote_load = _timed_load(m, a)
    m.memory.spads[2].write(0, 9)
    out = {}
    start = m.engine.now
    m.memory.spad_access(2, 0, 8, "load", lambda acc: out.update(t=m.engine.now, v=acc.result), origin_block=0)
    m.engine.run()
    # same network round trip and local hops; only the storage access time differs
    assert out["v"] == 9
    assert out["t"] - start - 3 == remote_load - 100


def test_spad_out_of_range_faults():
    m = small_machine(spad=SpadConfig(capacity=1024))
    m.finalize()
    with pytest.raises(SimulationFault):
        m.memory.spad_access(0, 1024, 8, "load", lambda acc: None)


def test_controller_useful_never_exceeds_fetched():
    m = small_machine(blocks=4, dims=[4], mtc=1, threads=8)
    a = m.alloc("a", 8 * 4096, cached=True)
    b = m.alloc("b", 8 * 4096)

    def prog(k):
        for i in range(200):
            yield ops.load(a + 8 * ((i * 97 + k) % 4096), True)
            yield ops.store(b + 8 * ((i * 31 + k) % 4096), i)
    for k in range(8):
        m.spawn(k % 4, 0, prog(k))
    assert m.run().ok
    for cid in range(4):
        c = m.engine.ledger.controller(cid)
        assert c["useful_bytes"] <= c["fetched_bytes"]
    assert not m.problems
