import itertools

from dgassim.kernel import Engine
from dgassim.network import Network, Packet, Topology, dims_for_blocks, route


def topo(dims, bw=16, hop=10, header=8):
    return Topology(list(dims), [bw] * len(dims), [hop] * len(dims), header)


def test_route_same_block_is_empty():
    assert route(topo([4, 4]), 5, 5) == []


def test_route_one_hop_per_differing_dimension():
    t = topo([8, 8])
    assert len(route(t, t.block_of((0, 0)), t.block_of((3, 5)))) == 2
    assert len(route(t, t.block_of((0, 0)), t.block_of((0, 5)))) == 1


def test_all_pairs_on_4x4_at_most_two_hops():
    t = topo([4, 4])
    lengths = [len(route(t, a, b)) for a, b in itertools.product(range(16), repeat=2)]
    assert max(lengths) == 2
    assert lengths.count(0) == 16


def test_route_links_are_contiguous():
    t = topo([4, 4, 2])
    for a, b in itertools.product(range(32), repeat=2):
        path = route(t, a, b)
        cur = a
        for u, v in path:
            assert u == cur
            cur = v
        assert cur == b


def test_dims_cover_block_count():
    for n in (1, 2, 4, 8, 16, 32, 64):
        d = dims_for_blocks(n)
        p = 1
        for x in d:
            p *= x
        assert p == n


def _deliver_one(payload, src, dst, t):
    eng = Engine()
    net = Network(eng, t)
    got = []
    net.send(Packet(src, dst, "req", payload), 0, lambda _: got.append(eng.now))
    eng.run()
    return got[0], eng.ledger


def test_sixteen_byte_packet_two_hops():
    t = topo([4, 4], bw=16, hop=10, header=0)
    # hand model: per hop serialization ceil(16/16) = 1 plus 10 cycles of flight
    arrival, _ = _deliver_one(16, t.block_of((0, 0)), t.block_of((1, 2)), t)
    assert arrival == 2 * 10 + 2 * 1


def test_header_counts_toward_serialization():
    t = topo([4, 4], bw=8, hop=10, header=8)
    arrival, ledger = _deliver_one(8, 0, 1, t)
    assert arrival == 10 + 2
    assert ledger.header_bytes == 8 and ledger.payload_bytes == 8


def test_same_block_delivery_takes_no_network_time():
    t = topo([4, 4])
    arrival, ledger = _deliver_one(64, 3, 3, t)
    assert arrival == 0
    assert sum(ledger.link_busy.values()) == 0


def test_link_busy_equals_sum_of_serialization():
    t = topo([2], bw=8, hop=3, header=8)
    eng = Engine()
    net = Network(eng, t)
    expected = 0
    for i in range(10_000):
        payload = 8 * (i % 5)
        expected += -(-(payload + 8) // 8)
        net.send(Packet(0, 1, "req", payload), i // 3, lambda _: None)
    eng.run()
    assert eng.ledger.link_busy[(0, 1)] == expected
    assert eng.ledger.packets_delivered == 10_000


def test_fifo_link_preserves_order():
    t = topo([2], bw=1, hop=1, header=0)
    eng = Engine()
    net = Network(eng, t)
    order = []
    for i in range(20):
        net.send(Packet(0, 1, "req", 4), 0, order.append, i)
    eng.run()
    assert order == list(range(20))
