"""HyperX-style interconnect: all-to-all inside each dimension, dimension-order routing.

Every directed link is a FIFO server.  A packet occupies a link for
``ceil(bytes / bandwidth)`` cycles and then takes ``hop_latency`` cycles to
reach the next router.  Queues are unbounded; contention shows up as extra
latency which callers book under the ``backpressure`` category.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

from .kernel import ConfigurationError, Engine, SimulationFault

Link = Tuple[int, int]

PACKET_CLASSES = ("req", "resp", "atomic", "dma", "collective")


@dataclass
class Topology:
    dims: List[int] = field(default_factory=lambda: [4, 4])
    link_bandwidth: List[int] = field(default_factory=lambda: [8, 8])
    hop_latency: List[int] = field(default_factory=lambda: [40, 40])
    header_bytes: int = 8
    optical_top: bool = False

    def __post_init__(self):
        if not self.dims or any(d < 1 for d in self.dims):
            raise ConfigurationError(f"topology.dims must be positive, got {self.dims}")
        if len(self.link_bandwidth) != len(self.dims) or len(self.hop_latency) != len(self.dims):
            raise ConfigurationError("topology.link_bandwidth and topology.hop_latency need one entry per dimension")
        if any(b <= 0 for b in self.link_bandwidth):
            raise ConfigurationError("topology.link_bandwidth must be positive")

    @property
    def blocks(self) -> int:
        return math.prod(self.dims)

    def coords(self, block: int) -> Tuple[int, ...]:
        if not 0 <= block < self.blocks:
            raise SimulationFault(f"invalid block coordinate {block}")
        out = []
        for d in self.dims:
            out.append(block % d)
            block //= d
        return tuple(out)

    def block_of(self, coords: Sequence[int]) -> int:
        if len(coords) != len(self.dims) or any(not 0 <= c < d for c, d in zip(coords, self.dims)):
            raise SimulationFault(f"invalid coordinate {tuple(coords)} for dims {self.dims}")
        block, scale = 0, 1
        for c, d in zip(coords, self.dims):
            block += c * scale
            scale *= d
        return block

    def injection_bandwidth(self) -> int:
        """Aggregate outgoing link bandwidth of one block, bytes/cycle."""
        return sum((d - 1) * bw for d, bw in zip(self.dims, self.link_bandwidth))


def dims_for_blocks(blocks: int) -> List[int]:
    """Squarest 2-D factorisation of ``blocks`` (a 1-D ring of all-to-all when prime)."""
    best = [blocks]
    for a in range(2, int(math.isqrt(blocks)) + 1):
        if blocks % a == 0:
            best = [a, blocks // a]
    return best


def route(topo: Topology, src: int, dst: int) -> List[Link]:
    """Dimension-order path from ``src`` to ``dst`` as a list of directed links."""
    cur = list(topo.coords(src))
    target = topo.coords(dst)
    hops: List[Link] = []
    here = src
    for dim, want in enumerate(target):
        if cur[dim] != want:
            cur[dim] = want
            nxt = topo.block_of(cur)
            hops.append((here, nxt))
            here = nxt
    return hops


class Packet:
    __slots__ = ("src", "dst", "cls", "header", "payload", "tag", "queue_delay",
                 "path", "hop", "on_delivery", "arg")

    def __init__(self, src: int, dst: int, cls: str, payload: int, tag: str = "",
                 header: int = 8):
        self.src = src
        self.dst = dst
        self.cls = cls
        self.header = header
        self.payload = payload
        self.tag = tag or cls
        self.queue_delay = 0
        self.path: List[Link] = []
        self.hop = 0
        self.on_delivery: Optional[Callable] = None
        self.arg = None

    @property
    def size(self) -> int:
        return self.header + self.payload


class Network:
    def __init__(self, engine: Engine, topo: Topology):
        self.engine = engine
        self.topo = topo
        self.link_free: dict = {}
        self._routes: dict = {}
        self._level: dict = {}
        ledger = engine.ledger
        for a in range(topo.blocks):
            for b in range(topo.blocks):
                if a == b:
                    continue
                ca, cb = topo.coords(a), topo.coords(b)
                diff = [i for i in range(len(ca)) if ca[i] != cb[i]]
                if len(diff) == 1:
                    link = (a, b)
                    self._level[link] = diff[0]
                    self.link_free[link] = 0
                    ledger.link_busy[link] = 0
                    ledger.link_bytes[link] = 0

    def path(self, src: int, dst: int) -> List[Link]:
        key = (src, dst)
        p = self._routes.get(key)
        if p is None:
            p = route(self.topo, src, dst)
            self._routes[key] = p
        return p

    def unloaded_latency(self, src: int, dst: int, nbytes: int) -> int:
        total = 0
        for link in self.path(src, dst):
            lvl = self._level[link]
            total += -(-nbytes // self.topo.link_bandwidth[lvl]) + self.topo.hop_latency[lvl]
        return total

    def send(self, pkt: Packet, inject_time: int, on_delivery: Callable, arg=None) -> None:
        """Inject ``pkt`` at ``inject_time`` (>= now); call ``on_delivery(arg)`` on arrival.

        The first link is reserved immediately; later links are reserved by an
        event at the packet's arrival there, so each link sees arrivals in time
        order.
        """
        pkt.header = self.topo.header_bytes
        pkt.on_delivery = on_delivery
        pkt.arg = pkt if arg is None else arg
        ledger = self.engine.ledger
        ledger.packets_injected += 1
        ledger.header_bytes += pkt.header
        ledger.payload_bytes += pkt.payload
        if pkt.src == pkt.dst:
            self.engine.at(inject_time, self._deliver, pkt, f"blk{pkt.dst}", "deliver")
            return
        pkt.path = self.path(pkt.src, pkt.dst)
        pkt.hop = 0
        self._traverse(pkt, inject_time)

    def _traverse(self, pkt: Packet, arrival: int) -> None:
        link = pkt.path[pkt.hop]
        lvl = self._level[link]
        nbytes = pkt.header + pkt.payload
        ser = -(-nbytes // self.topo.link_bandwidth[lvl])
        free = self.link_free[link]
        start = arrival if arrival >= free else free
        done = start + ser
        self.link_free[link] = done
        pkt.queue_delay += start - arrival
        ledger = self.engine.ledger
        ledger.link_busy[link] += ser
        ledger.link_bytes[link] += nbytes
        ledger.link_payload[(link, pkt.tag)] += pkt.payload
        pkt.hop += 1
        nxt = done + self.topo.hop_latency[lvl]
        if pkt.hop < len(pkt.path):
            self.engine.at(nxt, self._hop_event, pkt, f"link{link[1]}", "hop")
        else:
            self.engine.at(nxt, self._deliver, pkt, f"blk{pkt.dst}", "deliver")

    def _hop_event(self, pkt: Packet) -> None:
        self._traverse(pkt, self.engine.now)

    def _deliver(self, pkt: Packet) -> None:
        ledger = self.engine.ledger
        ledger.packets_delivered += 1
        ledger.delivered_payload[(pkt.dst, pkt.tag)] += pkt.payload
        pkt.on_delivery(pkt.arg)
