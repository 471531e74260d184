"""Assembles engine, network, memory, cores and offload engines into one machine."""

from __future__ import annotations

import itertools
import logging
from typing import Callable, Dict, List, Optional, TextIO

from .config import MachineConfig
from .cores import MTCore, STCore, ThreadContext
from .engines import Engines, SharedQueue
from .kernel import ConfigurationError, Engine, RunResult, SimulationFault
from .memory import LINE, SPAD_BASE, SPAD_STRIDE, MemorySystem, Rule, configure_att
from .network import Network, Topology

log = logging.getLogger(__name__)

HEAP_BASE = 0x10000     # keep address 0 unmapped so stray null pointers fault
_ALIGN = 4096


class Machine:
    """One simulated node.

    Typical use::

        m = Machine(cfg)
        base = m.alloc("x", 8 * n)
        m.finalize()
        m.memory.poke_array(base, values)
        m.spawn(block, core, program)
        result = m.run()
    """

    def __init__(self, cfg: MachineConfig, event_log: Optional[TextIO] = None):
        self.cfg = cfg
        self.blocks = cfg.blocks
        self.engine = Engine(event_log)
        t = cfg.topology
        dims = cfg.dims()
        self.topology = Topology(list(dims), [t.link_bandwidth] * len(dims), [t.hop_latency] * len(dims),
                                 t.header_bytes, t.optical_top)
        if self.topology.blocks != self.blocks:
            raise ConfigurationError(f"topology {dims} does not have {self.blocks} blocks")
        self.network = Network(self.engine, self.topology)
        self._rules: List[Rule] = []
        self._next = HEAP_BASE
        self.regions: Dict[str, List[Rule]] = {}
        self.memory: Optional[MemorySystem] = None
        self.engines: Optional[Engines] = None
        self.cores: List[list] = []
        self.threads: List[ThreadContext] = []
        self._tids = itertools.count()
        self._thread_block: Dict[int, int] = {}
        self.problems: List[str] = []
        self.result: Optional[RunResult] = None

    # -- layout --------------------------------------------------------------
    def alloc(self, region: str, nbytes: int, scheme: str = "interleaved", grain: int = LINE,
              controllers: Optional[List[int]] = None, cached: bool = False) -> int:
        """Reserve ``nbytes`` of DGAS space under a fresh ATT rule; return the base address."""
        if self.memory is not None:
            raise ConfigurationError("allocation after the machine was finalized")
        for ov in self.cfg.att:
            if ov.region == region:
                scheme, grain, controllers = ov.scheme, ov.grain, ov.controllers
        ctrls = tuple(range(self.blocks)) if controllers is None else tuple(controllers)
        if any(not 0 <= c < self.blocks for c in ctrls):
            raise ConfigurationError(f"region {region!r}: controller list {list(ctrls)} out of range")
        size = max(nbytes, 8)
        size = -(-size // LINE) * LINE
        base = self._next
        rule = Rule(base, base + size, scheme, ctrls, grain, region, cached)
        self._rules.append(rule)
        self.regions.setdefault(region, []).append(rule)
        self._next = -(-(base + size) // _ALIGN) * _ALIGN
        return base

    def alloc_local(self, region: str, nbytes: int, block: int, cached: bool = False) -> int:
        return self.alloc(region, nbytes, "block_partitioned", LINE, [block], cached)

    def alloc_queue(self, region: str, capacity: int, block: int) -> SharedQueue:
        base = self.alloc_local(region, 8 * SharedQueue.footprint_words(capacity), block)
        return SharedQueue(base, capacity)

    def spad_address(self, block: int, offset: int = 0) -> int:
        return SPAD_BASE + block * SPAD_STRIDE + offset

    def finalize(self) -> None:
        if self.memory is not None:
            return
        cfg = self.cfg
        att = configure_att(self._rules, cfg.memory.capacity) if self._rules else configure_att(
            [Rule(HEAP_BASE, HEAP_BASE + LINE, "interleaved", tuple(range(self.blocks)))])
        cores_per_block = cfg.core.mtc_count + cfg.core.stc_count
        self.memory = MemorySystem(self.engine, self.network, att, cfg.memory, cfg.cache, cfg.spad,
                                   self.blocks, cores_per_block)
        self.engines = Engines(self, cfg.engines)
        for b in range(self.blocks):
            row = [MTCore(self, b, i) for i in range(cfg.core.mtc_count)]
            row += [STCore(self, b, cfg.core.mtc_count + j, cfg.core.stc_scoreboard_depth)
                    for j in range(cfg.core.stc_count)]
            self.cores.append(row)

    # -- threads -------------------------------------------------------------
    def spawn(self, block: int, core: int, program, label: str = "") -> ThreadContext:
        self.finalize()
        if not 0 <= block < self.blocks:
            raise ConfigurationError(f"no block {block}")
        row = self.cores[block]
        if not 0 <= core < len(row):
            raise ConfigurationError(f"block {block} has no core {core}")
        c = row[core]
        if isinstance(c, MTCore) and len(c.threads) >= self.cfg.core.threads_per_mtc:
            raise ConfigurationError(f"core {block}.{core} already has {len(c.threads)} threads")
        if isinstance(c, STCore) and c.threads:
            raise ConfigurationError(f"single-thread core {block}.{core} is occupied")
        tid = next(self._tids)
        th = ThreadContext(tid, block, core, program, label)
        c.add_thread(th)
        self.threads.append(th)
        self._thread_block[tid] = block
        self.engine.schedule(0, c.start_thread, th, f"t{tid}", "start")
        return th

    def placement(self, n: int) -> List[tuple]:
        """(block, core) for ``n`` MTC threads: contiguous runs per block, round-robin over cores."""
        cap = self.blocks * self.cfg.threads_per_block
        if not 1 <= n <= cap:
            raise ConfigurationError(f"thread count {n} not in [1, {cap}]")
        out = []
        per = [0] * self.blocks
        for i in range(n):
            b = i * self.blocks // n
            out.append((b, per[b] % self.cfg.core.mtc_count))
            per[b] += 1
        return out

    def thread_block(self, tid: int) -> int:
        try:
            return self._thread_block[tid]
        except KeyError:
            raise SimulationFault(f"unknown thread {tid}") from None

    def make_group(self, tids) -> "object":
        self.finalize()
        return self.engines.make_group(tids)

    # -- run -----------------------------------------------------------------
    def run(self, max_time: Optional[int] = None, max_events: Optional[int] = None) -> RunResult:
        self.finalize()
        res = self.engine.run(max_time, max_events)
        self.result = res
        self.memory.harvest_all()
        ledger = self.engine.ledger
        ledger.elapsed = res.time
        self.problems = ledger.self_check() if res.ok else []
        if res.ok and ledger.packets_injected != ledger.packets_delivered:
            self.problems.append(f"packets injected {ledger.packets_injected} != delivered "
                                 f"{ledger.packets_delivered}")
        for p in self.problems:
            log.error("ledger self-check: %s", p)
        return res

    @property
    def elapsed(self) -> int:
        return self.result.time if self.result else 0
