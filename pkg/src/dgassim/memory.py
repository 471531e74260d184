"""Distributed global address space: translation tables, controllers, caches, scratchpads.

Functional state is a single word-addressed dict keyed by DGAS byte address
(8-byte aligned).  Caches keep their own copies of line data; they are not
coherent, so a stale line stays stale until it is evicted or flushed.
"""

from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .config import CacheConfig, MemoryConfig, SpadConfig
from .kernel import ConfigurationError, Engine, SimulationFault
from .network import Network, Packet

LINE = 64
WORD = 8
SPAD_BASE = 1 << 56
SPAD_STRIDE = 1 << 32
SIZES = (1, 2, 4, 8, 64)

ATOMIC_OPS = ("add", "min", "max", "cas", "exchange")


# ---------------------------------------------------------------------------
# Address translation


@dataclass(frozen=True)
class Rule:
    base: int
    limit: int
    scheme: str
    controllers: Tuple[int, ...]
    grain: int = LINE
    region: str = ""
    cached: bool = False


class AddressTranslationTable:
    """Frozen, validated rule list.  Build with :func:`configure_att`."""

    def __init__(self, rules: Sequence[Rule], offsets: List[Dict[int, int]]):
        self.rules = tuple(rules)
        self._bases = [r.base for r in self.rules]
        self._offsets = offsets
        self._footprint: Dict[int, int] = {}
        for i, r in enumerate(self.rules):
            for c in r.controllers:
                self._footprint[c] = max(self._footprint.get(c, 0), offsets[i][c] + self._per_ctrl(r))

    @staticmethod
    def _per_ctrl(rule: Rule) -> int:
        size = rule.limit - rule.base
        k = len(rule.controllers)
        if rule.scheme == "interleaved":
            rows = -(-size // (rule.grain * k))
            return rows * rule.grain
        chunk = -(-size // k)
        return -(-chunk // WORD) * WORD

    def rule_index(self, addr: int) -> int:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i < 0 or addr >= self.rules[i].limit:
            return -1
        return i

    def rule_for(self, addr: int) -> Optional[Rule]:
        i = self.rule_index(addr)
        return None if i < 0 else self.rules[i]

    def translate(self, addr: int, origin=None) -> Tuple[int, int]:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i < 0:
            raise SimulationFault(f"unmapped address {addr:#x}", origin)
        r = self.rules[i]
        if addr >= r.limit:
            raise SimulationFault(f"unmapped address {addr:#x}", origin)
        rel = addr - r.base
        k = len(r.controllers)
        if r.scheme == "interleaved":
            g = r.grain
            chunk = rel // g
            ctrl = r.controllers[chunk % k]
            local = (chunk // k) * g + rel % g
        else:
            size = r.limit - r.base
            span = -(-(-(-size // k)) // WORD) * WORD
            j = rel // span
            ctrl = r.controllers[j]
            local = rel - j * span
        return ctrl, self._offsets[i][ctrl] + local

    def controller_of(self, addr: int) -> int:
        return self.translate(addr)[0]

    def footprint(self, ctrl: int) -> int:
        return self._footprint.get(ctrl, 0)


def configure_att(rules: Sequence[Rule], controller_capacity: Optional[int] = None) -> AddressTranslationTable:
    """Validate a rule list and freeze it into a table."""
    ordered = sorted(rules, key=lambda r: r.base)
    for r in ordered:
        if r.limit <= r.base:
            raise ConfigurationError(f"rule {r.region or hex(r.base)}: empty range [{r.base:#x}, {r.limit:#x})")
        if not r.controllers:
            raise ConfigurationError(f"rule {r.region or hex(r.base)}: empty controller list")
        if r.scheme not in ("interleaved", "block_partitioned"):
            raise ConfigurationError(f"rule {r.region or hex(r.base)}: unknown scheme {r.scheme!r}")
        if r.scheme == "interleaved" and (r.grain < WORD or r.grain & (r.grain - 1)):
            raise ConfigurationError(f"rule {r.region or hex(r.base)}: grain {r.grain} is not a power of two >= 8")
    for a, b in zip(ordered, ordered[1:]):
        if b.base < a.limit:
            raise ConfigurationError(
                f"overlapping rules {a.region or hex(a.base)} and {b.region or hex(b.base)}")
    offsets: List[Dict[int, int]] = []
    used: Dict[int, int] = {}
    for r in ordered:
        per = AddressTranslationTable._per_ctrl(r)
        off = {}
        for c in r.controllers:
            off[c] = used.get(c, 0)
            used[c] = off[c] + per
        offsets.append(off)
    if controller_capacity is not None:
        for c, n in used.items():
            if n > controller_capacity:
                raise ConfigurationError(f"controller {c} needs {n} bytes, capacity is {controller_capacity}")
    return AddressTranslationTable(ordered, offsets)


def translate(att: AddressTranslationTable, addr: int) -> Tuple[int, int]:
    return att.translate(addr)


# ---------------------------------------------------------------------------
# Requests


class Access:
    """One request travelling to a controller (or remote scratchpad) and back."""

    __slots__ = ("addr", "size", "kind", "src", "reply", "ctrl", "value", "operands",
                 "result", "issue_time", "queue_delay", "callback", "tag", "cls",
                 "apply", "line_data", "dirty_mask")

    def __init__(self, addr, size, kind, src, reply, callback, tag="", cls="req"):
        self.addr = addr
        self.size = size
        self.kind = kind
        self.src = src
        self.reply = reply
        self.ctrl = -1
        self.value = None
        self.operands = None
        self.result = None
        self.issue_time = 0
        self.queue_delay = 0
        self.callback = callback
        self.tag = tag
        self.cls = cls
        self.apply = None
        self.line_data = None
        self.dirty_mask = 0

    @property
    def remote(self) -> bool:
        return self.ctrl != self.reply


@dataclass
class MemRequest:
    """Public description of a core-side access (see ``MemorySystem.issue_access``)."""
    addr: int
    size: int = 8
    kind: str = "load"          # load | store | atomic-op | dma-element
    cached: bool = False
    origin: Tuple[int, int, int] = (0, 0, 0)    # (block, core, thread)
    value: object = None


# ---------------------------------------------------------------------------
# Components


class Controller:
    """One DRAM controller: pipelined fixed latency plus a bytes/cycle budget, FIFO."""

    def __init__(self, cid: int, system: "MemorySystem"):
        self.cid = cid
        self.system = system
        self.bw = system.mcfg.bandwidth
        self.latency = system.mcfg.dram_latency
        self.free_bytes = 0     # byte-clock: cycle * bw when the data bus frees up
        self.stats = system.engine.ledger.controller(cid)

    def reserve(self, nbytes: int) -> int:
        """Claim bus time for ``nbytes``; return the cycle the data is ready."""
        now_b = self.system.engine.now * self.bw
        start_b = now_b if now_b > self.free_bytes else self.free_bytes
        self.free_bytes = start_b + nbytes
        st = self.stats
        st["busy_cycles"] += nbytes / self.bw
        st["fetched_bytes"] += nbytes
        st["requests"] += 1
        return -(-start_b // self.bw) + self.latency


class Cache:
    """Per-core write-back LRU cache with byte-used masks."""

    class Line:
        __slots__ = ("addr", "data", "used", "dirty", "prefetched", "region")

        def __init__(self, addr, data, region, prefetched=False):
            self.addr = addr
            self.data = data
            self.used = 0
            self.dirty = 0
            self.prefetched = prefetched
            self.region = region

    def __init__(self, cfg: CacheConfig):
        self.capacity = cfg.capacity
        self.ways = cfg.ways
        self.latency = cfg.latency
        self.nsets = cfg.capacity // LINE // cfg.ways
        self.bits = self.nsets.bit_length() - 1
        self.sets: List[OrderedDict] = [OrderedDict() for _ in range(self.nsets)]
        self.mshr: Dict[int, list] = {}
        self.hits = 0
        self.misses = 0

    def index(self, line_addr: int) -> int:
        # XOR-folded set index so power-of-two strides do not pile into one set
        ln = line_addr >> 6
        return (ln ^ (ln >> self.bits) ^ (ln >> (2 * self.bits))) & (self.nsets - 1)

    def lookup(self, line_addr: int):
        s = self.sets[self.index(line_addr)]
        ln = s.get(line_addr)
        if ln is not None:
            s.move_to_end(line_addr)
        return ln

    def insert(self, line: "Cache.Line"):
        s = self.sets[self.index(line.addr)]
        victim = None
        if len(s) >= self.ways:
            _, victim = s.popitem(last=False)
        s[line.addr] = line
        return victim

    def lines(self):
        for s in self.sets:
            yield from s.values()

    def clear(self):
        for s in self.sets:
            s.clear()


def _byte_mask(offset: int, size: int) -> int:
    return ((1 << size) - 1) << offset


class Scratchpad:
    def __init__(self, block: int, cfg: SpadConfig):
        self.block = block
        self.capacity = cfg.capacity
        self.latency = cfg.latency
        self.words: Dict[int, object] = {}
        self.window = SPAD_BASE + block * SPAD_STRIDE

    def check(self, offset: int, size: int, origin=None) -> None:
        if offset < 0 or offset + size > self.capacity:
            raise SimulationFault(f"scratchpad access [{offset}, {offset + size}) outside "
                                  f"block {self.block} window of {self.capacity} bytes", origin)

    def read(self, offset: int):
        return self.words.get(offset & ~7, 0)

    def write(self, offset: int, value) -> None:
        self.words[offset & ~7] = value


# ---------------------------------------------------------------------------
# Functional helpers


def _sub_read(word, addr: int, size: int):
    if size >= WORD:
        return word
    if not isinstance(word, int):
        raise SimulationFault(f"sub-word access of {size} bytes to non-integer word at {addr:#x}")
    shift = (addr & 7) * 8
    return (word >> shift) & ((1 << (8 * size)) - 1)


def _sub_write(word, addr: int, size: int, value):
    if size >= WORD:
        return value
    if not isinstance(word, int) or not isinstance(value, int):
        raise SimulationFault(f"sub-word store of {size} bytes needs integer data at {addr:#x}")
    shift = (addr & 7) * 8
    mask = ((1 << (8 * size)) - 1) << shift
    return (word & ~mask) | ((value << shift) & mask)


def apply_atomic(op: str, old, operands):
    if op == "add":
        return old + operands[0]
    if op == "min":
        return min(old, operands[0])
    if op == "max":
        return max(old, operands[0])
    if op == "exchange":
        return operands[0]
    if op == "cas":
        expected, new = operands
        return new if old == expected else old
    raise SimulationFault(f"unknown atomic op {op!r}")


# ---------------------------------------------------------------------------


class MemorySystem:
    def __init__(self, engine: Engine, network: Network, att: AddressTranslationTable,
                 mcfg: MemoryConfig, ccfg: CacheConfig, scfg: SpadConfig,
                 blocks: int, cores_per_block: int):
        self.engine = engine
        self.network = network
        self.att = att
        self.mcfg = mcfg
        self.ccfg = ccfg
        self.blocks = blocks
        self.mem: Dict[int, object] = {}
        self.controllers = [Controller(b, self) for b in range(blocks)]
        self.spads = [Scratchpad(b, scfg) for b in range(blocks)]
        self.caches: Dict[Tuple[int, int], Cache] = {
            (b, c): Cache(ccfg) for b in range(blocks) for c in range(cores_per_block)}
        self.local_latency = mcfg.local_latency
        self.prefetch = ccfg.prefetch == "next_line"
        for cid in range(blocks):
            if att.footprint(cid) > mcfg.capacity:
                raise ConfigurationError(
                    f"controller {cid} footprint {att.footprint(cid)} exceeds capacity {mcfg.capacity}")

    # -- functional access (no timing) -------------------------------------
    def peek(self, addr: int):
        return self.mem.get(addr & ~7, 0)

    def poke(self, addr: int, value) -> None:
        self.mem[addr & ~7] = value

    def poke_array(self, base: int, values) -> None:
        mem = self.mem
        for i, v in enumerate(values):
            mem[base + 8 * i] = v

    def peek_array(self, base: int, n: int) -> list:
        mem = self.mem
        return [mem.get(base + 8 * i, 0) for i in range(n)]

    # -- controller path ---------------------------------------------------
    def send(self, acc: Access) -> None:
        """Route ``acc`` from its source block to the owning controller."""
        att = self.att
        addr = acc.addr
        if addr >= SPAD_BASE:
            blk = (addr - SPAD_BASE) // SPAD_STRIDE
            if not 0 <= blk < self.blocks:
                raise SimulationFault(f"unmapped address {addr:#x}", acc.src)
            acc.ctrl = blk
        else:
            acc.ctrl = att.translate(addr, acc.src)[0]
        acc.issue_time = self.engine.now
        ledger = self.engine.ledger
        if acc.kind not in ("writeback",):
            ledger.mem_ops += 1
            if acc.ctrl != acc.reply:
                ledger.remote_mem_ops += 1
        t = self.engine.now + self.local_latency
        if acc.ctrl == acc.src:
            self.engine.at(t, self._arrive, acc, f"mc{acc.ctrl}", acc.kind)
        else:
            kind = acc.kind
            payload = 0
            if kind in ("store", "atomic"):
                payload = 8 if kind == "store" or acc.operands is None else 8 * len(acc.operands)
            elif kind == "writeback":
                payload = LINE
            elif kind == "qop":
                payload = 8
            pkt = Packet(acc.src, acc.ctrl, acc.cls, payload, acc.tag + "_req" if acc.tag else "")
            self.network.send(pkt, t, self._arrive_pkt, (acc, pkt))

    def _arrive_pkt(self, arg) -> None:
        acc, pkt = arg
        acc.queue_delay += pkt.queue_delay
        self._arrive(acc)

    def _arrive(self, acc: Access) -> None:
        kind = acc.kind
        addr = acc.addr
        if addr >= SPAD_BASE:
            return self._spad_remote(acc)
        ctrl = self.controllers[acc.ctrl]
        mem = self.mem
        stats = ctrl.stats
        if kind == "load":
            charged = acc.size if acc.size > WORD else WORD
            ready = ctrl.reserve(charged)
            stats["useful_bytes"] += acc.size
            acc.result = _sub_read(mem.get(addr & ~7, 0), addr, acc.size)
            payload = WORD
        elif kind == "fill":
            ready = ctrl.reserve(LINE)
            acc.line_data = [mem.get(addr + 8 * i, 0) for i in range(8)]
            payload = LINE
        elif kind == "store":
            ready = ctrl.reserve(WORD)
            stats["useful_bytes"] += acc.size
            w = addr & ~7
            mem[w] = _sub_write(mem.get(w, 0), addr, acc.size, acc.value)
            payload = 0
        elif kind == "writeback":
            ready = ctrl.reserve(LINE)
            stats["useful_bytes"] += bin(acc.dirty_mask).count("1")
            for i, v in enumerate(acc.line_data):
                if (acc.dirty_mask >> (8 * i)) & 0xFF:
                    mem[addr + 8 * i] = v
            payload = 0
        elif kind == "atomic":
            ready = ctrl.reserve(2 * WORD)
            stats["useful_bytes"] += 2 * WORD
            old = mem.get(addr, 0)
            mem[addr] = apply_atomic(acc.value, old, acc.operands)
            acc.result = old
            payload = WORD
        elif kind == "qop":
            nbytes = acc.size
            ready = ctrl.reserve(nbytes)
            stats["useful_bytes"] += nbytes
            acc.result = acc.apply(mem)
            payload = WORD
        else:
            raise SimulationFault(f"unknown access kind {kind!r}")
        self._respond(acc, ready, payload)

    def _respond(self, acc: Access, ready: int, payload: int) -> None:
        if acc.reply == acc.ctrl:
            if acc.tag:
                self.engine.ledger.delivered_payload[(acc.reply, acc.tag)] += payload
            self.engine.at(ready + self.local_latency, acc.callback, acc, f"blk{acc.reply}", "complete")
        else:
            self.engine.at(ready, self._inject_response, (acc, payload), f"mc{acc.ctrl}", "respond")

    def _inject_response(self, arg) -> None:
        acc, payload = arg
        cls = "resp" if acc.cls == "req" else acc.cls
        pkt = Packet(acc.ctrl, acc.reply, cls, payload, acc.tag)
        self.network.send(pkt, self.engine.now, self._response_arrived, (acc, pkt))

    def _response_arrived(self, arg) -> None:
        acc, pkt = arg
        acc.queue_delay += pkt.queue_delay
        self.engine.at(self.engine.now + self.local_latency, acc.callback, acc, f"blk{acc.reply}", "complete")

    def _spad_remote(self, acc: Access) -> None:
        spad = self.spads[acc.ctrl]
        offset = acc.addr - spad.window
        spad.check(offset, acc.size, acc.src)
        if acc.kind == "load":
            acc.result = spad.read(offset)
            payload = WORD
        elif acc.kind == "store":
            spad.write(offset, acc.value)
            payload = 0
        else:
            raise SimulationFault(f"{acc.kind} not supported on scratchpad")
        self._respond(acc, self.engine.now + spad.latency, payload)

    # -- core-facing API ---------------------------------------------------
    def issue_access(self, req: MemRequest, callback: Callable[[Access], None]) -> None:
        """Issue a core-side access; ``callback(acc)`` fires at completion with ``acc.result``."""
        block, core, _ = req.origin
        if req.size not in SIZES:
            raise SimulationFault(f"invalid access size {req.size}", req.origin)
        if req.addr % req.size:
            raise SimulationFault(f"misaligned {req.size}-byte access at {req.addr:#x}", req.origin)
        if req.kind == "load":
            if req.cached:
                self.cached_access(block, core, req.addr, req.size, False, None, callback)
            else:
                acc = Access(req.addr, req.size, "load", block, block, callback)
                self.send(acc)
        elif req.kind == "store":
            if req.cached:
                self.cached_access(block, core, req.addr, req.size, True, req.value, callback)
            else:
                acc = Access(req.addr, req.size, "store", block, block, callback)
                acc.value = req.value
                self.send(acc)
        else:
            raise SimulationFault(f"issue_access does not handle kind {req.kind!r}", req.origin)

    def cached_access(self, block: int, core: int, addr: int, size: int, is_store: bool,
                      value, callback) -> None:
        cache = self.caches[(block, core)]
        line_addr = addr & ~63
        off = addr & 63
        ln = cache.lookup(line_addr)
        if ln is not None:
            cache.hits += 1
            if ln.prefetched and not ln.used and self.prefetch:
                self._prefetch(block, core, line_addr + LINE)
            result = self._touch(ln, off, size, is_store, value)
            acc = Access(addr, size, "hit", block, block, callback)
            acc.ctrl = block
            acc.result = result
            acc.issue_time = self.engine.now
            self.engine.schedule(cache.latency, callback, acc, f"dc{block}.{core}", "hit")
            return
        cache.misses += 1
        waiters = cache.mshr.get(line_addr)
        entry = (off, size, is_store, value, callback, addr)
        if waiters is not None:
            waiters.append(entry)
            return
        cache.mshr[line_addr] = [entry]
        self._fill(block, core, line_addr, False)
        if self.prefetch:
            self._prefetch(block, core, line_addr + LINE)

    def _region_of(self, line_addr: int):
        rule = self.att.rule_for(line_addr)
        return rule

    def _fill(self, block: int, core: int, line_addr: int, prefetch: bool) -> None:
        acc = Access(line_addr, LINE, "fill", block, block, self._fill_done)
        acc.value = (core, prefetch)
        self.send(acc)

    def _prefetch(self, block: int, core: int, line_addr: int) -> None:
        cache = self.caches[(block, core)]
        if line_addr in cache.mshr or cache.lookup(line_addr) is not None:
            return
        if self.att.rule_index(line_addr) < 0:
            return
        cache.mshr[line_addr] = []
        self._fill(block, core, line_addr, True)

    def _fill_done(self, acc: Access) -> None:
        core, prefetched = acc.value
        block = acc.src
        cache = self.caches[(block, core)]
        rule = self.att.rule_for(acc.addr)
        ln = Cache.Line(acc.addr, acc.line_data, rule.region if rule else "", prefetched)
        victim = cache.insert(ln)
        if victim is not None:
            self._evict(block, victim, timed=True)
        waiters = cache.mshr.pop(acc.addr)
        for off, size, is_store, value, callback, addr in waiters:
            res = Access(addr, size, "fill", block, block, callback)
            res.ctrl = acc.ctrl
            res.issue_time = acc.issue_time
            res.queue_delay = acc.queue_delay
            res.result = self._touch(ln, off, size, is_store, value)
            callback(res)

    @staticmethod
    def _touch(ln, off: int, size: int, is_store: bool, value):
        m = _byte_mask(off, size)
        ln.used |= m
        i = off >> 3
        if is_store:
            ln.dirty |= m
            ln.data[i] = _sub_write(ln.data[i], off, size, value)
            return None
        return _sub_read(ln.data[i], off, size)

    def _evict(self, block: int, ln, timed: bool) -> None:
        ledger = self.engine.ledger
        ctrl = self.att.translate(ln.addr)[0]
        ledger.harvest_line(ln.region, bin(ln.used).count("1"))
        stats = ledger.controller(ctrl)
        stats["useful_bytes"] += bin(ln.used & ~ln.dirty).count("1")
        if ln.dirty:
            if timed:
                acc = Access(ln.addr, LINE, "writeback", block, block, _ignore)
                acc.line_data = ln.data
                acc.dirty_mask = ln.dirty
                self.send(acc)
            else:
                for i, v in enumerate(ln.data):
                    if (ln.dirty >> (8 * i)) & 0xFF:
                        self.mem[ln.addr + 8 * i] = v
                stats["fetched_bytes"] += LINE
                stats["busy_cycles"] += LINE / self.mcfg.bandwidth
                stats["useful_bytes"] += bin(ln.dirty).count("1")

    def flush_core(self, block: int, core: int, callback: Callable[[int], None]) -> int:
        """Write back and invalidate one core's cache; ``callback`` fires when all acks return."""
        cache = self.caches[(block, core)]
        dirty = []
        for ln in list(cache.lines()):
            self.engine.ledger.harvest_line(ln.region, bin(ln.used).count("1"))
            ctrl = self.att.translate(ln.addr)[0]
            self.engine.ledger.controller(ctrl)["useful_bytes"] += bin(ln.used & ~ln.dirty).count("1")
            if ln.dirty:
                dirty.append(ln)
        cache.clear()
        if not dirty:
            self.engine.schedule(cache.latency, callback, 0)
            return 0
        state = {"left": len(dirty)}

        def ack(_acc):
            state["left"] -= 1
            if state["left"] == 0:
                callback(len(dirty))

        for ln in dirty:
            acc = Access(ln.addr, LINE, "writeback", block, block, ack)
            acc.line_data = ln.data
            acc.dirty_mask = ln.dirty
            self.send(acc)
        return len(dirty)

    def harvest_all(self) -> None:
        """End-of-run: evict every cached line untimed so masks reach the histogram."""
        for (block, _core), cache in self.caches.items():
            for ln in list(cache.lines()):
                self._evict(block, ln, timed=False)
            cache.clear()

    # -- scratchpad --------------------------------------------------------
    def spad_access(self, block: int, offset: int, size: int, kind: str, callback,
                    value=None, origin_block: Optional[int] = None) -> None:
        """Access ``block``'s scratchpad from ``origin_block`` (default: the owner)."""
        spad = self.spads[block]
        spad.check(offset, size, origin_block)
        origin = block if origin_block is None else origin_block
        if origin == block:
            acc = Access(spad.window + offset, size, "spad", origin, origin, callback)
            acc.ctrl = block
            acc.issue_time = self.engine.now
            if kind == "load":
                acc.result = spad.read(offset)
            elif kind == "store":
                spad.write(offset, value)
            else:
                raise SimulationFault(f"bad scratchpad op {kind!r}")
            self.engine.schedule(spad.latency, callback, acc, f"spad{block}", kind)
            return
        acc = Access(spad.window + offset, size, kind, origin, origin, callback)
        acc.value = value
        self.send(acc)


def _ignore(_acc) -> None:
    return None
