"""Per-block offload engines: DMA, queues, collectives and remote atomics.

Every directive returns an :class:`EngineHandle` to the issuing thread right
away.  Completion is signalled by ``EngineHandle.complete`` which wakes any
thread blocked in ``wait``.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .config import EngineConfig
from .kernel import SimulationFault
from .memory import SPAD_BASE, Access, ATOMIC_OPS
from .network import Packet


class EngineHandle:
    __slots__ = ("id", "kind", "issue_time", "completion_time", "_result", "waiters", "owner")

    def __init__(self, hid: int, kind: str, issue_time: int, owner: int = -1):
        self.id = hid
        self.kind = kind
        self.issue_time = issue_time
        self.completion_time: Optional[int] = None
        self._result = None
        self.waiters: list = []
        self.owner = owner

    @property
    def done(self) -> bool:
        return self.completion_time is not None

    @property
    def result(self):
        if self.completion_time is None:
            raise SimulationFault(f"result of handle {self.id} read before completion")
        return self._result

    def __repr__(self):
        state = f"done@{self.completion_time}" if self.done else "pending"
        return f"EngineHandle({self.id}, {self.kind}, {state})"


@dataclass(frozen=True)
class SharedQueue:
    """FIFO of 8-byte elements; head and tail live in memory at ``base`` and ``base + 8``."""
    base: int
    capacity: int

    def slot(self, i: int) -> int:
        return self.base + 16 + 8 * (i % self.capacity)

    @staticmethod
    def footprint_words(capacity: int) -> int:
        return capacity + 2


@dataclass(frozen=True)
class QueueResult:
    status: str             # ok | empty | full
    value: Any = None


@dataclass(frozen=True)
class Group:
    gid: int
    members: Tuple[int, ...]


@dataclass
class _CollectiveEpoch:
    op: Optional[str]
    arrived: Dict[int, Tuple[EngineHandle, Any]] = field(default_factory=dict)
    block_pending: Dict[int, int] = field(default_factory=dict)
    ready: set = field(default_factory=set)
    partial: Dict[int, Any] = field(default_factory=dict)
    reported: Dict[int, Dict[int, Any]] = field(default_factory=dict)


class _DmaJob:
    __slots__ = ("handle", "kind", "block", "count", "next_i", "remaining", "src", "dst",
                 "stride", "index_addr", "dest", "proxies", "started", "buffer", "write_next")

    def __init__(self, handle, kind, block, count):
        self.handle = handle
        self.kind = kind
        self.block = block
        self.count = count
        self.next_i = 0
        self.remaining = count
        self.src = 0
        self.dst = 0
        self.stride = 8
        self.index_addr = 0
        self.dest = 0
        self.proxies: Dict[int, bool] = {}
        self.started = False
        self.buffer: Dict[int, Any] = {}
        self.write_next = 0


class _DmaEngine:
    def __init__(self, owner: "Engines", block: int):
        self.owner = owner
        self.block = block
        self.jobs: deque = deque()
        self.outstanding = 0
        self.pump_at: Optional[int] = None


def _combine(op: str, a, b):
    if op == "add":
        return a + b
    if op == "min":
        return a if a <= b else b
    if op == "max":
        return a if a >= b else b
    raise SimulationFault(f"unknown reduction {op!r}")


class Engines:
    def __init__(self, machine, cfg: EngineConfig):
        self.m = machine
        self.engine = machine.engine
        self.cfg = cfg
        self._ids = itertools.count()
        self.handles: Dict[int, EngineHandle] = {}
        self.dma = [_DmaEngine(self, b) for b in range(machine.blocks)]
        self.groups: Dict[int, Group] = {}
        self._epochs: Dict[Tuple[int, int], _CollectiveEpoch] = {}
        self._thread_epoch: Dict[Tuple[int, int], int] = {}
        self._pending_handle: Dict[Tuple[int, int], EngineHandle] = {}

    # -- handles -------------------------------------------------------------
    def new_handle(self, kind: str, owner: int = -1) -> EngineHandle:
        h = EngineHandle(next(self._ids), kind, self.engine.now, owner)
        self.handles[h.id] = h
        return h

    def lookup(self, handle, th=None) -> EngineHandle:
        if not isinstance(handle, EngineHandle) or self.handles.get(handle.id) is not handle:
            raise SimulationFault(f"wait on unknown handle {handle!r}", getattr(th, "tid", None))
        return handle

    def complete(self, h: EngineHandle, result=None) -> None:
        if h.completion_time is not None:
            raise SimulationFault(f"handle {h.id} completed twice")
        h.completion_time = self.engine.now
        h._result = result
        waiters, h.waiters = h.waiters, []
        for th in waiters:
            th.core_obj.handle_completed(th, h)

    def submit(self, th, op) -> EngineHandle:
        kind = op.kind
        if kind == "dma_gather":
            base, index_addr, count, dest = op.args
            return self.dma_gather(th.block, base, index_addr, count, dest, owner=th.tid)
        if kind == "dma_transfer":
            tkind, src, dst, count, aux = op.args
            return self.dma_transfer(th.block, tkind, src, dst, count, aux, owner=th.tid)
        if kind == "remote_atomic":
            aop, operands = op.args
            return self.remote_atomic(th.block, aop, op.addr, *operands, owner=th.tid)
        if kind == "queue_op":
            qkind, queue = op.args
            return self.queue_op(th.block, qkind, queue, op.value, owner=th.tid)
        if kind == "barrier":
            return self.collective(th, op.args, None, None)
        if kind == "reduce":
            group, rop = op.args
            return self.collective(th, group, rop, op.value)
        raise SimulationFault(f"not an engine op: {kind}", th.tid)

    # -- DMA -------------------------------------------------------------------
    def dma_gather(self, block: int, base: int, index_addr: int, count: int, dest: int,
                   owner: int = -1) -> EngineHandle:
        """SPAD[dest + 8i] = mem[base + 8 * mem[index_addr + 8i]] for i < count."""
        h = self.new_handle("dma_gather", owner)
        if count < 0:
            raise SimulationFault("negative gather count", owner)
        self.m.memory.spads[block].check(dest, 8 * count, owner)
        if count == 0:
            self.complete(h, 0)
            return h
        job = _DmaJob(h, "gather", block, count)
        job.src = base
        job.index_addr = index_addr
        job.dest = dest
        att = self.m.memory.att
        for a in range(index_addr & ~63, index_addr + 8 * count, 64):
            p = att.translate(max(a, index_addr), owner)[0]
            job.proxies.setdefault(p, p == block)
        self._start(job)
        return h

    def dma_transfer(self, block: int, kind: str, src: int, dst: int, count: int, aux: int,
                     owner: int = -1) -> EngineHandle:
        """copy_strided: dst[i] = src[i * aux] (aux = stride in bytes);
        scatter: dst[8 * mem[aux + 8i]] = src[i] (aux = index list address)."""
        if kind not in ("copy_strided", "scatter"):
            raise SimulationFault(f"unknown dma_transfer kind {kind!r}", owner)
        h = self.new_handle("dma_" + kind, owner)
        if count < 0:
            raise SimulationFault("negative transfer count", owner)
        if kind == "copy_strided":
            if aux % 8:
                raise SimulationFault(f"stride {aux} not a multiple of 8", owner)
            lo_s, hi_s = src, src + (count - 1) * aux + 8
            if count and not (dst + 8 * count <= lo_s or hi_s <= dst):
                raise SimulationFault("overlapping source and destination in strided copy", owner)
        if count == 0:
            self.complete(h, 0)
            return h
        job = _DmaJob(h, kind, block, count)
        job.src = src
        job.dst = dst
        job.stride = aux
        job.index_addr = aux
        job.proxies[block] = True
        self._start(job)
        return h

    def _start(self, job: _DmaJob) -> None:
        eng = self.dma[job.block]
        remote = [p for p, ok in job.proxies.items() if not ok]
        if not remote:
            job.started = True
        for p in remote:
            pkt = Packet(job.block, p, "dma", 24, "dma_cmd")
            self.m.network.send(pkt, self.engine.now + self.m.memory.local_latency,
                                self._cmd_arrived, (job, p))
        eng.jobs.append(job)
        self._pump_soon(eng, self.engine.now)

    def _cmd_arrived(self, arg) -> None:
        job, p = arg
        job.proxies[p] = True
        if all(job.proxies.values()):
            job.started = True
            self._pump_soon(self.dma[job.block], self.engine.now)

    def _pump_soon(self, eng: _DmaEngine, t: int) -> None:
        if eng.pump_at is not None and eng.pump_at <= t:
            return
        eng.pump_at = t
        self.engine.at(t, self._pump, eng, f"dma{eng.block}", "pump")

    def _pump(self, eng: _DmaEngine) -> None:
        t = self.engine.now
        if eng.pump_at != t:
            return
        eng.pump_at = None
        budget = self.cfg.dma_issue_width
        limit = self.cfg.dma_outstanding
        jobs = eng.jobs
        blocked = False
        while budget and eng.outstanding < limit and jobs:
            job = None
            for j in jobs:
                if j.started:
                    job = j
                    break
            if job is None:
                blocked = True
                break
            i = job.next_i
            job.next_i += 1
            if job.next_i == job.count:
                jobs.remove(job)
            eng.outstanding += 1
            budget -= 1
            self._issue_element(job, i)
        if jobs and not blocked and eng.outstanding < limit:
            self._pump_soon(eng, t + 1)

    def _issue_element(self, job: _DmaJob, i: int) -> None:
        mem = self.m.memory
        if job.kind == "gather" or job.kind == "scatter":
            iaddr = job.index_addr + 8 * i
            proxy = mem.att.translate(iaddr, job.handle.owner)[0] if job.kind == "gather" else job.block
            acc = Access(iaddr, 8, "load", proxy, proxy, self._index_done, "dma_idx", "dma")
            acc.value = (job, i)
            mem.send(acc)
        else:
            acc = Access(job.src + i * job.stride, 8, "load", job.block, job.block,
                         self._copy_read_done, "dma_read", "dma")
            acc.value = (job, i)
            mem.send(acc)

    def _index_done(self, acc: Access) -> None:
        job, i = acc.value
        idx = acc.result
        mem = self.m.memory
        if job.kind == "gather":
            eaddr = job.src + 8 * idx
            el = Access(eaddr, 8, "load", acc.reply, job.block, self._gather_elem_done, "dma_elem", "dma")
            el.value = (job, i)
            mem.send(el)
        else:
            # scatter: read the source element, then write it in index order
            job.buffer[i] = ("addr", job.dst + 8 * idx)
            rd = Access(job.src + 8 * i, 8, "load", job.block, job.block, self._scatter_read_done,
                        "dma_read", "dma")
            rd.value = (job, i)
            mem.send(rd)

    def _gather_elem_done(self, acc: Access) -> None:
        job, i = acc.value
        self.m.memory.spads[job.block].write(job.dest + 8 * i, acc.result)
        self._element_retired(job)

    def _copy_read_done(self, acc: Access) -> None:
        job, i = acc.value
        job.buffer[i] = (job.dst + 8 * i, acc.result)
        self._drain_writes(job)

    def _scatter_read_done(self, acc: Access) -> None:
        job, i = acc.value
        job.buffer[i] = (job.buffer[i][1], acc.result)
        self._drain_writes(job)

    def _drain_writes(self, job: _DmaJob) -> None:
        # writes leave in element order so repeated targets resolve deterministically
        mem = self.m.memory
        while job.write_next in job.buffer and job.buffer[job.write_next][0] != "addr":
            addr, value = job.buffer.pop(job.write_next)
            job.write_next += 1
            wr = Access(addr, 8, "store", job.block, job.block, self._write_done, "dma_write", "dma")
            wr.value = value
            wr.operands = (job,)
            if addr >= SPAD_BASE:
                pass
            mem.send(wr)

    def _write_done(self, acc: Access) -> None:
        self._element_retired(acc.operands[0])

    def _element_retired(self, job: _DmaJob) -> None:
        eng = self.dma[job.block]
        eng.outstanding -= 1
        job.remaining -= 1
        if job.remaining == 0:
            self.complete(job.handle, job.count)
        if eng.jobs:
            self._pump_soon(eng, self.engine.now)

    # -- remote atomics ------------------------------------------------------
    def remote_atomic(self, block: int, op: str, addr: int, *operands, owner: int = -1) -> EngineHandle:
        if op not in ATOMIC_OPS:
            raise SimulationFault(f"unknown atomic op {op!r}", owner)
        if addr % 8:
            raise SimulationFault(f"atomic to unaligned address {addr:#x}", owner)
        need = 2 if op == "cas" else 1
        if len(operands) != need:
            raise SimulationFault(f"atomic {op} takes {need} operand(s)", owner)
        rule = self.m.memory.att.rule_for(addr)
        if rule is None:
            raise SimulationFault(f"unmapped address {addr:#x}", owner)
        if rule.cached:
            raise SimulationFault(f"atomic to cached region {rule.region!r}", owner)
        h = self.new_handle("atomic", owner)
        acc = Access(addr, 8, "atomic", block, block, self._atomic_done, "atomic", "atomic")
        acc.value = op
        acc.operands = tuple(operands)
        acc.apply = h
        self.m.memory.send(acc)
        return h

    def _atomic_done(self, acc: Access) -> None:
        self.complete(acc.apply, acc.result)

    # -- queues --------------------------------------------------------------
    def init_queue(self, queue: SharedQueue) -> None:
        mem = self.m.memory
        mem.poke(queue.base, 0)
        mem.poke(queue.base + 8, 0)

    def queue_op(self, block: int, kind: str, queue: SharedQueue, value=None, owner: int = -1) -> EngineHandle:
        if kind not in ("enqueue", "dequeue"):
            raise SimulationFault(f"unknown queue op {kind!r}", owner)
        if not isinstance(queue, SharedQueue) or self.m.memory.att.rule_for(queue.base) is None:
            raise SimulationFault(f"unmapped queue descriptor {queue!r}", owner)
        h = self.new_handle("queue", owner)

        def apply(mem, q=queue, kind=kind, value=value):
            head = mem.get(q.base, 0)
            tail = mem.get(q.base + 8, 0)
            if kind == "enqueue":
                if tail - head >= q.capacity:
                    return QueueResult("full")
                mem[q.slot(tail)] = value
                mem[q.base + 8] = tail + 1
                return QueueResult("ok", value)
            if tail == head:
                return QueueResult("empty")
            v = mem.get(q.slot(head), 0)
            mem[q.base] = head + 1
            return QueueResult("ok", v)

        acc = Access(queue.base, self.cfg.queue_access_bytes, "qop", block, block,
                     self._queue_done, "queue", "req")
        acc.apply = apply
        acc.operands = (h,)
        self.m.memory.send(acc)
        return h

    def _queue_done(self, acc: Access) -> None:
        self.complete(acc.operands[0], acc.result)

    # -- collectives ---------------------------------------------------------
    def make_group(self, members) -> Group:
        g = Group(len(self.groups), tuple(sorted(members)))
        if not g.members:
            raise SimulationFault("empty collective group")
        self.groups[g.gid] = g
        return g

    def _tree(self, group: Group):
        blocks = sorted({self.m.thread_block(t) for t in group.members})
        fan = self.cfg.collective_fanin
        parent = {}
        children: Dict[int, List[int]] = {b: [] for b in blocks}
        for i, b in enumerate(blocks):
            if i:
                p = blocks[(i - 1) // fan]
                parent[b] = p
                children[p].append(b)
        return blocks, parent, children

    def collective(self, th, group: Group, op: Optional[str], value) -> EngineHandle:
        if group.gid not in self.groups or self.groups[group.gid] is not group:
            raise SimulationFault(f"unknown collective group {group!r}", th.tid)
        if th.tid not in group.members:
            raise SimulationFault(f"thread {th.tid} is not in group {group.gid}", th.tid)
        key = (group.gid, th.tid)
        prev = self._pending_handle.get(key)
        if prev is not None and not prev.done:
            raise SimulationFault(f"thread {th.tid} arrived twice at group {group.gid} before release", th.tid)
        epoch_no = self._thread_epoch.get(key, 0)
        self._thread_epoch[key] = epoch_no + 1
        ekey = (group.gid, epoch_no)
        ep = self._epochs.get(ekey)
        if ep is None:
            ep = _CollectiveEpoch(op)
            for t in group.members:
                b = self.m.thread_block(t)
                ep.block_pending[b] = ep.block_pending.get(b, 0) + 1
            self._epochs[ekey] = ep
        elif ep.op != op:
            raise SimulationFault(f"mismatched collective op in group {group.gid}: {ep.op} vs {op}", th.tid)
        h = self.new_handle("reduce" if op else "barrier", th.tid)
        self._pending_handle[key] = h
        ep.arrived[th.tid] = (h, value)
        b = th.block
        ep.block_pending[b] -= 1
        if ep.block_pending[b] == 0:
            self.engine.schedule(self.cfg.collective_latency, self._block_ready, (group, ekey, b),
                                 f"coll{b}", "ready")
        return h

    def _block_ready(self, arg) -> None:
        group, ekey, b = arg
        ep = self._epochs[ekey]
        ep.ready.add(b)
        self._try_up(group, ekey, b)

    def _try_up(self, group: Group, ekey, b: int) -> None:
        ep = self._epochs[ekey]
        blocks, parent, children = self._tree(group)
        if b not in ep.ready:
            return
        got = ep.reported.get(b, {})
        if len(got) < len(children[b]):
            return
        acc = None
        if ep.op is not None:
            for tid in sorted(ep.arrived):
                if self.m.thread_block(tid) == b:
                    v = ep.arrived[tid][1]
                    acc = v if acc is None else _combine(ep.op, acc, v)
            for c in children[b]:
                acc = _combine(ep.op, acc, got[c])
        if b in parent:
            pkt = Packet(b, parent[b], "collective", 8, "collective")
            self.m.network.send(pkt, self.engine.now, self._reported, (group, ekey, b, parent[b], acc))
        else:
            self._release(group, ekey, b, acc)

    def _reported(self, arg) -> None:
        group, ekey, child, p, acc = arg
        ep = self._epochs[ekey]
        ep.reported.setdefault(p, {})[child] = acc
        self._try_up(group, ekey, p)

    def _release(self, group: Group, ekey, b: int, result) -> None:
        ep = self._epochs[ekey]
        blocks, parent, children = self._tree(group)
        self.engine.schedule(self.cfg.collective_latency, self._release_local, (ekey, b, result),
                             f"coll{b}", "release")
        for c in children[b]:
            pkt = Packet(b, c, "collective", 8, "collective")
            self.m.network.send(pkt, self.engine.now, self._release_arrived, (group, ekey, c, result))

    def _release_arrived(self, arg) -> None:
        group, ekey, c, result = arg
        self._release(group, ekey, c, result)

    def _release_local(self, arg) -> None:
        ekey, b, result = arg
        ep = self._epochs[ekey]
        for tid in sorted(ep.arrived):
            if self.m.thread_block(tid) == b:
                h = ep.arrived[tid][0]
                self.complete(h, result)
        ep.block_pending[b] = -1
        if all(v == -1 for v in ep.block_pending.values()):
            del self._epochs[ekey]
