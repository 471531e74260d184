"""Core pipelines: the round-robin barrel (MTC) and the stall-on-use in-order core (STC).

Timing conventions, in cycles:

* an instruction issued at ``t`` costs one ``issue`` cycle for its thread;
* on an MTC a thread whose op completes at ``c`` may issue again at ``c + 1``
  (ALU ops complete in their issue cycle, so back-to-back issue is possible);
* on an STC a consumer of a load that completes at ``c`` may issue at ``c``.

Per-thread cycles are booked lazily: every state change closes the interval
since the previous change and charges it to one category, so the categories
of a finished thread always sum to its lifetime.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

from .kernel import CATEGORIES, SimulationFault
from .memory import Access, MemRequest

READY, BLOCKED_MEM, BLOCKED_HANDLE, BLOCKED_STALL, DONE = range(5)
_STATE_NAMES = ("ready", "blocked-on-memory", "blocked-on-handle", "stalled", "done")

ISSUE, MEM_LOCAL, MEM_REMOTE, ENGINE_WAIT, SYNC_WAIT, BACKPRESSURE = range(6)


@dataclass
class BlockConfig:
    mtc_count: int = 4
    threads_per_mtc: int = 16
    stc_count: int = 1
    stc_scoreboard_depth: int = 8


class ThreadContext:
    __slots__ = ("tid", "block", "core", "program", "state", "next_op", "since",
                 "ready_at", "attr", "blocked_cat", "core_obj", "inflight", "wait_handle",
                 "scoreboard", "waiting_on", "label", "slot")

    def __init__(self, tid: int, block: int, core: int, program, label: str = ""):
        self.tid = tid
        self.block = block
        self.core = core
        self.program = program
        self.state = READY
        self.next_op = None
        self.since = 0
        self.ready_at = 0
        self.attr: List[int] = []
        self.blocked_cat = ISSUE
        self.core_obj = None
        self.inflight = 0
        self.wait_handle = None
        self.scoreboard: Dict[str, list] = {}
        self.waiting_on: Optional[str] = None
        self.label = label
        self.slot = 0

    def describe(self) -> str:
        op = self.next_op.kind if self.next_op is not None else "-"
        return (f"thread {self.tid} ({self.label or 'kernel'}) block {self.block} core {self.core}: "
                f"{_STATE_NAMES[self.state]}, next op {op}, since cycle {self.since}")


class _CoreBase:
    resume = 1      # cycles from completion to the earliest dependent issue

    def __init__(self, machine, block: int, index: int, kind: str):
        self.m = machine
        self.engine = machine.engine
        self.block = block
        self.index = index
        self.kind = kind
        self.threads: List[ThreadContext] = []
        self.issued = 0
        self.stalls = [0] * len(CATEGORIES)
        machine.engine.ledger.core_stalls[(block, index)] = self.stalls

    # -- shared thread bookkeeping ------------------------------------------
    def add_thread(self, th: ThreadContext) -> None:
        th.core_obj = self
        th.slot = len(self.threads)
        self.threads.append(th)

    def _advance(self, th: ThreadContext, value, t_ready: int) -> bool:
        """Feed ``value`` to the program; return False (and retire) if it finished."""
        try:
            op = th.program.send(value)
        except StopIteration:
            op = None
        if op is None or op.kind == "halt":
            th.state = DONE
            th.next_op = None
            self.engine.at(t_ready, self._retire, th, f"t{th.tid}", "halt")
            return False
        th.next_op = op
        return True

    def _retire(self, th: ThreadContext) -> None:
        ledger = self.engine.ledger
        ledger.thread_finish[th.tid] = self.engine.now
        self.engine.thread_finished(th.tid, self.engine.now)

    def start_thread(self, th: ThreadContext) -> None:
        ledger = self.engine.ledger
        ledger.add_thread(th.tid, self.engine.now, self.kind)
        th.attr = ledger.cycle_attribution[th.tid]
        th.since = self.engine.now
        th.ready_at = self.engine.now
        self.engine.thread_started(th.tid, th)
        if self._advance(th, None, self.engine.now):
            self.thread_ready(th, self.engine.now)

    def _book_block(self, th: ThreadContext, t_ready: int, cat: int, queue_delay: int = 0) -> None:
        span = t_ready - th.since
        if queue_delay:
            bp = queue_delay if queue_delay < span else span
            th.attr[BACKPRESSURE] += bp
            span -= bp
        th.attr[cat] += span
        th.since = t_ready

    # -- dispatch common to both pipelines ---------------------------------
    def dispatch(self, th: ThreadContext, op, t: int) -> None:
        """Route ``op`` to memory or engines.  Returns after arranging the wake-up."""
        m = self.m
        kind = op.kind
        if kind == "load" or kind == "store":
            th.state = BLOCKED_MEM
            th.inflight += 1
            if th.inflight > 1 and self.kind == "mtc":
                raise SimulationFault("more than one in-flight instruction on an MTC thread", th.tid)
            req = MemRequest(op.addr, op.size, kind, op.cached, (th.block, th.core, th.tid), op.value)
            m.memory.issue_access(req, lambda acc, th=th: self.mem_done(th, acc))
        elif kind == "spad_load" or kind == "spad_store":
            th.state = BLOCKED_MEM
            th.inflight += 1
            blk = th.block if op.args is None else op.args
            m.memory.spad_access(blk, op.addr, op.size, "load" if kind == "spad_load" else "store",
                                 lambda acc, th=th: self.mem_done(th, acc), op.value, th.block)
        elif kind == "poll":
            self.simple_done(th, t, op.args.done)
        elif kind == "wait":
            h = m.engines.lookup(op.args, th)
            if h.done:
                self.simple_done(th, t, h.result)
            else:
                th.state = BLOCKED_HANDLE
                th.wait_handle = h
                th.blocked_cat = SYNC_WAIT if h.kind in ("barrier", "reduce") else ENGINE_WAIT
                h.waiters.append(th)
        elif kind == "flush":
            th.state = BLOCKED_MEM
            th.blocked_cat = MEM_LOCAL
            m.memory.flush_core(th.block, th.core, lambda _n, th=th: self.flush_done(th))
        elif kind in ("dma_gather", "dma_transfer", "remote_atomic", "queue_op", "barrier", "reduce"):
            h = m.engines.submit(th, op)
            self.simple_done(th, t, h)
        elif kind == "alu" or kind == "branch":
            self.simple_done(th, t, None)
        else:
            raise SimulationFault(f"unknown op kind {kind!r}", th.tid)

    def handle_completed(self, th: ThreadContext, handle) -> None:
        """Called by the engines when a handle ``th`` is waiting on completes."""
        t = self.engine.now + self.resume
        self._book_block(th, t, th.blocked_cat)
        th.wait_handle = None
        th.state = READY
        if self._advance(th, handle.result, t):
            self.thread_ready(th, t)

    def flush_done(self, th: ThreadContext) -> None:
        t = self.engine.now + self.resume
        self._book_block(th, t, MEM_LOCAL)
        th.state = READY
        if self._advance(th, None, t):
            self.thread_ready(th, t)


class MTCore(_CoreBase):
    """Barrel pipeline: one issue per cycle, round-robin over ready threads."""

    def __init__(self, machine, block: int, index: int):
        super().__init__(machine, block, index, "mtc")
        self.rr = -1
        self.ready_mask = 0
        self.soon: List[ThreadContext] = []     # ready from next cycle on
        self.next_step: Optional[int] = None
        self.idle_since: Optional[int] = 0
        self.last_issue = -1

    def thread_ready(self, th: ThreadContext, t_ready: int) -> None:
        th.state = READY
        th.ready_at = t_ready
        self.soon.append(th)
        self._wake(t_ready)

    def _wake(self, t: int) -> None:
        ns = self.next_step
        if ns is not None and ns <= t:
            return
        now = self.engine.now
        if t < now:
            t = now
        self.next_step = t
        self.engine.at(t, self.step, t, f"mtc{self.block}.{self.index}", "step")

    def step(self, t: int) -> None:
        if self.next_step != t:
            return
        self.next_step = None
        if self.soon:
            keep = []
            mask = self.ready_mask
            for th in self.soon:
                if th.ready_at <= t:
                    mask |= 1 << th.slot
                else:
                    keep.append(th)
            self.ready_mask = mask
            self.soon = keep
        mask = self.ready_mask
        if not mask:
            if self.idle_since is None:
                self.idle_since = t
            if self.soon:
                self._wake(min(th.ready_at for th in self.soon))
            return
        hi = mask >> (self.rr + 1)
        if hi:
            slot = self.rr + 1 + (hi & -hi).bit_length() - 1
        else:
            slot = (mask & -mask).bit_length() - 1
        self.rr = slot
        self.ready_mask = mask & ~(1 << slot)
        th = self.threads[slot]
        if self.idle_since is not None:
            if t > self.idle_since:
                self._book_core_stall(t - self.idle_since)
            self.idle_since = None
        self.issued += 1
        self.last_issue = t
        # issue slot plus any cycles spent ready but not selected
        th.attr[ISSUE] += t - th.since + 1
        th.since = t + 1
        self.engine.ledger.instructions[th.tid] += 1
        op = th.next_op
        self.dispatch(th, op, t)
        if self.ready_mask or self.soon:
            self._wake(t + 1)
        elif self.idle_since is None:
            self.idle_since = t + 1

    def _book_core_stall(self, cycles: int) -> None:
        n = len(self.threads)
        cat = ISSUE
        for k in range(n):
            th = self.threads[(self.rr + 1 + k) % n]
            if th.state != DONE:
                cat = th.blocked_cat if th.state != READY else ISSUE
                break
        self.stalls[cat] += cycles

    # -- completions --------------------------------------------------------
    def simple_done(self, th: ThreadContext, t: int, value) -> None:
        if self._advance(th, value, t + 1):
            self.thread_ready(th, t + 1)

    def mem_done(self, th: ThreadContext, acc: Access) -> None:
        c = self.engine.now
        th.inflight -= 1
        cat = MEM_REMOTE if acc.ctrl != th.block else MEM_LOCAL
        th.blocked_cat = cat
        self._book_block(th, c + 1, cat, acc.queue_delay)
        ledger = self.engine.ledger
        ledger.mem_latency_total += c - acc.issue_time
        ledger.core_mem_ops += 1
        if self._advance(th, acc.result, c + 1):
            self.thread_ready(th, c + 1)

    def dispatch(self, th, op, t):
        if op.kind in ("load", "store", "spad_load", "spad_store"):
            th.blocked_cat = MEM_LOCAL
        super().dispatch(th, op, t)



class STCore(_CoreBase):
    """In-order single-thread core with a load scoreboard (stall-on-use)."""

    resume = 0

    def __init__(self, machine, block: int, index: int, depth: int):
        super().__init__(machine, block, index, "stc")
        self.depth = depth
        self.next_step: Optional[int] = None

    def thread_ready(self, th: ThreadContext, t_ready: int) -> None:
        th.state = READY
        th.ready_at = t_ready
        self._wake(t_ready)

    def _wake(self, t: int) -> None:
        ns = self.next_step
        if ns is not None and ns <= t:
            return
        t = max(t, self.engine.now)
        self.next_step = t
        self.engine.at(t, self.step, t, f"stc{self.block}.{self.index}", "step")

    def step(self, t: int) -> None:
        if self.next_step != t:
            return
        self.next_step = None
        for th in self.threads:
            if th.state == READY and th.ready_at <= t:
                self._issue(th, t)
                return

    def _pending(self, th: ThreadContext) -> int:
        return sum(1 for e in th.scoreboard.values() if not e[0])

    def _issue(self, th: ThreadContext, t: int) -> None:
        op = th.next_op
        # stall-on-use: any source still in flight blocks issue
        for src in op.srcs:
            entry = th.scoreboard.get(src)
            if entry is not None and not entry[0]:
                self._stall(th, t, src, entry)
                return
        if op.kind == "load" and op.dst is not None and self._pending(th) >= self.depth:
            oldest = next(k for k, e in th.scoreboard.items() if not e[0])
            self._stall(th, t, oldest, th.scoreboard[oldest])
            return
        th.attr[ISSUE] += t - th.since + 1
        th.since = t + 1
        self.issued += 1
        self.engine.ledger.instructions[th.tid] += 1
        if op.srcs:
            value = tuple(th.scoreboard.pop(s)[1] if s in th.scoreboard else None for s in op.srcs)
            if op.kind in ("alu", "branch"):
                return self.simple_done(th, t, value)
        if op.kind == "load" and op.dst is not None:
            entry = [False, None, MEM_LOCAL, 0]
            th.scoreboard[op.dst] = entry
            req = MemRequest(op.addr, op.size, "load", op.cached, (th.block, th.core, th.tid))
            self.m.memory.issue_access(req, lambda acc, th=th, d=op.dst: self._sb_done(th, d, acc))
            return self.simple_done(th, t, None)
        if op.kind in ("load", "store"):
            th.blocked_cat = MEM_LOCAL
        self.dispatch(th, op, t)

    def _stall(self, th: ThreadContext, t: int, reg: str, entry) -> None:
        th.attr[ISSUE] += t - th.since
        th.since = t
        th.state = BLOCKED_STALL
        th.waiting_on = reg

    def _sb_done(self, th: ThreadContext, reg: str, acc: Access) -> None:
        c = self.engine.now
        entry = th.scoreboard.get(reg)
        if entry is None:
            return
        entry[0] = True
        entry[1] = acc.result
        entry[2] = MEM_REMOTE if acc.ctrl != th.block else MEM_LOCAL
        entry[3] = acc.queue_delay
        if th.state == BLOCKED_STALL and th.waiting_on == reg:
            th.waiting_on = None
            self._book_block(th, c, entry[2], entry[3])
            th.state = READY
            th.ready_at = c
            self._wake(c)

    def simple_done(self, th: ThreadContext, t: int, value) -> None:
        if self._advance(th, value, t + 1):
            self.thread_ready(th, t + 1)

    def mem_done(self, th: ThreadContext, acc: Access) -> None:
        c = self.engine.now
        th.inflight -= 1
        cat = MEM_REMOTE if acc.ctrl != th.block else MEM_LOCAL
        self._book_block(th, c, cat, acc.queue_delay)
        if self._advance(th, acc.result, c):
            self.thread_ready(th, c)
