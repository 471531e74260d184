"""Discrete-event engine, simulated clock and statistics ledger.

Events are ordered by (time, seq). ``seq`` is a global insertion counter, so
two events scheduled for the same cycle fire in the order they were scheduled.
"""

from __future__ import annotations

import enum
import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, TextIO, Tuple


CATEGORIES = ("issue", "mem_local", "mem_remote", "engine_wait", "sync_wait", "backpressure")
_CAT_INDEX = {name: i for i, name in enumerate(CATEGORIES)}


class SimulationError(Exception):
    """Base class for faults raised while a simulation is running."""


class ConfigurationError(ValueError):
    pass


class SimulationFault(SimulationError):
    def __init__(self, message: str, origin: Any = None):
        if origin is not None:
            message = f"{message} (origin={origin})"
        super().__init__(message)
        self.origin = origin


class Termination(enum.Enum):
    IDLE = "idle"
    ALL_DONE = "all-programs-done"
    DEADLOCK = "deadlock"
    LIMIT = "limit"


@dataclass(frozen=True, order=True)
class SimEvent:
    time: int
    seq: int
    target: str = field(compare=False)
    action: str = field(compare=False)


@dataclass
class RunResult:
    reason: Termination
    time: int
    events: int
    blocked: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.reason in (Termination.ALL_DONE, Termination.IDLE)


class StatsLedger:
    """Hierarchical counters for one simulation run.

    ``cycle_attribution[tid]`` is a 6-slot list indexed like ``CATEGORIES``.
    Controller and link entries are plain dicts so that reports can iterate
    them in insertion order, which is deterministic.
    """

    def __init__(self):
        self.cycle_attribution: Dict[int, List[int]] = {}
        self.instructions: Dict[int, int] = {}
        self.thread_start: Dict[int, int] = {}
        self.thread_finish: Dict[int, int] = {}
        self.thread_group: Dict[int, str] = {}
        self.controller_bytes: Dict[int, Dict[str, float]] = {}
        self.link_busy: Dict[Tuple[int, int], int] = {}
        self.link_bytes: Dict[Tuple[int, int], int] = {}
        # (link, tag) -> payload bytes; used for provenance audits
        self.link_payload: Dict[Tuple[Tuple[int, int], str], int] = defaultdict(int)
        # (dst block, tag) -> payload bytes delivered, including zero-hop deliveries
        self.delivered_payload: Dict[Tuple[int, str], int] = defaultdict(int)
        self.line_hist: Dict[str, List[int]] = {}
        self.core_stalls: Dict[Tuple[int, int], List[int]] = {}
        self.counters: Dict[str, Dict[int, int]] = defaultdict(lambda: defaultdict(int))
        self.packets_injected = 0
        self.packets_delivered = 0
        self.header_bytes = 0
        self.payload_bytes = 0
        self.mem_ops = 0
        self.remote_mem_ops = 0
        self.mem_latency_total = 0
        self.core_mem_ops = 0
        self.elapsed = 0

    # -- per-thread attribution ------------------------------------------
    def add_thread(self, tid: int, start: int, group: str = "mtc") -> None:
        self.cycle_attribution[tid] = [0] * len(CATEGORIES)
        self.instructions[tid] = 0
        self.thread_start[tid] = start
        self.thread_group[tid] = group

    def record(self, category: str, thread: int, cycles: int) -> None:
        try:
            idx = _CAT_INDEX[category]
        except KeyError:
            raise ConfigurationError(f"unknown attribution category {category!r}") from None
        if thread in self.thread_finish:
            raise SimulationFault(f"record on finished thread {thread}")
        self.cycle_attribution[thread][idx] += cycles

    def attribution(self, thread: int) -> Dict[str, int]:
        return dict(zip(CATEGORIES, self.cycle_attribution[thread]))

    def lifetime(self, thread: int) -> int:
        return self.thread_finish[thread] - self.thread_start[thread]

    def check_conservation(self) -> List[int]:
        """Return ids of finished threads whose categories do not sum to their lifetime."""
        bad = []
        for tid, fin in self.thread_finish.items():
            if sum(self.cycle_attribution[tid]) != fin - self.thread_start[tid]:
                bad.append(tid)
        return bad

    # -- controllers / links ----------------------------------------------
    def controller(self, cid: int) -> Dict[str, float]:
        entry = self.controller_bytes.get(cid)
        if entry is None:
            entry = {"useful_bytes": 0, "fetched_bytes": 0, "busy_cycles": 0.0, "requests": 0}
            self.controller_bytes[cid] = entry
        return entry

    def harvest_line(self, region: str, used_bytes: int) -> None:
        hist = self.line_hist.get(region)
        if hist is None:
            hist = [0] * 9
            self.line_hist[region] = hist
        hist[min(8, -(-used_bytes // 8))] += 1

    def self_check(self) -> List[str]:
        problems = []
        bad = self.check_conservation()
        if bad:
            problems.append(f"attribution not conserved for threads {bad[:8]}")
        for cid, c in self.controller_bytes.items():
            if c["useful_bytes"] > c["fetched_bytes"]:
                problems.append(f"controller {cid}: useful_bytes > fetched_bytes")
        return problems


class Engine:
    """Event queue plus clock.  Components schedule plain callables."""

    def __init__(self, event_log: Optional[TextIO] = None):
        self.now = 0
        self._seq = 0
        self._queue: list = []
        self.ledger = StatsLedger()
        self.event_log = event_log
        self.events_processed = 0
        self.live_threads: Dict[int, Any] = {}
        self.had_threads = False
        self.last_finish = 0
        self._finished = False

    def schedule(self, delay: int, fn: Callable[[Any], None], arg: Any = None,
                 target: str = "", action: str = "") -> int:
        if delay < 0:
            raise ValueError("negative delay")
        if self._finished:
            raise SimulationError("engine already finished")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (self.now + delay, seq, fn, arg, target, action))
        return seq

    def at(self, time: int, fn, arg=None, target: str = "", action: str = "") -> int:
        return self.schedule(time - self.now, fn, arg, target, action)

    def pending(self) -> int:
        return len(self._queue)

    # -- thread lifecycle hooks used by the core model -------------------
    def thread_started(self, tid: int, ctx: Any) -> None:
        self.live_threads[tid] = ctx
        self.had_threads = True

    def thread_finished(self, tid: int, time: int) -> None:
        del self.live_threads[tid]
        if time > self.last_finish:
            self.last_finish = time

    def run(self, max_time: Optional[int] = None, max_events: Optional[int] = None) -> RunResult:
        queue = self._queue
        pop = heapq.heappop
        log = self.event_log
        budget = max_events if max_events is not None else -1
        processed = 0
        while queue:
            if budget == processed:
                return RunResult(Termination.LIMIT, self.now, processed)
            if max_time is not None and queue[0][0] > max_time:
                self.now = max_time
                return RunResult(Termination.LIMIT, self.now, processed)
            time, seq, fn, arg, target, action = pop(queue)
            self.now = time
            if log is not None:
                log.write(f"{time},{seq},{target},{action}\n")
            fn(arg)
            processed += 1
        self.events_processed += processed
        if self.live_threads:
            blocked = [ctx.describe() for _, ctx in sorted(self.live_threads.items())]
            return RunResult(Termination.DEADLOCK, self.now, processed, blocked)
        if self.had_threads:
            self._finished = True
            # background traffic (writebacks, acks) may drain after the last
            # thread retires; the run ends at the last retirement
            return RunResult(Termination.ALL_DONE, self.last_finish, processed)
        return RunResult(Termination.IDLE, self.now, processed)

