"""Microbenchmarks: bandwidth and latency probes, random walks, counter contention."""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from .. import ops
from ..kernel import ConfigurationError
from .base import KernelProgram
from .graphs import CsrMatrix

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _hash(*parts: int) -> int:
    h = 0
    for p in parts:
        h = splitmix64(h ^ (p & _MASK))
    return h


def build_random_access(machine, accesses_per_thread: int = 64, threads: Optional[int] = None,
                        seed: int = 1, table_words: int = 1 << 16) -> KernelProgram:
    """Uniform uncached 8-byte loads over an interleaved table; each thread stores a checksum."""
    total = machine.blocks * machine.cfg.threads_per_block
    P = total if threads is None else threads
    place = machine.placement(P)
    table = machine.alloc("table", 8 * table_words)
    out = machine.alloc("checksum", 8 * P)
    machine.finalize()
    machine.memory.poke_array(table, range(table_words))
    targets = [[_hash(seed, k, i) % table_words for i in range(accesses_per_thread)] for k in range(P)]

    def kernel(k):
        s = 0
        for idx in targets[k]:
            v = yield ops.load(table + 8 * idx)
            s += v
        yield ops.store(out + 8 * k, s)

    for k, (b, c) in enumerate(place):
        machine.spawn(b, c, kernel(k), "random_access")
    return KernelProgram(
        name="random_access", variant="uncached", threads=P,
        collect=lambda: machine.memory.peek_array(out, P),
        oracle=lambda: [sum(t) for t in targets],
        info={"work": P * accesses_per_thread})


def chain_permutation(length: int, seed: int) -> List[int]:
    """nxt[i] for a single random cycle through all ``length`` slots."""
    order = np.random.default_rng(seed).permutation(length).tolist()
    nxt = [0] * length
    for a, b in zip(order, order[1:] + order[:1]):
        nxt[a] = b
    return nxt


def build_indirection_chain(machine, length: int = 1000, threads: int = 1, seed: int = 1) -> KernelProgram:
    """Serially dependent uncached loads (pointer chase); latency probe."""
    if length < 1:
        raise ConfigurationError("chain length must be >= 1")
    place = machine.placement(threads)
    nxt = chain_permutation(length, seed)
    chain = machine.alloc("chain", 8 * length)
    out = machine.alloc("chain_end", 8 * threads)
    machine.finalize()
    machine.memory.poke_array(chain, nxt)

    def kernel(k):
        p = k % length
        for _ in range(length):
            p = yield ops.load(chain + 8 * p)
        yield ops.store(out + 8 * k, p)

    def oracle():
        res = []
        for k in range(threads):
            p = k % length
            for _ in range(length):
                p = nxt[p]
            res.append(p)
        return res

    for k, (b, c) in enumerate(place):
        machine.spawn(b, c, kernel(k), "chain")
    return KernelProgram(name="indirection_chain", variant="uncached", threads=threads,
                         collect=lambda: machine.memory.peek_array(out, threads),
                         oracle=oracle, info={"work": threads * length})


def walk_trace(graph: CsrMatrix, walker: int, start: int, length: int, seed: int) -> List[int]:
    rp, ci = graph.row_ptr, graph.col_idx
    v = start
    trace = [v]
    for step in range(length):
        deg = rp[v + 1] - rp[v]
        v = ci[rp[v] + _hash(seed, walker, step) % deg]
        trace.append(v)
    return trace


def build_random_walk(machine, graph: CsrMatrix, walk_length: int = 16, threads: Optional[int] = None,
                      seed: int = 1) -> KernelProgram:
    """One walker per thread; next hop = neighbour[hash(seed, walker, step) % degree].

    ``graph`` should have no dead ends reachable from the start vertices (a
    symmetrised graph works); walkers start at vertices with non-zero degree.
    """
    total = machine.blocks * machine.cfg.threads_per_block
    P = total if threads is None else threads
    place = machine.placement(P)
    live = [v for v in range(graph.n) if graph.row_ptr[v + 1] > graph.row_ptr[v]]
    if not live:
        raise ConfigurationError("random walk needs a graph with at least one edge")
    starts = [live[_hash(seed, w, 1 << 40) % len(live)] for w in range(P)]
    rp_base = machine.alloc("walk_row_ptr", 8 * (graph.n + 1))
    ci_base = machine.alloc("walk_col_idx", 8 * graph.nnz)
    trace_base = machine.alloc("walk_trace", 8 * P * (walk_length + 1))
    machine.finalize()
    mem = machine.memory
    mem.poke_array(rp_base, graph.row_ptr)
    mem.poke_array(ci_base, graph.col_idx)
    steps = machine.engine.ledger.counters["walk_steps"]

    def kernel(w):
        v = starts[w]
        out = trace_base + 8 * w * (walk_length + 1)
        yield ops.store(out, v)
        for step in range(walk_length):
            lo = yield ops.load(rp_base + 8 * v)
            hi = yield ops.load(rp_base + 8 * (v + 1))
            pick = _hash(seed, w, step) % (hi - lo)
            yield ops.ALU
            v = yield ops.load(ci_base + 8 * (lo + pick))
            steps[w] += 1
            yield ops.store(out + 8 * (step + 1), v)

    for w, (b, c) in enumerate(place):
        machine.spawn(b, c, kernel(w), "walk")

    def collect():
        flat = mem.peek_array(trace_base, P * (walk_length + 1))
        return [flat[w * (walk_length + 1):(w + 1) * (walk_length + 1)] for w in range(P)]

    def checker(got):
        want = [walk_trace(graph, w, starts[w], walk_length, seed) for w in range(P)]
        return [f"walker {w} diverged" for w in range(P) if got[w] != want[w]][:10]

    return KernelProgram(name="random_walk", variant="uncached", threads=P, collect=collect,
                         oracle=lambda: [walk_trace(graph, w, starts[w], walk_length, seed) for w in range(P)],
                         info={"work": P * walk_length, "walk_length": walk_length}, checker=checker)


def build_atomic_counter(machine, variant: str = "atomic", threads: Optional[int] = None,
                         increments: int = 4, home: int = 0) -> KernelProgram:
    """Shared counter bumped by every thread.

    ``atomic`` uses one remote fetch-add per increment.  ``lock`` emulates it
    with a compare-and-swap spin lock, an uncached load and store of the
    counter, and a releasing store.
    """
    if variant not in ("atomic", "lock"):
        raise ConfigurationError(f"unknown counter variant {variant!r}")
    total = machine.blocks * machine.cfg.threads_per_block
    P = total if threads is None else threads
    place = machine.placement(P)
    counter = machine.alloc_local("counter", 8, home)
    lock = machine.alloc_local("lock", 8, home)
    machine.finalize()
    machine.memory.poke(counter, 0)
    machine.memory.poke(lock, 0)

    def atomic_kernel(k):
        for _ in range(increments):
            h = yield ops.remote_atomic("add", counter, 1)
            yield ops.wait(h)

    def lock_kernel(k):
        for _ in range(increments):
            while True:
                h = yield ops.remote_atomic("cas", lock, 0, k + 1)
                old = yield ops.wait(h)
                yield ops.BRANCH
                if old == 0:
                    break
            v = yield ops.load(counter)
            yield ops.store(counter, v + 1)
            yield ops.store(lock, 0)

    kern = atomic_kernel if variant == "atomic" else lock_kernel
    for k, (b, c) in enumerate(place):
        machine.spawn(b, c, kern(k), f"counter-{variant}")
    return KernelProgram(name="atomic_counter", variant=variant, threads=P,
                         collect=lambda: [machine.memory.peek(counter)],
                         oracle=lambda: [P * increments], info={"work": P * increments})
