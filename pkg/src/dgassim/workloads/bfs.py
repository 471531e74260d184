"""Queue-based breadth-first search.

Each block owns a pair of frontier queues.  A thread drains its own block's
current queue, then steals from the other blocks in ring order.  Newly
discovered vertices are claimed with a remote compare-and-swap on the parent
array and pushed to the next-level queue of the vertex's home block.  A
reduce-add of per-thread discovery counts closes each level and detects the end.
"""

from __future__ import annotations

from typing import Optional

from .. import ops
from ..kernel import ConfigurationError, SimulationFault
from .base import KernelProgram
from .graphs import CsrMatrix, bfs_levels, validate_bfs_tree

UNVISITED = -1


def build_bfs(machine, graph: CsrMatrix, root: int = 0, threads: Optional[int] = None) -> KernelProgram:
    n = graph.n
    if not 0 <= root < n:
        raise ConfigurationError(f"root {root} outside [0, {n})")
    total = machine.blocks * machine.cfg.threads_per_block
    P = total if threads is None else threads
    place = machine.placement(P)
    B = machine.blocks

    rp_base = machine.alloc("bfs_row_ptr", 8 * (n + 1))
    ci_base = machine.alloc("bfs_col_idx", 8 * max(graph.nnz, 1))
    par_base = machine.alloc("parent", 8 * n)
    queues = [[machine.alloc_queue(f"frontier{lvl}", n, b) for b in range(B)] for lvl in range(2)]
    machine.finalize()
    mem = machine.memory
    mem.poke_array(rp_base, graph.row_ptr)
    mem.poke_array(ci_base, graph.col_idx)
    mem.poke_array(par_base, [UNVISITED] * n)
    mem.poke(par_base + 8 * root, root)
    for lvl in range(2):
        for q in queues[lvl]:
            machine.engines.init_queue(q)
    q0 = queues[0][root % B]
    mem.poke(q0.slot(0), root)
    mem.poke(q0.base + 8, 1)

    env = {}

    def kernel(b: int):
        level = 0
        while True:
            cur = queues[level % 2]
            nxt = queues[(level + 1) % 2]
            found = 0
            for d in range(B):
                q = cur[(b + d) % B]
                while True:
                    h = yield ops.queue_op("dequeue", q)
                    res = yield ops.wait(h)
                    yield ops.BRANCH
                    if res.status != "ok":
                        break
                    u = res.value
                    lo = yield ops.load(rp_base + 8 * u)
                    hi = yield ops.load(rp_base + 8 * (u + 1))
                    for j in range(lo, hi):
                        v = yield ops.load(ci_base + 8 * j)
                        p = yield ops.load(par_base + 8 * v)
                        yield ops.BRANCH
                        if p != UNVISITED:
                            continue
                        h = yield ops.remote_atomic("cas", par_base + 8 * v, UNVISITED, u)
                        old = yield ops.wait(h)
                        yield ops.BRANCH
                        if old != UNVISITED:
                            continue
                        h = yield ops.queue_op("enqueue", nxt[v % B], v)
                        res = yield ops.wait(h)
                        if res.status != "ok":
                            raise SimulationFault(f"frontier queue overflow enqueuing {v}")
                        found += 1
            h = yield ops.reduce(env["group"], "add", found)
            total_found = yield ops.wait(h)
            if total_found == 0:
                return
            level += 1

    tids = [machine.spawn(b, c, kernel(b), "bfs").tid for b, c in place]
    env["group"] = machine.make_group(tids)

    levels_cache = {}

    def oracle():
        if "levels" not in levels_cache:
            levels_cache["levels"] = bfs_levels(graph, root)
        return levels_cache["levels"]

    def collect():
        return mem.peek_array(par_base, n)

    return KernelProgram(
        name="bfs", variant="queue", threads=P, collect=collect, oracle=oracle,
        layout={"parent": par_base},
        info={"nnz": graph.nnz, "n": n, "work": graph.nnz, "root": root},
        checker=lambda parent: validate_bfs_tree(graph, root, parent, oracle()))
