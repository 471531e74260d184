"""Sparse matrix-vector multiply kernels in four memory-access variants.

* ``base``: every access is an uncached 8-byte load or store.
* ``selective``: matrix streams (row_ptr, col_idx, values) are cached, the
  vector is read uncached.
* ``dma``: the thread gathers the vector elements for its next ``dma_chunk``
  non-zeros (whole rows where they fit, a long row in pieces) into its
  scratchpad slot, waits, then multiplies from cache (values) and SPAD.
* ``cache_all``: every access is cached, including the vector.

Work is split by non-zeros: thread ``k`` owns ``nnz[k*Z/P : (k+1)*Z/P)``.  A row
cut by a partition boundary is accumulated with remote atomic adds from each
owner; rows wholly inside one thread's range are written with a plain store.
"""

from __future__ import annotations

import bisect
import heapq
from typing import List, Optional, Sequence

from .. import ops
from ..kernel import ConfigurationError
from .base import KernelProgram
from .graphs import CsrMatrix, spmv_oracle

VARIANTS = ("base", "selective", "dma", "cache_all")


def partition_nnz(nnz: int, threads: int) -> List[int]:
    """Boundaries b[0..P] with b[k] = floor(k * nnz / P)."""
    return [k * nnz // threads for k in range(threads + 1)]


def rows_partition(mat: CsrMatrix, threads: int) -> List[int]:
    """Row-granular split by non-zeros: thread k gets rows [r[k], r[k+1])."""
    rp = mat.row_ptr
    out = [0]
    for k in range(1, threads):
        target = k * mat.nnz / threads
        out.append(max(out[-1], bisect.bisect_left(rp, target, 0, mat.n)))
    out.append(mat.n)
    return out


def balanced_column_order(mat: CsrMatrix, controllers: int, grain_words: int = 8) -> List[int]:
    """Relabel columns so each controller owns the same number of vector entries
    and a near-equal share of references (greedy, heaviest column first).

    Returns ``pos`` with ``pos[c]`` = new index of column ``c`` under an
    interleaved layout of ``grain_words`` words per controller chunk.
    """
    n = mat.n
    indeg = [0] * n
    for c in mat.col_idx:
        indeg[c] += 1
    cap = -(-n // controllers)
    load = [0] * controllers
    members: List[List[int]] = [[] for _ in range(controllers)]
    heap = [(0, k) for k in range(controllers)]
    for c in sorted(range(n), key=lambda c: (-indeg[c], c)):
        while True:
            ld, k = heapq.heappop(heap)
            if len(members[k]) < cap:
                break
        members[k].append(c)
        load[k] = ld + indeg[c]
        if len(members[k]) < cap:
            heapq.heappush(heap, (load[k], k))
    pos = [0] * n
    for k, cols in enumerate(members):
        # original-id order inside a controller keeps hot words spread over lines
        for i, c in enumerate(sorted(cols)):
            chunk, word = divmod(i, grain_words)
            pos[c] = (chunk * controllers + k) * grain_words + word
    return pos


def _row_of(rp: Sequence[int], j: int) -> int:
    # last row r with rp[r] <= j (skips empty rows that share the same offset)
    return bisect.bisect_right(rp, j) - 1


def build_spmv(machine, mat: CsrMatrix, x: Sequence, variant: str = "base",
               threads: Optional[int] = None, dma_chunk: int = 32,
               vector_layout: str = "balanced") -> KernelProgram:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown SpMV variant {variant!r}")
    if len(x) != mat.n:
        raise ConfigurationError("vector length does not match the matrix")
    mcfg = machine.cfg
    total = machine.blocks * mcfg.threads_per_block
    P = total if threads is None else threads
    if not 1 <= P <= total:
        raise ConfigurationError(f"thread count {P} exceeds machine capacity {total}")
    place = machine.placement(P)
    if variant == "dma":
        per_block = max(sum(1 for b, _ in place if b == blk) for blk in range(machine.blocks))
        if per_block * dma_chunk * 8 > mcfg.spad.capacity:
            raise ConfigurationError(f"scratchpad cannot hold {per_block} slots of {dma_chunk} elements")

    if vector_layout not in ("balanced", "interleaved"):
        raise ConfigurationError(f"unknown vector layout {vector_layout!r}")
    rp, ci, vals = mat.row_ptr, mat.col_idx, mat.values
    nnz = mat.nnz
    xn = mat.n
    xs = list(x)
    if vector_layout == "balanced" and machine.blocks > 1:
        pos = balanced_column_order(mat, machine.blocks)
        ci = [pos[c] for c in ci]
        xn = max(pos) + 1 if pos else 0
        xs = [0] * xn
        for c, p in enumerate(pos):
            xs[p] = x[c]
    bounds = partition_nnz(nnz, P)
    cached_matrix = variant in ("selective", "dma", "cache_all")

    # per-block extents: threads on a block are contiguous, so are their nnz ranges
    blk_threads = {}
    for k, (b, _) in enumerate(place):
        blk_threads.setdefault(b, []).append(k)
    blocks = sorted(blk_threads)
    # y rows follow the non-zeros: block b owns rows starting inside its range
    y_first = {}
    for i, b in enumerate(blocks):
        s = bounds[blk_threads[b][0]]
        y_first[b] = 0 if i == 0 else bisect.bisect_left(rp, s, 0, mat.n)
    y_rows = []
    for i, b in enumerate(blocks):
        stop = y_first[blocks[i + 1]] if i + 1 < len(blocks) else mat.n
        y_rows.append((y_first[b], stop, b))
    layout = {}
    for b in blocks:
        ks = blk_threads[b]
        s, e = bounds[ks[0]], bounds[ks[-1] + 1]
        r0 = _row_of(rp, s) if s < nnz else mat.n
        r1 = (_row_of(rp, e - 1) + 1) if e > s else r0
        rp_base = machine.alloc_local("row_ptr", 8 * (r1 - r0 + 1), b, cached_matrix)
        ci_base = machine.alloc_local("col_idx", 8 * max(e - s, 1), b, cached_matrix)
        va_base = machine.alloc_local("values", 8 * max(e - s, 1), b, cached_matrix)
        layout[b] = (s, e, r0, r1, rp_base, ci_base, va_base)
    x_base = machine.alloc("x", 8 * xn, cached=(variant == "cache_all"))
    y_base = {}
    for lo_r, hi_r, b in y_rows:
        y_base[b] = machine.alloc_local("y", 8 * max(hi_r - lo_r, 1), b)
    y_starts = [lo_r for lo_r, _, _ in y_rows]

    def y_addr(r: int) -> int:
        lo_r, _, b = y_rows[bisect.bisect_right(y_starts, r) - 1]
        return y_base[b] + 8 * (r - lo_r)

    machine.finalize()
    mem = machine.memory
    for b, (s, e, r0, r1, rp_base, ci_base, va_base) in layout.items():
        mem.poke_array(rp_base, rp[r0:r1 + 1])
        mem.poke_array(ci_base, ci[s:e])
        mem.poke_array(va_base, vals[s:e])
    mem.poke_array(x_base, xs)

    zero = 0.0 if any(isinstance(v, float) for v in vals[:1]) else 0
    slot_of = {}
    for k, (b, _) in enumerate(place):
        slot_of[k] = len([1 for kk in blk_threads[b] if kk < k])

    def kernel(k: int, b: int):
        s, e = bounds[k], bounds[k + 1]
        if s >= e:
            return
        bs, _, br0, _, rp_base, ci_base, va_base = layout[b]
        r = _row_of(rp, s)
        c_mat = cached_matrix
        c_vec = variant == "cache_all"
        rp_addr = rp_base + 8 * (r - br0)
        lo = yield ops.load(rp_addr, c_mat)
        j = s
        slot = slot_of[k] * dma_chunk * 8
        g_start = g_end = s
        while j < e:
            rp_addr += 8
            hi = yield ops.load(rp_addr, c_mat)
            yield ops.BRANCH
            if hi == j:             # empty row
                r += 1
                lo = hi
                continue
            end = hi if hi < e else e
            acc = zero
            if variant == "dma":
                for jj in range(j, end):
                    if jj == g_end:
                        cnt = dma_chunk if e - jj > dma_chunk else e - jj
                        h = yield ops.dma_gather(x_base, ci_base + 8 * (jj - bs), cnt, slot)
                        yield ops.wait(h)
                        g_start, g_end = jj, jj + cnt
                    v = yield ops.load(va_base + 8 * (jj - bs), True)
                    xv = yield ops.spad_load(slot + 8 * (jj - g_start))
                    acc += v * xv
                    yield ops.ALU
                    yield ops.BRANCH
            else:
                for jj in range(j, end):
                    c = yield ops.load(ci_base + 8 * (jj - bs), c_mat)
                    v = yield ops.load(va_base + 8 * (jj - bs), c_mat)
                    xv = yield ops.load(x_base + 8 * c, c_vec)
                    acc += v * xv
                    yield ops.ALU
                    yield ops.BRANCH
            if lo < s or hi > e:
                h = yield ops.remote_atomic("add", y_addr(r), acc)
                yield ops.wait(h)
            else:
                yield ops.store(y_addr(r), acc, c_vec)
            j = end
            lo = hi
            r += 1

    for k, (b, c) in enumerate(place):
        machine.spawn(b, c, kernel(k, b), f"spmv-{variant}")

    def collect():
        out = []
        for lo_r, hi_r, b in y_rows:
            out.extend(mem.peek_array(y_base[b], hi_r - lo_r))
        return out

    return KernelProgram(
        name="spmv", variant=variant, threads=P, collect=collect,
        oracle=lambda: spmv_oracle(mat, x),
        layout={"x": x_base},
        info={"nnz": nnz, "n": mat.n, "work": nnz, "vector_region": "x",
              "max_row_nnz": max(mat.degrees()) if mat.n else 0})
