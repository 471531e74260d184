"""Graph inputs: RMAT generation, CSR construction, file formats, sequential oracles."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..kernel import ConfigurationError

MAX_SCALE = 20


@dataclass
class CsrMatrix:
    n: int
    row_ptr: List[int]
    col_idx: List[int]
    values: list

    @property
    def nnz(self) -> int:
        return self.row_ptr[-1] if self.row_ptr else 0

    def row(self, r: int) -> range:
        return range(self.row_ptr[r], self.row_ptr[r + 1])

    def degrees(self) -> List[int]:
        rp = self.row_ptr
        return [rp[i + 1] - rp[i] for i in range(self.n)]

    def validate(self) -> None:
        rp = self.row_ptr
        if len(rp) != self.n + 1 or rp[0] != 0:
            raise ValueError("row_ptr must have n+1 entries starting at 0")
        if any(b < a for a, b in zip(rp, rp[1:])):
            raise ValueError("row_ptr is not monotone")
        if rp[-1] != len(self.col_idx) or len(self.values) != len(self.col_idx):
            raise ValueError("row_ptr[n] must equal nnz")
        if self.col_idx and not 0 <= min(self.col_idx) <= max(self.col_idx) < self.n:
            raise ValueError("column index out of range")


def rmat_generate(scale: int, edge_factor: int = 16,
                  probs: Sequence[float] = (0.57, 0.19, 0.19, 0.05),
                  seed: int = 1, scramble: bool = True) -> np.ndarray:
    """Return an (edge_factor * 2**scale, 2) int64 array of (src, dst) pairs.

    Each edge picks one quadrant per bit.  Vertex labels are then permuted so
    that high-degree vertices are not clustered at low ids.
    """
    if len(probs) != 4 or abs(sum(probs) - 1.0) > 1e-9:
        raise ConfigurationError(f"RMAT probabilities must sum to 1, got {sum(probs)!r}")
    if any(p < 0 for p in probs):
        raise ConfigurationError("RMAT probabilities must be non-negative")
    if not 0 <= scale <= MAX_SCALE:
        raise ConfigurationError(f"RMAT scale must be in [0, {MAX_SCALE}]")
    n = 1 << scale
    m = edge_factor * n
    rng = np.random.default_rng(seed)
    a, b, c, _ = probs
    src = np.zeros(m, dtype=np.int64)
    dst = np.zeros(m, dtype=np.int64)
    for bit in range(scale):
        u = rng.random(m)
        right = ((u >= a) & (u < a + b)) | (u >= a + b + c)
        down = u >= a + b
        src |= down.astype(np.int64) << bit
        dst |= right.astype(np.int64) << bit
    if scramble and n > 1:
        perm = rng.permutation(n)
        src = perm[src]
        dst = perm[dst]
    return np.stack([src, dst], axis=1)


def csr_from_edges(edges, n: int, values=None) -> CsrMatrix:
    """Build CSR; duplicate edges are kept as repeated entries, row order is stable."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise ValueError(f"vertex id out of range for n={n}")
    order = np.argsort(e[:, 0], kind="stable")
    counts = np.bincount(e[:, 0], minlength=n) if e.size else np.zeros(n, dtype=np.int64)
    row_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    col = e[order, 1]
    if values is None:
        vals = [1] * len(col)
    else:
        vals = [values[i] for i in order.tolist()]
    return CsrMatrix(n, row_ptr.tolist(), col.tolist(), vals)


def csr_to_coo(mat: CsrMatrix) -> List[Tuple[int, int]]:
    out = []
    for r in range(mat.n):
        for j in mat.row(r):
            out.append((r, mat.col_idx[j]))
    return out


def symmetrize(edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return np.concatenate([e, e[:, ::-1]])


def assign_values(nnz: int, mode: str, seed: int) -> list:
    rng = np.random.default_rng(seed + 7919)
    if mode == "int":
        return rng.integers(1, 10, nnz).tolist()
    return rng.uniform(-1.0, 1.0, nnz).tolist()


def make_vector(n: int, mode: str, seed: int) -> list:
    rng = np.random.default_rng(seed + 104729)
    if mode == "int":
        return rng.integers(1, 10, n).tolist()
    return rng.uniform(-1.0, 1.0, n).tolist()


# -- file formats -----------------------------------------------------------

def write_matrix_market(path, mat: CsrMatrix) -> None:
    is_int = all(isinstance(v, int) for v in mat.values)
    field = "integer" if is_int else "real"
    lines = [f"%%MatrixMarket matrix coordinate {field} general",
             f"{mat.n} {mat.n} {mat.nnz}"]
    for r in range(mat.n):
        for j in mat.row(r):
            v = mat.values[j]
            lines.append(f"{r + 1} {mat.col_idx[j] + 1} {v if is_int else repr(float(v))}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path) -> CsrMatrix:
    rows, cols, vals = [], [], []
    header = None
    field = "real"
    symmetric = False
    size = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("%%MatrixMarket"):
                header = line.split()
                if len(header) < 5 or header[2] != "coordinate":
                    raise ValueError("only coordinate Matrix Market files are supported")
                field = header[3]
                symmetric = header[4] == "symmetric"
                continue
            if line.startswith("%") or not line.strip():
                continue
            parts = line.split()
            if size is None:
                size = tuple(int(p) for p in parts[:3])
                continue
            r, c = int(parts[0]) - 1, int(parts[1]) - 1
            if field == "pattern":
                v = 1
            elif field == "integer":
                v = int(parts[2])
            else:
                v = float(parts[2])
            rows.append(r)
            cols.append(c)
            vals.append(v)
            if symmetric and r != c:
                rows.append(c)
                cols.append(r)
                vals.append(v)
    if header is None or size is None:
        raise ValueError(f"{path}: not a Matrix Market file")
    n = max(size[0], size[1])
    return csr_from_edges(np.stack([np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)], axis=1)
                          if rows else np.zeros((0, 2), dtype=np.int64), n, vals)


def write_edge_list(path, edges) -> None:
    np.asarray(edges, dtype="<u8").reshape(-1, 2).tofile(path)


def read_edge_list(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<u8")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of u64 words")
    return raw.reshape(-1, 2).astype(np.int64)


# -- sequential oracles -------------------------------------------------------

def spmv_oracle(mat: CsrMatrix, x: Sequence) -> list:
    y = []
    for r in range(mat.n):
        acc = 0
        for j in mat.row(r):
            acc += mat.values[j] * x[mat.col_idx[j]]
        y.append(acc)
    return y


def bfs_levels(mat: CsrMatrix, root: int) -> List[int]:
    """Level of every vertex from ``root``; -1 if unreachable."""
    level = [-1] * mat.n
    level[root] = 0
    q = deque([root])
    rp, ci = mat.row_ptr, mat.col_idx
    while q:
        u = q.popleft()
        for j in range(rp[u], rp[u + 1]):
            v = ci[j]
            if level[v] < 0:
                level[v] = level[u] + 1
                q.append(v)
    return level


def validate_bfs_tree(mat: CsrMatrix, root: int, parent: Sequence[int],
                      levels: Optional[List[int]] = None) -> List[str]:
    """Check a parent array against sequential BFS levels; returns problems found."""
    levels = bfs_levels(mat, root) if levels is None else levels
    problems = []
    if parent[root] != root:
        problems.append(f"root {root} is not its own parent")
    for v in range(mat.n):
        p = parent[v]
        if levels[v] < 0:
            if p >= 0:
                problems.append(f"unreachable vertex {v} has parent {p}")
            continue
        if p < 0:
            problems.append(f"reachable vertex {v} was not visited")
            continue
        if v == root:
            continue
        if levels[p] != levels[v] - 1:
            problems.append(f"vertex {v}: parent {p} at level {levels[p]}, expected {levels[v] - 1}")
            continue
        if v not in mat.col_idx[mat.row_ptr[p]:mat.row_ptr[p + 1]]:
            problems.append(f"parent edge ({p}, {v}) not in graph")
        if len(problems) > 20:
            break
    return problems


def tree_levels(parent: Sequence[int], root: int) -> List[int]:
    """Depth of each vertex in a parent tree (-1 for vertices outside it)."""
    n = len(parent)
    depth = [-1] * n
    depth[root] = 0
    for v in range(n):
        chain = []
        u = v
        while u >= 0 and depth[u] < 0 and len(chain) <= n:
            chain.append(u)
            u = parent[u]
        if u < 0 or depth[u] < 0:
            continue
        d = depth[u]
        for w in reversed(chain):
            d += 1
            depth[w] = d
    return depth
