"""Workload inputs and kernel builders."""

from __future__ import annotations

from ..config import WorkloadConfig
from ..kernel import ConfigurationError
from .base import KernelProgram, compare_vectors
from .bfs import build_bfs
from .graphs import (CsrMatrix, assign_values, bfs_levels, csr_from_edges, csr_to_coo, make_vector,
                     read_edge_list, read_matrix_market, rmat_generate, spmv_oracle, symmetrize,
                     validate_bfs_tree, write_edge_list, write_matrix_market)
from .micro import (build_atomic_counter, build_indirection_chain, build_random_access,
                    build_random_walk)
from .spmv import VARIANTS as SPMV_VARIANTS, build_spmv, partition_nnz, rows_partition

__all__ = [
    "CsrMatrix", "KernelProgram", "build_atomic_counter", "build_bfs", "build_indirection_chain",
    "build_microbench", "build_random_access", "build_random_walk", "build_spmv", "build_workload",
    "bfs_levels", "compare_vectors", "csr_from_edges", "csr_to_coo", "load_graph", "load_matrix",
    "partition_nnz", "read_edge_list", "read_matrix_market", "rmat_generate", "rows_partition",
    "spmv_oracle", "symmetrize", "validate_bfs_tree", "write_edge_list", "write_matrix_market",
]


def load_edges(w: WorkloadConfig):
    if w.edges_file:
        return read_edge_list(w.edges_file), None
    edges = rmat_generate(w.scale, w.edge_factor, w.rmat_probs, w.seed)
    return edges, 1 << w.scale


def load_matrix(w: WorkloadConfig) -> CsrMatrix:
    """Matrix for SpMV: a Matrix Market file if configured, else RMAT with generated values."""
    if w.matrix_file:
        mat = read_matrix_market(w.matrix_file)
        if w.values_mode == "int":
            mat.values = [int(v) for v in mat.values]
        else:
            mat.values = [float(v) for v in mat.values]
        return mat
    edges, n = load_edges(w)
    if n is None:
        n = int(edges.max()) + 1 if len(edges) else 1
    vals = assign_values(len(edges), w.values_mode, w.seed)
    return csr_from_edges(edges, n, vals)


def load_graph(w: WorkloadConfig, symmetric: bool = False) -> CsrMatrix:
    if w.matrix_file:
        g = read_matrix_market(w.matrix_file)
        g.values = [1] * g.nnz
        return g
    edges, n = load_edges(w)
    if n is None:
        n = int(edges.max()) + 1 if len(edges) else 1
    if symmetric:
        edges = symmetrize(edges)
    return csr_from_edges(edges, n)


def build_microbench(machine, kind: str, w: WorkloadConfig) -> KernelProgram:
    if kind == "random_access":
        return build_random_access(machine, w.accesses_per_thread, w.threads, w.seed,
                                   table_words=max(1 << w.scale, 1024))
    if kind == "indirection_chain":
        return build_indirection_chain(machine, w.chain_length, w.threads or 1, w.seed)
    if kind == "random_walk":
        return build_random_walk(machine, load_graph(w, symmetric=True), w.walk_length, w.threads, w.seed)
    raise ConfigurationError(f"unknown microbenchmark {kind!r}")


def build_workload(machine, w: WorkloadConfig, variant: str = None) -> KernelProgram:
    """Build and spawn the configured workload on an unfinalized machine."""
    variant = variant or w.variant
    if w.kind == "spmv":
        mat = load_matrix(w)
        x = make_vector(mat.n, w.values_mode, w.seed)
        return build_spmv(machine, mat, x, variant, w.threads, w.dma_chunk, w.vector_layout)
    if w.kind == "bfs":
        return build_bfs(machine, load_graph(w), w.root, w.threads)
    if w.kind == "atomic_counter":
        v = "atomic" if variant in ("base", "atomic") else variant
        return build_atomic_counter(machine, v, w.threads, w.increments_per_thread)
    return build_microbench(machine, w.kind, w)
