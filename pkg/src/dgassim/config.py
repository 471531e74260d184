"""Run configuration: dataclass tree with defaults, YAML loading, validation.

Every default lives here.  Unknown keys are rejected with the dotted path of
the offending key.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .kernel import ConfigurationError

log = logging.getLogger(__name__)

CONFIG_VERSION = 1

SCHEMES = ("interleaved", "block_partitioned")
WORKLOADS = ("spmv", "bfs", "random_access", "indirection_chain", "random_walk", "atomic_counter")
SPMV_VARIANTS = ("base", "selective", "dma", "cache_all")


@dataclass
class MemoryConfig:
    dram_latency: int = 100
    bandwidth: int = 8          # bytes/cycle per controller
    local_latency: int = 2      # core/engine <-> block router or local controller
    capacity: int = 1 << 30     # bytes per controller


@dataclass
class CacheConfig:
    capacity: int = 16 * 1024
    ways: int = 4
    latency: int = 2
    prefetch: str = "none"      # none | next_line


@dataclass
class SpadConfig:
    capacity: int = 256 * 1024
    latency: int = 3


@dataclass
class CoreConfig:
    mtc_count: int = 4
    threads_per_mtc: int = 16
    stc_count: int = 1
    stc_scoreboard_depth: int = 8


@dataclass
class EngineConfig:
    dma_outstanding: int = 256
    dma_issue_width: int = 2
    collective_fanin: int = 4
    collective_latency: int = 4
    queue_access_bytes: int = 16


@dataclass
class TopologyConfig:
    dims: Optional[List[int]] = None        # derived from machine.blocks when unset
    link_bandwidth: int = 8
    hop_latency: int = 40
    header_bytes: int = 8
    optical_top: bool = False


@dataclass
class AttOverride:
    region: str
    scheme: str
    grain: int = 64
    controllers: Optional[List[int]] = None


@dataclass
class MachineConfig:
    blocks: int = 16
    core: CoreConfig = field(default_factory=CoreConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    spad: SpadConfig = field(default_factory=SpadConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    engines: EngineConfig = field(default_factory=EngineConfig)
    att: List[AttOverride] = field(default_factory=list)

    def dims(self) -> List[int]:
        from .network import dims_for_blocks
        if self.topology.dims:
            return list(self.topology.dims)
        return dims_for_blocks(self.blocks)

    @property
    def threads_per_block(self) -> int:
        return self.core.mtc_count * self.core.threads_per_mtc


@dataclass
class WorkloadConfig:
    kind: str = "spmv"
    variant: str = "base"
    scale: int = 12
    edge_factor: int = 16
    rmat_probs: Tuple[float, float, float, float] = (0.57, 0.19, 0.19, 0.05)
    seed: int = 1
    values_mode: str = "int"
    threads: Optional[int] = None
    root: int = 0
    dma_chunk: int = 32
    vector_layout: str = "balanced"     # balanced | interleaved
    accesses_per_thread: int = 64
    chain_length: int = 1000
    walk_length: int = 16
    increments_per_thread: int = 4
    matrix_file: Optional[str] = None
    edges_file: Optional[str] = None


@dataclass
class ScaleOutConfig:
    nodes: int = 16
    latency_delta: int = 200            # extra cycles per inter-node round trip
    internode_bandwidth: float = 64.0   # bytes/cycle per node


@dataclass
class OutputConfig:
    report_dir: str = "reports"
    event_log: Optional[str] = None


@dataclass
class RunConfig:
    machine: MachineConfig = field(default_factory=MachineConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    scaleout: ScaleOutConfig = field(default_factory=ScaleOutConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("warnings")
        d["version"] = CONFIG_VERSION
        return d


def _build(cls, data: Any, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in fields or key == "warnings":
            raise ConfigurationError(f"unknown key {where!r}")
        ftype = fields[key].type
        sub = _NESTED.get((cls, key))
        if sub is not None:
            if key == "att":
                if not isinstance(value, list):
                    raise ConfigurationError(f"{where}: expected a list of rules")
                kwargs[key] = [_build(AttOverride, v, f"{where}[{i}]") for i, v in enumerate(value)]
            else:
                kwargs[key] = _build(sub, value, where)
        elif key == "rmat_probs":
            kwargs[key] = tuple(float(v) for v in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "machine"): MachineConfig,
    (RunConfig, "workload"): WorkloadConfig,
    (RunConfig, "scaleout"): ScaleOutConfig,
    (RunConfig, "outputs"): OutputConfig,
    (MachineConfig, "core"): CoreConfig,
    (MachineConfig, "cache"): CacheConfig,
    (MachineConfig, "spad"): SpadConfig,
    (MachineConfig, "memory"): MemoryConfig,
    (MachineConfig, "topology"): TopologyConfig,
    (MachineConfig, "engines"): EngineConfig,
    (MachineConfig, "att"): AttOverride,
}


def from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "")
    validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    text = Path(path).read_text()
    data = yaml.safe_load(text) if text.strip() else None
    return from_dict(data)


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def validate(cfg: RunConfig) -> None:
    m = cfg.machine
    w = cfg.workload
    if m.blocks < 1:
        raise ConfigurationError("machine.blocks must be >= 1")
    dims = m.dims()
    if math.prod(dims) != m.blocks:
        raise ConfigurationError(
            f"machine.topology.dims {dims} has {math.prod(dims)} blocks but machine.blocks is {m.blocks}")
    if m.core.mtc_count < 0 or m.core.threads_per_mtc < 1:
        raise ConfigurationError("machine.core: need mtc_count >= 0 and threads_per_mtc >= 1")
    if m.core.stc_scoreboard_depth < 1:
        raise ConfigurationError("machine.core.stc_scoreboard_depth must be >= 1")
    if m.cache.prefetch not in ("none", "next_line"):
        raise ConfigurationError(f"machine.cache.prefetch: unknown prefetcher {m.cache.prefetch!r}")
    lines = m.cache.capacity // 64
    if lines < m.cache.ways or lines % m.cache.ways or not _pow2(lines // m.cache.ways):
        raise ConfigurationError("machine.cache: capacity/64/ways must be a power of two")
    if m.memory.bandwidth < 1 or m.memory.dram_latency < 0:
        raise ConfigurationError("machine.memory: bandwidth must be >= 1 and dram_latency >= 0")
    for i, rule in enumerate(m.att):
        if rule.scheme not in SCHEMES:
            raise ConfigurationError(
                f"machine.att[{i}].scheme: unknown scheme {rule.scheme!r} (expected one of {', '.join(SCHEMES)})")
        if rule.scheme == "interleaved" and (not _pow2(rule.grain) or rule.grain < 8):
            raise ConfigurationError(f"machine.att[{i}].grain must be a power of two >= 8")
        if rule.controllers is not None and not rule.controllers:
            raise ConfigurationError(f"machine.att[{i}].controllers is empty")
    if w.kind not in WORKLOADS:
        raise ConfigurationError(f"workload.kind: unknown workload {w.kind!r}")
    for v in w.variant.split(","):
        if w.kind == "spmv" and v not in SPMV_VARIANTS:
            raise ConfigurationError(f"workload.variant: unknown SpMV variant {v!r}")
    if w.values_mode not in ("int", "float"):
        raise ConfigurationError(f"workload.values_mode must be int or float, got {w.values_mode!r}")
    if w.vector_layout not in ("balanced", "interleaved"):
        raise ConfigurationError(f"workload.vector_layout must be balanced or interleaved, got {w.vector_layout!r}")
    if len(w.rmat_probs) != 4 or abs(sum(w.rmat_probs) - 1.0) > 1e-9:
        raise ConfigurationError("workload.rmat_probs must be four probabilities summing to 1")
    total_threads = m.blocks * m.threads_per_block
    if w.threads is not None and not 1 <= w.threads <= total_threads:
        raise ConfigurationError(f"workload.threads must be in [1, {total_threads}]")
    if w.kind == "spmv" and "dma" in w.variant:
        need = m.threads_per_block * w.dma_chunk * 8
        if need > m.spad.capacity:
            raise ConfigurationError(
                f"machine.spad.capacity {m.spad.capacity} cannot hold {m.threads_per_block} gather "
                f"buffers of workload.dma_chunk={w.dma_chunk} elements ({need} bytes)")
    if cfg.scaleout.nodes < 1:
        raise ConfigurationError("scaleout.nodes must be >= 1")

    cfg.warnings.clear()
    net_bw = sum((d - 1) * m.topology.link_bandwidth for d in dims)
    if m.blocks > 1 and net_bw <= m.memory.bandwidth:
        msg = (f"per-block network bandwidth {net_bw} B/cycle does not exceed DRAM bandwidth "
               f"{m.memory.bandwidth} B/cycle; the machine is meant to be provisioned with "
               f"network bandwidth above local DRAM bandwidth")
        cfg.warnings.append(msg)
        log.warning(msg)
