"""Op descriptors emitted by kernel programs.

A kernel program is a generator.  It yields one :class:`Op` per dynamic
instruction and receives the op's result back from ``yield``:

* ``load`` -> the loaded value (MTC), or ``None`` if the op names a ``dst``
  register on an STC (the value is delivered later to the first op that lists
  the register in ``srcs``)
* engine ops (``dma_gather``, ``remote_atomic``, ``barrier`` ...) -> an
  :class:`~dgassim.engines.EngineHandle`, immediately
* ``poll`` -> ``True``/``False``
* ``wait`` -> the handle's result once it has completed
* anything with ``srcs`` on an STC -> tuple of the source values
"""

from __future__ import annotations

from typing import Any, Optional, Tuple

KINDS = ("alu", "branch", "load", "store", "spad_load", "spad_store", "dma_gather",
         "dma_transfer", "remote_atomic", "queue_op", "barrier", "reduce", "poll",
         "wait", "flush", "halt")


class Op:
    __slots__ = ("kind", "addr", "size", "cached", "value", "dst", "srcs", "args")

    def __init__(self, kind: str, addr: int = 0, size: int = 8, cached: bool = False,
                 value: Any = None, dst: Optional[str] = None, srcs: Tuple[str, ...] = (),
                 args: Any = None):
        self.kind = kind
        self.addr = addr
        self.size = size
        self.cached = cached
        self.value = value
        self.dst = dst
        self.srcs = srcs
        self.args = args

    def __repr__(self):
        extra = f" addr={self.addr:#x}" if self.kind in ("load", "store") else ""
        return f"Op({self.kind}{extra})"


# Shared instances for the hot no-operand ops.
ALU = Op("alu")
BRANCH = Op("branch")
HALT = Op("halt")


def alu(srcs: Tuple[str, ...] = ()) -> Op:
    return Op("alu", srcs=srcs) if srcs else ALU


def branch() -> Op:
    return BRANCH


def halt() -> Op:
    return HALT


def load(addr: int, cached: bool = False, size: int = 8, dst: Optional[str] = None) -> Op:
    return Op("load", addr, size, cached, dst=dst)


def store(addr: int, value: Any, cached: bool = False, size: int = 8) -> Op:
    return Op("store", addr, size, cached, value)


def spad_load(offset: int, block: Optional[int] = None) -> Op:
    return Op("spad_load", offset, args=block)


def spad_store(offset: int, value: Any, block: Optional[int] = None) -> Op:
    return Op("spad_store", offset, value=value, args=block)


def dma_gather(base: int, index_addr: int, count: int, dest: int) -> Op:
    return Op("dma_gather", args=(base, index_addr, count, dest))


def dma_transfer(kind: str, src: int, dst: int, count: int, stride_or_index: int) -> Op:
    return Op("dma_transfer", args=(kind, src, dst, count, stride_or_index))


def remote_atomic(op: str, addr: int, *operands) -> Op:
    return Op("remote_atomic", addr, args=(op, operands))


def queue_op(kind: str, queue, value: Any = None) -> Op:
    return Op("queue_op", value=value, args=(kind, queue))


def barrier(group) -> Op:
    return Op("barrier", args=group)


def reduce(group, op: str, contribution) -> Op:
    return Op("reduce", value=contribution, args=(group, op))


def poll(handle) -> Op:
    return Op("poll", args=handle)


def wait(handle) -> Op:
    return Op("wait", args=handle)


def flush() -> Op:
    return Op("flush")
