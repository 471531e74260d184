"""Common container returned by every workload builder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional


def compare_vectors(got, want, rel: float = 1e-10) -> List[str]:
    if len(got) != len(want):
        return [f"length {len(got)} != {len(want)}"]
    bad = []
    for i, (g, w) in enumerate(zip(got, want)):
        if isinstance(g, float) or isinstance(w, float):
            ok = math.isclose(g, w, rel_tol=rel, abs_tol=rel)
        else:
            ok = g == w
        if not ok:
            bad.append(f"[{i}] {g!r} != {w!r}")
            if len(bad) >= 10:
                break
    return bad


@dataclass
class KernelProgram:
    """Spawned kernel: threads are already placed on the machine.

    ``collect()`` reads the functional output after the run; ``check()``
    compares it against the sequential oracle and returns a list of problems.
    """
    name: str
    variant: str
    threads: int
    collect: Callable[[], Any]
    oracle: Callable[[], Any]
    layout: Dict[str, int] = field(default_factory=dict)
    info: Dict[str, Any] = field(default_factory=dict)
    checker: Optional[Callable[[Any], List[str]]] = None

    def check(self) -> List[str]:
        got = self.collect()
        if self.checker is not None:
            return self.checker(got)
        return compare_vectors(got, self.oracle())
