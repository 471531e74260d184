"""Post-run diagnostics: CPI stacks, line-utilization histograms, bandwidth, scale-out projection.

Everything here is a pure function of a finished run's ledger, so the same
ledger always produces byte-identical reports.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .kernel import CATEGORIES, SimulationError, StatsLedger

BUCKETS = tuple(range(0, 65, 8))


# -- CPI stacks ---------------------------------------------------------------

@dataclass
class CpiStack:
    cycles: Dict[str, int]
    instructions: int
    threads: int

    @property
    def total_cycles(self) -> int:
        return sum(self.cycles.values())

    @property
    def cpi(self) -> Dict[str, float]:
        n = self.instructions
        return {c: (v / n if n else 0.0) for c, v in self.cycles.items()}

    @property
    def total_cpi(self) -> float:
        return self.total_cycles / self.instructions if self.instructions else 0.0


def cpi_stack(ledger: StatsLedger, group: Optional[str] = None) -> CpiStack:
    """Machine-wide (or one thread group's) stack; cycles are summed over threads,
    so the per-category CPI is the thread-cycle-weighted mean."""
    bad = ledger.check_conservation()
    if bad:
        raise SimulationError(f"cycle attribution not conserved for threads {bad[:8]}")
    cycles = dict.fromkeys(CATEGORIES, 0)
    instr = 0
    threads = 0
    for tid, attr in ledger.cycle_attribution.items():
        if group is not None and ledger.thread_group.get(tid) != group:
            continue
        threads += 1
        instr += ledger.instructions[tid]
        for name, v in zip(CATEGORIES, attr):
            cycles[name] += v
    return CpiStack(cycles, instr, threads)


def cpi_stacks_by_group(ledger: StatsLedger) -> Dict[str, CpiStack]:
    groups = sorted(set(ledger.thread_group.values()))
    out = {"all": cpi_stack(ledger)}
    for g in groups:
        out[g] = cpi_stack(ledger, g)
    return out


# -- cache-line utilization ----------------------------------------------------

@dataclass
class LineUtilizationHistogram:
    counts: List[int]

    @property
    def lines(self) -> int:
        return sum(self.counts)

    @property
    def fractions(self) -> List[float]:
        n = self.lines
        return [c / n if n else 0.0 for c in self.counts]

    def fraction(self, bytes_used: int) -> float:
        return self.fractions[BUCKETS.index(bytes_used)]

    @property
    def mode(self) -> Optional[int]:
        if not self.lines:
            return None
        best = max(range(len(self.counts)), key=lambda i: (self.counts[i], -i))
        return BUCKETS[best]


def cacheline_histogram(ledger: StatsLedger, regions: Optional[Sequence[str]] = None) -> LineUtilizationHistogram:
    """Bucket ``b`` counts lines whose used-byte count rounds up to ``b`` (8-byte buckets)."""
    counts = [0] * len(BUCKETS)
    for region, hist in ledger.line_hist.items():
        if regions is not None and region not in regions:
            continue
        for i, c in enumerate(hist):
            counts[i] += c
    return LineUtilizationHistogram(counts)


# -- bandwidth -----------------------------------------------------------------

@dataclass
class BandwidthReport:
    elapsed: int
    controllers: Dict[int, Dict[str, float]]
    links: Dict[tuple, float]

    @property
    def mean_controller_utilization(self) -> float:
        if not self.controllers:
            return 0.0
        return sum(c["utilization"] for c in self.controllers.values()) / len(self.controllers)

    @property
    def efficiency(self) -> float:
        fetched = sum(c["fetched_bytes"] for c in self.controllers.values())
        useful = sum(c["useful_bytes"] for c in self.controllers.values())
        return useful / fetched if fetched else 0.0

    @property
    def fetched_bytes(self) -> int:
        return int(sum(c["fetched_bytes"] for c in self.controllers.values()))

    @property
    def mean_link_utilization(self) -> float:
        return sum(self.links.values()) / len(self.links) if self.links else 0.0


def bandwidth_report(ledger: StatsLedger, elapsed: Optional[int] = None,
                     controllers: Optional[int] = None) -> BandwidthReport:
    elapsed = ledger.elapsed if elapsed is None else elapsed
    ids = sorted(ledger.controller_bytes) if controllers is None else range(controllers)
    ctrl = {}
    for cid in ids:
        c = ledger.controller_bytes.get(cid, {"useful_bytes": 0, "fetched_bytes": 0, "busy_cycles": 0, "requests": 0})
        util = c["busy_cycles"] / elapsed if elapsed else 0.0
        eff = c["useful_bytes"] / c["fetched_bytes"] if c["fetched_bytes"] else 0.0
        ctrl[cid] = {"utilization": util, "useful_bytes": c["useful_bytes"], "fetched_bytes": c["fetched_bytes"],
                     "busy_cycles": c["busy_cycles"], "requests": c["requests"], "efficiency": eff}
    links = {link: (busy / elapsed if elapsed else 0.0) for link, busy in sorted(ledger.link_busy.items())}
    return BandwidthReport(elapsed, ctrl, links)


# -- scale-out -----------------------------------------------------------------

@dataclass
class ScaleOutModel:
    """Inputs and parameters of the multi-node projection.

    ``throughput`` is memory operations per cycle on one node, ``concurrency``
    the number of threads, ``remote_fraction`` the share of operations that
    leave their block and ``bytes_per_remote_op`` the network bytes (both
    directions, headers included) such an operation moves.
    """
    throughput: float
    concurrency: int
    remote_fraction: float
    bytes_per_remote_op: float
    latency_delta: float = 200.0
    internode_bandwidth: float = 64.0

    @property
    def op_time(self) -> float:
        # Little's law: cycles each thread spends per operation on one node
        return self.concurrency / self.throughput if self.throughput else 0.0

    def internode_fraction(self, nodes: int) -> float:
        return self.remote_fraction * (nodes - 1) / nodes

    def terms(self, nodes: int) -> Dict[str, float]:
        """Absolute multi-node throughput bounds (operations/cycle)."""
        if nodes < 1:
            raise ValueError("node count must be >= 1")
        x1 = self.throughput
        f = self.internode_fraction(nodes)
        compute = nodes * x1
        t = self.op_time
        latency = compute * (t / (t + f * self.latency_delta)) if t + f * self.latency_delta > 0 else compute
        per_op = f * self.bytes_per_remote_op
        bandwidth = nodes * self.internode_bandwidth / per_op if per_op > 0 else float("inf")
        return {"compute": compute, "latency": latency, "bandwidth": bandwidth}

    def raw_speedup(self, nodes: int) -> float:
        if self.throughput <= 0:
            return 1.0
        return min(self.terms(nodes).values()) / self.throughput


def scaleout_inputs(ledger: StatsLedger, elapsed: Optional[int] = None, latency_delta: float = 200.0,
                    internode_bandwidth: float = 64.0) -> ScaleOutModel:
    elapsed = ledger.elapsed if elapsed is None else elapsed
    ops = ledger.mem_ops
    remote = ledger.remote_mem_ops
    net_bytes = ledger.header_bytes + ledger.payload_bytes
    return ScaleOutModel(
        throughput=ops / elapsed if elapsed else 0.0,
        concurrency=len(ledger.cycle_attribution),
        remote_fraction=remote / ops if ops else 0.0,
        bytes_per_remote_op=net_bytes / remote if remote else 0.0,
        latency_delta=latency_delta,
        internode_bandwidth=internode_bandwidth,
    )


def extrapolate_scaleout(model: ScaleOutModel, nodes: int) -> float:
    """Projected speedup over one node; monotone non-decreasing in ``nodes`` and <= nodes.

    A larger machine can always leave nodes idle, so the projection is the
    best raw three-term bound over all node counts up to ``nodes``.
    """
    if nodes < 1:
        raise ValueError("node count must be >= 1")
    best = 1.0
    for k in range(2, nodes + 1):
        best = max(best, min(model.raw_speedup(k), float(k)))
    return best


# -- report files ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv(rows: List[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def cpi_csv(ledger: StatsLedger) -> str:
    rows = [["group", "threads", "instructions", *[f"cpi_{c}" for c in CATEGORIES], "cpi_total"]]
    for name, st in cpi_stacks_by_group(ledger).items():
        cpi = st.cpi
        rows.append([name, st.threads, st.instructions, *[cpi[c] for c in CATEGORIES], st.total_cpi])
    return _csv(rows)


def lines_csv(ledger: StatsLedger) -> str:
    rows = [["region", "lines", *[f"frac_{b}B" for b in BUCKETS]]]
    for region in sorted(ledger.line_hist):
        h = cacheline_histogram(ledger, [region])
        rows.append([region, h.lines, *h.fractions])
    h = cacheline_histogram(ledger)
    rows.append(["all", h.lines, *h.fractions])
    return _csv(rows)


def bandwidth_csv(report: BandwidthReport) -> str:
    rows = [["kind", "id", "utilization", "useful_bytes", "fetched_bytes", "efficiency"]]
    for cid, c in report.controllers.items():
        rows.append(["controller", cid, c["utilization"], int(c["useful_bytes"]), int(c["fetched_bytes"]),
                     c["efficiency"]])
    for (a, b), u in report.links.items():
        rows.append(["link", f"{a}->{b}", u, "", "", ""])
    return _csv(rows)


def scaleout_csv(model: ScaleOutModel, max_nodes: int) -> str:
    rows = [["nodes", "speedup", "compute_bound", "latency_bound", "bandwidth_bound"]]
    x1 = model.throughput or 1.0
    n = 1
    while True:
        t = model.terms(n)
        rows.append([n, extrapolate_scaleout(model, n), t["compute"] / x1, t["latency"] / x1,
                     t["bandwidth"] / x1 if t["bandwidth"] != float("inf") else "inf"])
        if n >= max_nodes:
            break
        n = min(n * 2, max_nodes)
    return _csv(rows)


def summary_text(title: str, config: dict, ledger: StatsLedger, model: ScaleOutModel, nodes: int,
                 extra: Optional[Dict[str, object]] = None) -> str:
    bw = bandwidth_report(ledger)
    st = cpi_stack(ledger)
    hist = cacheline_histogram(ledger)
    out = [f"dgassim {__version__} report: {title}", ""]
    out.append("configuration:")
    for line in json.dumps(config, indent=2, sort_keys=True).splitlines():
        out.append("  " + line)
    out.append("")
    out.append(f"elapsed cycles: {ledger.elapsed}")
    out.append(f"threads: {st.threads}  instructions: {st.instructions}")
    for k, v in (extra or {}).items():
        out.append(f"{k}: {_fmt(v)}")
    out.append("cpi stack: " + "  ".join(f"{c}={v:.3f}" for c, v in st.cpi.items()) + f"  total={st.total_cpi:.3f}")
    out.append(f"controller utilization (mean): {bw.mean_controller_utilization:.4f}")
    out.append(f"useful/fetched bytes: {bw.efficiency:.4f}  fetched bytes: {bw.fetched_bytes}")
    out.append(f"link utilization (mean): {bw.mean_link_utilization:.4f}")
    out.append(f"packets: injected {ledger.packets_injected} delivered {ledger.packets_delivered}; "
               f"header bytes {ledger.header_bytes} payload bytes {ledger.payload_bytes}")
    if hist.lines:
        out.append("line utilization: " + "  ".join(f"{b}B={f:.3f}" for b, f in zip(BUCKETS, hist.fractions)))
    out.append(f"scale-out model: latency_delta={model.latency_delta} internode_bandwidth={model.internode_bandwidth} "
               f"remote_fraction={model.remote_fraction:.4f} bytes_per_remote_op={model.bytes_per_remote_op:.2f}")
    out.append(f"projected speedup at {nodes} nodes: {extrapolate_scaleout(model, nodes):.3f}")
    return "\n".join(out) + "\n"


def write_reports(out_dir, title: str, config: dict, ledger: StatsLedger, nodes: int,
                  latency_delta: float, internode_bandwidth: float,
                  extra: Optional[Dict[str, object]] = None) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = scaleout_inputs(ledger, latency_delta=latency_delta, internode_bandwidth=internode_bandwidth)
    files = {
        "summary.txt": summary_text(title, config, ledger, model, nodes, extra),
        "cpi.csv": cpi_csv(ledger),
        "lines.csv": lines_csv(ledger),
        "bandwidth.csv": bandwidth_csv(bandwidth_report(ledger)),
        "scaleout.csv": scaleout_csv(model, nodes),
    }
    paths = {}
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths[name] = p
    return paths
