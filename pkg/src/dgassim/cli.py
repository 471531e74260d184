"""Command-line entry point: load config, run one workload or a variant sweep, write reports."""

from __future__ import annotations

import argparse
import copy
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from . import __version__
from .analysis import bandwidth_report, write_reports, _csv
from .config import RunConfig, from_dict, parse_config, validate
from .kernel import ConfigurationError, SimulationError
from .machine import Machine
from .workloads import build_workload

log = logging.getLogger("dgassim")


@dataclass
class VariantRun:
    variant: str
    ok: bool
    elapsed: int = 0
    work: int = 0
    reason: str = ""
    problems: List[str] = field(default_factory=list)
    report_dir: Optional[str] = None
    utilization: float = 0.0
    efficiency: float = 0.0
    fetched_bytes: int = 0

    @property
    def throughput(self) -> float:
        return self.work / self.elapsed if self.elapsed else 0.0


@dataclass
class ExperimentResult:
    runs: List[VariantRun]
    comparison: List[list]

    @property
    def exit_status(self) -> int:
        return 0 if self.runs and all(r.ok for r in self.runs) else 1

    def run(self, variant: str) -> VariantRun:
        return next(r for r in self.runs if r.variant == variant)


def run_variant(cfg: RunConfig, variant: str, out_dir: Optional[str] = None,
                event_log: Optional[str] = None) -> VariantRun:
    """Simulate one variant; never raises for simulation faults, reports them instead."""
    fh = open(event_log, "w") if event_log else None
    try:
        m = Machine(cfg.machine, fh)
        kp = build_workload(m, cfg.workload, variant)
        res = m.run()
    except SimulationError as exc:
        return VariantRun(variant, False, reason="fault", problems=[str(exc)])
    finally:
        if fh:
            fh.close()
    run = VariantRun(variant, res.ok, res.time, kp.info.get("work", 0), res.reason.value)
    if not res.ok:
        run.problems = ["simulation ended with " + res.reason.value] + res.blocked[:64]
    else:
        run.problems = list(m.problems) + [f"output mismatch: {p}" for p in kp.check()]
        run.ok = not run.problems
    if res.ok:
        bw = bandwidth_report(m.engine.ledger, controllers=m.blocks)
        run.utilization = bw.mean_controller_utilization
        run.efficiency = bw.efficiency
        run.fetched_bytes = bw.fetched_bytes
    if out_dir is not None:
        d = Path(out_dir) / variant
        d.mkdir(parents=True, exist_ok=True)
        run.report_dir = str(d)
        if res.ok:
            config = cfg.to_dict()
            config["workload"]["variant"] = variant
            write_reports(d, f"{cfg.workload.kind} {variant}", config, m.engine.ledger,
                          cfg.scaleout.nodes, cfg.scaleout.latency_delta, cfg.scaleout.internode_bandwidth,
                          extra={"termination": res.reason.value, "work items": run.work,
                                 "throughput (work/cycle)": run.throughput})
        if run.problems:
            (d / "diagnostics.txt").write_text("\n".join(run.problems) + "\n")
    return run


def _worker(args):
    return run_variant(*args)


def comparison_table(runs: List[VariantRun]) -> List[list]:
    ref = next((r for r in runs if r.variant == "base" and r.ok), None)
    ref = ref or next((r for r in runs if r.ok), None)
    rows = [["variant", "status", "cycles", "throughput", "versus_" + (ref.variant if ref else "base"),
             "controller_utilization", "useful_over_fetched", "fetched_bytes"]]
    for r in runs:
        rel = r.throughput / ref.throughput if ref and r.ok and ref.throughput else 0.0
        rows.append([r.variant, "ok" if r.ok else (r.reason or "failed"), r.elapsed, r.throughput, rel,
                     r.utilization, r.efficiency, r.fetched_bytes])
    return rows


def run_experiment(cfg: RunConfig, variants: Optional[List[str]] = None, out_dir: Optional[str] = None,
                   event_log: Optional[str] = None, jobs: int = 1) -> ExperimentResult:
    """Run each variant on the identical input and build the comparison table."""
    variants = variants or cfg.workload.variant.split(",")
    tasks = []
    for v in variants:
        c = copy.deepcopy(cfg)
        c.workload.variant = v
        validate(c)
        log_path = None
        if event_log:
            log_path = event_log if len(variants) == 1 else f"{event_log}.{v}"
        tasks.append((c, v, out_dir, log_path))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_worker, tasks))
    else:
        runs = [_worker(t) for t in tasks]
    table = comparison_table(runs)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "comparison.csv").write_text(_csv(table))
    return ExperimentResult(runs, table)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgassim", description=__doc__)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--workload", help="spmv | bfs | random_access | indirection_chain | random_walk | atomic_counter")
    p.add_argument("--variant", help="variant name or comma-separated sweep, e.g. base,selective,dma,cache_all")
    p.add_argument("--scale", type=int, help="RMAT scale (log2 vertices)")
    p.add_argument("--seed", type=int)
    p.add_argument("--blocks", type=int, help="blocks in the node (topology derived unless configured)")
    p.add_argument("--nodes", type=int, help="node count for the scale-out projection")
    p.add_argument("--out", help="report directory")
    p.add_argument("--event-log", help="write one line per event: time,seq,target,action")
    p.add_argument("--values-mode", choices=("int", "float"))
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for sweeps")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> RunConfig:
    if args.config:
        cfg = parse_config(args.config)
    else:
        cfg = from_dict({})
    w = cfg.workload
    if args.workload:
        w.kind = args.workload
        if args.variant is None and args.workload != "spmv":
            w.variant = "base"
    if args.variant:
        w.variant = args.variant
    if args.scale is not None:
        w.scale = args.scale
    if args.seed is not None:
        w.seed = args.seed
    if args.values_mode:
        w.values_mode = args.values_mode
    if args.blocks is not None:
        cfg.machine.blocks = args.blocks
        cfg.machine.topology.dims = None
    if args.nodes is not None:
        cfg.scaleout.nodes = args.nodes
    if args.out:
        cfg.outputs.report_dir = args.out
    if args.event_log:
        cfg.outputs.event_log = args.event_log
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigurationError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    for wmsg in cfg.warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    res = run_experiment(cfg, out_dir=cfg.outputs.report_dir, event_log=cfg.outputs.event_log, jobs=args.jobs)
    widths = [max(len(str(r[i]) if not isinstance(r[i], float) else f"{r[i]:.4f}") for r in res.comparison)
              for i in range(len(res.comparison[0]))]
    for row in res.comparison:
        cells = [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    for r in res.runs:
        for p in r.problems[:20]:
            print(f"{r.variant}: {p}", file=sys.stderr)
    return res.exit_status


if __name__ == "__main__":
    sys.exit(main())
