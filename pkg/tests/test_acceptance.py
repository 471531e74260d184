"""Acceptance criteria, one test each.  Every test prints a PASS/FAIL line with the
measured numbers; the lines are repeated in the pytest terminal summary.

The RMAT-13 SpMV runs (about 25 s each) are shared through a module fixture.
Run standalone with ``python tests/test_acceptance.py``.
"""

import io
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import CRITERIA  # noqa: E402
from dgassim import ops  # noqa: E402
from dgassim.analysis import (  # noqa: E402
    bandwidth_report, cacheline_histogram, extrapolate_scaleout, scaleout_inputs)
from dgassim.cli import run_experiment  # noqa: E402
from dgassim.config import CoreConfig, MachineConfig, MemoryConfig, from_dict  # noqa: E402
from dgassim.machine import Machine  # noqa: E402
from dgassim.workloads import build_workload  # noqa: E402

VARIANTS = ("base", "selective", "dma", "cache_all")


def report(num, name, ok, detail):
    line = f"criterion {num} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    CRITERIA[num] = line
    print(line)
    assert ok, line


def simulate(overrides, variant=None):
    cfg = from_dict(overrides)
    m = Machine(cfg.machine)
    kp = build_workload(m, cfg.workload, variant)
    res = m.run()
    return cfg, m, kp, res


@pytest.fixture(scope="module")
def spmv13():
    """Default machine, RMAT-13 edge factor 16, integer values: one run per variant."""
    out = {}
    for v in VARIANTS:
        cfg, m, kp, res = simulate({"workload": {"kind": "spmv", "scale": 13, "edge_factor": 16}}, v)
        led = m.engine.ledger
        bw = bandwidth_report(led, controllers=m.blocks)
        out[v] = {
            "ok": res.ok and not m.problems and not kp.check(),
            "cycles": res.time,
            "nnz": kp.info["nnz"],
            "throughput": kp.info["nnz"] / res.time,
            "util": bw.mean_controller_utilization,
            "eff": bw.efficiency,
            "fetched": bw.fetched_bytes,
            "model": scaleout_inputs(led, latency_delta=cfg.scaleout.latency_delta,
                                     internode_bandwidth=cfg.scaleout.internode_bandwidth),
            "nodes": cfg.scaleout.nodes,
            "elem_in": sum(v2 for (dst, tag), v2 in led.delivered_payload.items() if tag == "dma_elem"),
            "idx_on_links": sum(v2 for (link, tag), v2 in led.link_payload.items() if tag.startswith("dma_idx")),
        }
    return out


def test_c1_spmv_variant_ordering(spmv13):
    t = {v: spmv13[v]["throughput"] for v in VARIANTS}
    sel, dma, ca = t["selective"] / t["base"], t["dma"] / t["selective"], t["cache_all"] / t["base"]
    ok = (all(spmv13[v]["ok"] for v in VARIANTS)
          and t["dma"] > t["selective"] > t["base"] > t["cache_all"]
          and 1.3 <= sel <= 3.0 and 1.2 <= dma <= 2.0 and ca < 1.0)
    report(1, "SpMV variant ordering", ok,
           "nnz/cycle " + ", ".join(f"{v}={t[v]:.3f}" for v in VARIANTS)
           + f"; selective/base={sel:.2f} [1.3,3.0] dma/selective={dma:.2f} [1.2,2.0] cache_all/base={ca:.2f} <1")


def test_c2_bandwidth_saturation(spmv13):
    d = spmv13["dma"]
    ratio = spmv13["cache_all"]["fetched"] / spmv13["base"]["fetched"]
    ok = d["util"] >= 0.90 and d["eff"] >= 0.95 and ratio >= 2.0
    report(2, "bandwidth saturation", ok,
           f"dma utilization={d['util']:.3f} (>=0.90) useful/fetched={d['eff']:.3f} (>=0.95); "
           f"cache_all/base fetched bytes={ratio:.2f} (>=2)")


def test_c3_cacheline_utilization_shape():
    cfg, m, kp, res = simulate({"workload": {"kind": "spmv", "scale": 13},
                                "machine": {"cache": {"prefetch": "next_line"}}}, "cache_all")
    led = m.engine.ledger
    allh = cacheline_histogram(led)
    vec = cacheline_histogram(led, [kp.info["vector_region"]])
    mass = allh.fraction(0) + allh.fraction(8) + allh.fraction(64)
    ok = res.ok and not kp.check() and mass >= 0.80 and vec.mode == 8
    report(3, "cache-line utilization shape", ok,
           f"mass in {{0,8,64}}={mass:.3f} (>=0.80) over {allh.lines} lines; vector-stream mode={vec.mode} B "
           f"(bucket 8 share {vec.fraction(8):.3f})")


def _barrel(T, L, n=200):
    cfg = MachineConfig(blocks=1, core=CoreConfig(mtc_count=1, threads_per_mtc=T, stc_count=1),
                        memory=MemoryConfig(dram_latency=L - 4, bandwidth=1 << 20, local_latency=2))
    m = Machine(cfg)
    base = m.alloc("a", 8 * 4096)

    def prog(k):
        for i in range(n):
            yield ops.load(base + 8 * ((k * n + i) % 4096))
    for k in range(T):
        m.spawn(0, 0, prog(k))
    res = m.run()
    return T * n / res.time if res.ok else 0.0


def test_c4_barrel_law():
    worst = 0.0
    cells = []
    for T in (1, 4, 16, 64):
        for L in (50, 100, 200):
            want = min(T / (L + 1), 1.0)
            err = abs(_barrel(T, L) - want) / want
            worst = max(worst, err)
            cells.append(f"T{T}/L{L}:{err * 100:.1f}%")
    report(4, "barrel-core law", worst <= 0.05, f"max relative error {worst * 100:.2f}% (<=5%) " + " ".join(cells))


SEEDS = range(1, 11)


def test_c5_functional_oracles():
    bad = []
    for seed in SEEDS:
        for v in VARIANTS:
            _, m, kp, res = simulate({"workload": {"kind": "spmv", "scale": 10, "seed": seed,
                                                   "values_mode": "int"}}, v)
            if not res.ok or kp.collect() != kp.oracle() or m.problems:
                bad.append(f"spmv/{v}/seed{seed}")
        _, m, kp, res = simulate({"workload": {"kind": "bfs", "scale": 10, "seed": seed}})
        if not res.ok or kp.check() or m.problems:
            bad.append(f"bfs/seed{seed}")
    report(5, "functional oracles", not bad,
           f"{len(SEEDS)} seeds x (4 SpMV variants bit-exact + BFS tree validation) at RMAT-10; "
           f"failures: {bad or 'none'}")


def test_c6_synchronization_traffic():
    stats = {}
    for v in ("atomic", "lock"):
        _, m, kp, res = simulate({"workload": {"kind": "atomic_counter", "threads": 64,
                                               "increments_per_thread": 4}}, v)
        led = m.engine.ledger
        stats[v] = (res.time, led.header_bytes + led.payload_bytes, kp.collect()[0], res.ok)
    a, lk = stats["atomic"], stats["lock"]
    ok = a[3] and lk[3] and a[0] < lk[0] and a[1] < lk[1] and a[2] == lk[2] == 64 * 4
    report(6, "synchronization traffic", ok,
           f"64 threads x 4 increments: atomic {a[0]} cycles/{a[1]} network bytes, lock {lk[0]} cycles/"
           f"{lk[1]} bytes; final counters {a[2]}, {lk[2]} (expect 256)")


def test_c7_dma_traffic_provenance(spmv13):
    d = spmv13["dma"]
    ok = d["elem_in"] == 8 * d["nnz"] and d["idx_on_links"] == 0
    report(7, "DMA traffic provenance", ok,
           f"element payload into requesting blocks={d['elem_in']} vs 8*nnz={8 * d['nnz']}; "
           f"index payload crossing links={d['idx_on_links']}")


def test_c8_scaleout_plausibility(spmv13):
    parts = []
    ok = True
    for v in VARIANTS:
        model = spmv13[v]["model"]
        n_max = spmv13[v]["nodes"]
        curve = [extrapolate_scaleout(model, n) for n in range(1, 65)]
        s16 = curve[n_max - 1]
        mono = all(b >= a for a, b in zip(curve, curve[1:]))
        ok &= curve[0] == 1.0 and mono and 8 <= s16 <= 16
        parts.append(f"{v}={s16:.2f}")
    report(8, "scale-out plausibility", ok,
           "N=16 speedup " + ", ".join(parts) + " (band [8,16]); N=1 is 1.0; monotone over N=1..64")


def test_c9_determinism(tmp_path):
    cfg = from_dict({"workload": {"kind": "spmv", "scale": 10, "seed": 3, "values_mode": "float"},
                     "machine": {"blocks": 4}})
    names = ("summary.txt", "cpi.csv", "lines.csv", "bandwidth.csv", "scaleout.csv")
    snaps = []
    for _ in range(2):
        res = run_experiment(cfg, list(VARIANTS), out_dir=str(tmp_path / "r"), event_log=str(tmp_path / "ev"))
        files = [tmp_path / "r" / "comparison.csv"]
        files += [tmp_path / "r" / v / n for v in VARIANTS for n in names]
        files += [Path(f"{tmp_path / 'ev'}.{v}") for v in VARIANTS]
        snaps.append((res.exit_status, [f.read_bytes() for f in files]))
    same = snaps[0] == snaps[1]
    size = sum(len(b) for b in snaps[0][1])
    report(9, "determinism", same and snaps[0][0] == 0,
           f"two runs of 4 variants (float values): {len(snaps[0][1])} files, {size} bytes, identical={same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
