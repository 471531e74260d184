import csv

import pytest

from dgassim.cli import main, run_experiment
from dgassim.config import from_dict, parse_config
from dgassim.kernel import ConfigurationError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg.machine.blocks == 16 and cfg.workload.kind == "spmv"
    assert cfg.warnings == []


def test_underprovisioned_network_warns():
    cfg = from_dict({"machine": {"blocks": 4, "topology": {"link_bandwidth": 2}, "memory": {"bandwidth": 8}}})
    assert any("network bandwidth" in w for w in cfg.warnings)


def test_bad_scheme_names_the_key():
    with pytest.raises(ConfigurationError, match=r"machine\.att\[0\]\.scheme"):
        from_dict({"machine": {"att": [{"region": "x", "scheme": "diagonal"}]}})


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigurationError, match=r"machine\.cache\.colour"):
        from_dict({"machine": {"cache": {"colour": "blue"}}})


def test_topology_must_match_blocks():
    with pytest.raises(ConfigurationError):
        from_dict({"machine": {"blocks": 8, "topology": {"dims": [4, 4]}}})


def _small(**w):
    d = {"machine": {"blocks": 4, "core": {"threads_per_mtc": 4}},
         "workload": {"kind": "spmv", "scale": 8, "edge_factor": 8}}
    d["workload"].update(w)
    return from_dict(d)


def test_sweep_normalizes_to_base(tmp_path):
    res = run_experiment(_small(), ["base", "selective", "dma"], out_dir=str(tmp_path))
    assert res.exit_status == 0
    rows = list(csv.reader(open(tmp_path / "comparison.csv")))
    assert rows[0][4] == "versus_base"
    assert float(rows[1][4]) == 1.0
    assert [r[0] for r in rows[1:]] == ["base", "selective", "dma"]
    for v in ("base", "selective", "dma"):
        assert (tmp_path / v / "summary.txt").exists()


def test_repeat_invocations_identical(tmp_path):
    names = ("summary.txt", "cpi.csv", "lines.csv", "bandwidth.csv", "scaleout.csv")
    argv = ["--workload", "bfs", "--scale", "7", "--blocks", "4", "--out", str(tmp_path / "r"),
            "--event-log", str(tmp_path / "ev.log")]
    snaps = []
    for _ in range(2):
        assert main(argv) == 0
        files = [tmp_path / "r" / "base" / n for n in names] + [tmp_path / "ev.log", tmp_path / "r" / "comparison.csv"]
        snaps.append([f.read_bytes() for f in files])
    assert snaps[0] == snaps[1]
    assert snaps[0][-2].count(b"\n") > 1000


def test_bad_config_exits_nonzero(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("machine:\n  blocks: 0\n")
    assert main(["--config", str(p)]) == 2
    assert "machine.blocks" in capsys.readouterr().err


def test_deadlock_exits_nonzero_with_dump(tmp_path, monkeypatch):
    import dgassim.cli as cli
    from dgassim import ops

    def hanging(machine, w, variant=None):
        from dgassim.workloads.base import KernelProgram
        machine.finalize()
        holder = {}

        def prog():
            h = yield ops.barrier(holder["g"])
            yield ops.wait(h)
        def absent():
            yield ops.ALU
        a = machine.spawn(0, 0, prog())
        b = machine.spawn(0, 0, absent())
        holder["g"] = machine.make_group([a.tid, b.tid])
        return KernelProgram("hang", "x", 2, lambda: [], lambda: [])
    monkeypatch.setattr(cli, "build_workload", hanging)
    res = run_experiment(_small(), ["base"], out_dir=str(tmp_path))
    assert res.exit_status == 1
    text = (tmp_path / "base" / "diagnostics.txt").read_text()
    assert "deadlock" in text and "blocked-on-handle" in text


def test_fault_is_reported_not_raised(monkeypatch):
    import dgassim.cli as cli
    from dgassim import ops

    def faulty(machine, w, variant=None):
        from dgassim.workloads.base import KernelProgram

        def prog():
            yield ops.load(8)       # below the heap: unmapped
        machine.spawn(0, 0, prog())
        return KernelProgram("bad", "x", 1, lambda: [], lambda: [])
    monkeypatch.setattr(cli, "build_workload", faulty)
    res = run_experiment(_small(), ["base"])
    assert res.exit_status == 1
    assert "unmapped" in res.runs[0].problems[0]
