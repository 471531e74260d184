import pytest

from dgassim.config import CoreConfig, MachineConfig, MemoryConfig, TopologyConfig
from dgassim.machine import Machine


def small_machine(blocks=1, mtc=1, threads=16, dims=None, event_log=None, **kw):
    """A machine with a handful of cores; keyword args replace whole config sections."""
    cfg = MachineConfig(blocks=blocks, core=CoreConfig(mtc_count=mtc, threads_per_mtc=threads, stc_count=1),
                        **kw)
    if dims is not None:
        cfg.topology.dims = list(dims)
    return Machine(cfg, event_log)


@pytest.fixture
def machine():
    return small_machine()


# acceptance criteria report one line each; collected here and printed at the end of the session
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[key])
