import pytest

from mpip.netsim.runner import Network
from mpip.scenario import parse_scenario

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


TWO_PATH = """\
node a
node b
iface a 10.0.1.1
iface a 10.0.2.1
iface b 10.0.1.2
iface b 10.0.2.2
link 10.0.1.1 10.0.1.2 {bw1} {d1} {loss1} 100
link 10.0.2.1 10.0.2.2 {bw2} {d2} {loss2} 100
{extra}
duration {duration}
seed {seed}
"""


def two_path(extra: str = "", duration: int = 3000, seed: int = 1, bw1=10, bw2=10,
             d1=5, d2=5, loss1=0, loss2=0) -> str:
    return TWO_PATH.format(extra=extra, duration=duration, seed=seed, bw1=bw1, bw2=bw2,
                           d1=d1, d2=d2, loss1=loss1, loss2=loss2)


def network(text: str, seed=None) -> Network:
    return Network(parse_scenario(text), seed)


@pytest.fixture
def make_network():
    return network


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:>3} {'PASS' if ok else 'FAIL'}  {detail}")
