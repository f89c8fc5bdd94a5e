import numpy as np
import pytest

from traffic_twin.network import Link, LinkKind, LinkParams, Network, Node, parse_tntp
from traffic_twin.simulation import SENTINEL, Scenario, SimConfig

M = SENTINEL

# undirected node pairs of the Sioux Falls test network; every pair is two directed links
SIOUX_FALLS_PAIRS = (
    (1, 2), (1, 3), (2, 6), (3, 4), (3, 12), (4, 5), (4, 11), (5, 6), (5, 9), (6, 8),
    (7, 8), (7, 18), (8, 9), (8, 16), (9, 10), (10, 11), (10, 15), (10, 16), (10, 17),
    (11, 12), (11, 14), (12, 13), (13, 24), (14, 15), (14, 23), (15, 19), (15, 22),
    (16, 17), (16, 18), (17, 19), (18, 20), (19, 20), (20, 21), (20, 22), (21, 22),
    (21, 24), (22, 23), (23, 24),
)  # fmt: skip


def tntp_text(rows: list[tuple[int, int, float]], nodes: int) -> str:
    lines = [
        "<NUMBER OF ZONES> 0",
        f"<NUMBER OF NODES> {nodes}",
        "<FIRST THRU NODE> 1",
        f"<NUMBER OF LINKS> {len(rows)}",
        "<ORIGINAL HEADER>~\tInit node\tTerm node\tCapacity\tLength\tFree Flow Time\tB\tPower\tSpeed\tToll\tType\t;",
        "<END OF METADATA>",
        "",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for init, term, length in rows:
        lines.append(f"\t{init}\t{term}\t25900.2\t{length}\t6\t0.15\t4\t0\t0\t1\t;")

    return "\n".join(lines) + "\n"


def sioux_falls_text() -> str:
    rows = []
    for index, (a, b) in enumerate(SIOUX_FALLS_PAIRS):
        length = 0.25 + 0.05 * (index % 5)
        rows.append((a, b, length))
        rows.append((b, a, length))

    rows.sort()
    return tntp_text(rows, 24)


def chain_network(lengths=(40.0, 60.0, 40.0)) -> Network:
    """Inflow link, physical links and an outflow link in a row"""
    count = len(lengths)
    nodes = [Node(i + 1, virtual=i in (0, count)) for i in range(count + 1)]
    links = []
    for i, length in enumerate(lengths):
        kind = LinkKind.PHYSICAL
        if i == 0:
            kind = LinkKind.INFLOW
        elif i == count - 1:
            kind = LinkKind.OUTFLOW
        links.append(Link(i, i + 1, i + 2, length, kind))

    return Network(nodes, links, name="chain")


def y_network() -> Network:
    """
    One inflow link splitting into two parallel roads that rejoin.

    Links: 0 inflow (V1 -> A), 1 main road (A -> B), 2 bypass (A -> B),
    3 outflow (B -> V2).
    """
    nodes = [Node(1), Node(2), Node(10, virtual=True), Node(11, virtual=True)]
    links = [
        Link(0, 10, 1, 200.0, LinkKind.INFLOW),
        Link(1, 1, 2, 150.0),
        Link(2, 1, 2, 150.0),
        Link(3, 2, 11, 200.0, LinkKind.OUTFLOW),
    ]
    return Network(nodes, links, name="y")


def uniform_params(network: Network, **values) -> LinkParams:
    size = network.size
    defaults = {"u": 18.05, "kappa": 0.2, "beta": 2.5, "alpha": 2.505, "cost": 1.0}
    defaults.update(values)
    return LinkParams(**{kind: np.full(size, float(value)) for kind, value in defaults.items()})


@pytest.fixture
def chain() -> Network:
    return chain_network()


@pytest.fixture
def sioux_falls() -> Network:
    return parse_tntp(sioux_falls_text(), source="SiouxFalls_net.tntp")


@pytest.fixture
def single_agent_chain(chain) -> Scenario:
    return Scenario(chain, SimConfig(), vehicles=1, horizon=10.0, interval=1.0)
