from dataclasses import dataclass, asdict
from enum import Enum
from functools import cached_property
from json import dump, load
from pathlib import Path
from typing import Any, Sequence
import logging

import networkx as nx
import numpy as np

from traffic_twin.errors import NetworkInvalid

__all__ = [
    "LinkKind",
    "Link",
    "Node",
    "Network",
    "DEADEND_POLICIES",
    "attach_virtual_links",
    "save_network",
    "load_network",
]

logger = logging.getLogger(__name__)

DEADEND_POLICIES = ("keep_both", "coin")


class LinkKind(str, Enum):
    PHYSICAL = "physical"
    INFLOW = "virtual_inflow"
    OUTFLOW = "virtual_outflow"


@dataclass(frozen=True)
class Link:
    id: int
    from_node: int
    to_node: int
    # meters
    length: float
    kind: LinkKind = LinkKind.PHYSICAL
    # raw TNTP columns after term_node, kept for serialization
    attributes: tuple[float, ...] = ()

    @property
    def is_virtual(self) -> bool:
        return self.kind is not LinkKind.PHYSICAL


@dataclass(frozen=True)
class Node:
    id: int
    virtual: bool = False


class Network:
    """
    Directed road network (immutable).

    Links are indexed by position; ``links[i].id == i``. The adjacency tensor
    has ``A[i, j] = 1`` iff link ``j`` departs the node where link ``i`` ends.
    """

    def __init__(self, nodes: Sequence[Node], links: Sequence[Link], name: str = "network"):
        self._nodes: tuple[Node, ...] = tuple(nodes)
        self._links: tuple[Link, ...] = tuple(links)
        self.name = name
        self._validate()

    def _validate(self):
        node_ids = {node.id for node in self._nodes}

        if len(node_ids) != len(self._nodes):
            raise NetworkInvalid("Node ids must be unique")

        for index, link in enumerate(self._links):
            if link.id != index:
                raise NetworkInvalid(f"Link at position {index} has id {link.id}")

            if link.from_node not in node_ids or link.to_node not in node_ids:
                raise NetworkInvalid(f"Link {link.id} references an unknown node")

            if not np.isfinite(link.length) or link.length <= 0:
                raise NetworkInvalid(f"Link {link.id} must have a positive finite length")

    @property
    def nodes(self) -> tuple[Node, ...]:
        return self._nodes

    @property
    def links(self) -> tuple[Link, ...]:
        return self._links

    @property
    def size(self) -> int:
        return len(self._links)

    def __len__(self):
        return len(self._links)

    @cached_property
    def lengths(self) -> np.ndarray:
        lengths = np.array([link.length for link in self._links], dtype=np.float64)
        lengths.flags.writeable = False
        return lengths

    @cached_property
    def adjacency(self) -> np.ndarray:
        ends = np.array([link.to_node for link in self._links])
        starts = np.array([link.from_node for link in self._links])
        adjacency = (ends[:, None] == starts[None, :]).astype(np.float64)
        np.fill_diagonal(adjacency, 0.0)
        adjacency.flags.writeable = False
        return adjacency

    def _indices(self, kind: LinkKind) -> np.ndarray:
        return np.array([link.id for link in self._links if link.kind is kind], dtype=np.intp)

    @cached_property
    def physical_links(self) -> np.ndarray:
        return self._indices(LinkKind.PHYSICAL)

    @cached_property
    def inflow_links(self) -> np.ndarray:
        return self._indices(LinkKind.INFLOW)

    @cached_property
    def outflow_links(self) -> np.ndarray:
        return self._indices(LinkKind.OUTFLOW)

    @cached_property
    def sink_mask(self) -> np.ndarray:
        """1 for virtual outflow links, whose agents do not interact"""
        mask = np.zeros(self.size)
        mask[self.outflow_links] = 1.0
        mask.flags.writeable = False
        return mask

    @property
    def physical_nodes(self) -> tuple[Node, ...]:
        return tuple(node for node in self._nodes if not node.virtual)

    def successors(self, link: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[link])

    def junctions(self) -> dict[int, np.ndarray]:
        """Links grouped by the node they depart from"""
        groups: dict[int, list[int]] = {}
        for link in self._links:
            groups.setdefault(link.from_node, []).append(link.id)

        return {node: np.array(ids, dtype=np.intp) for node, ids in sorted(groups.items())}

    @cached_property
    def link_graph(self) -> nx.DiGraph:
        """Links as nodes, an edge wherever one link feeds the next"""
        return nx.from_numpy_array(self.adjacency, create_using=nx.DiGraph)

    @cached_property
    def road_graph(self) -> nx.Graph:
        """Undirected graph of physical nodes joined by physical links"""
        graph = nx.Graph()
        graph.add_nodes_from(node.id for node in self.physical_nodes)
        graph.add_edges_from(
            (link.from_node, link.to_node)
            for link in self._links
            if not link.is_virtual and link.from_node != link.to_node
        )
        return graph

    def reachable_links(self) -> np.ndarray:
        """Boolean mask of links reachable from any virtual inflow link"""
        seen = np.zeros(self.size, dtype=bool)

        for link in self.inflow_links:
            seen[int(link)] = True
            seen[list(nx.descendants(self.link_graph, int(link)))] = True

        return seen

    def with_lengths(self, lengths: Sequence[float]) -> "Network":
        links = [
            Link(link.id, link.from_node, link.to_node, float(length), link.kind, link.attributes)
            for link, length in zip(self._links, lengths, strict=True)
        ]
        return Network(self._nodes, links, self.name)

    def to_dict(self) -> dict[str, Any]:
        links = []
        for link in self._links:
            data = asdict(link)
            data["kind"] = link.kind.value
            data["attributes"] = list(link.attributes)
            links.append(data)

        return {
            "name": self.name,
            "nodes": [asdict(node) for node in self._nodes],
            "links": links,
            "adjacency": [[int(i), int(j)] for i, j in zip(*np.nonzero(self.adjacency))],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Network":
        try:
            nodes = [Node(int(node["id"]), bool(node.get("virtual", False))) for node in data["nodes"]]
            links = [
                Link(
                    int(link["id"]),
                    int(link["from_node"]),
                    int(link["to_node"]),
                    float(link["length"]),
                    LinkKind(link.get("kind", LinkKind.PHYSICAL.value)),
                    tuple(float(value) for value in link.get("attributes", ())),
                )
                for link in data["links"]
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise NetworkInvalid(f"Network description is malformed: {e}") from e

        network = cls(nodes, links, data.get("name", "network"))

        if "adjacency" in data:
            stored = {(int(i), int(j)) for i, j in data["adjacency"]}
            derived = {(int(i), int(j)) for i, j in zip(*np.nonzero(network.adjacency))}
            if stored != derived:
                raise NetworkInvalid("Stored adjacency does not match link endpoints")

        return network

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented

        return self._nodes == other._nodes and self._links == other._links

    def __hash__(self):
        return hash((self._nodes, self._links))

    def __repr__(self):
        return (
            f"Network<{self.name}>(nodes={len(self._nodes)}, links={self.size}, "
            f"physical={len(self.physical_links)})"
        )


def attach_virtual_links(
    network: Network,
    rng: np.random.Generator,
    deadend_policy: str = "keep_both",
    virtual_length: float = 1000.0,
) -> Network:
    """
    Give every physical node a virtual inflow link and/or a virtual outflow link.

    Each node first gets one of each, every link ending at a fresh virtual
    node. A fair coin drawn from ``rng`` then removes one of the pair at every
    node, except at dead-ends (at most one neighbouring node) under the
    ``keep_both`` policy.

    :param network: physical network, as returned by the TNTP parser
    :param rng: generator for the keep/remove coins
    :param deadend_policy: ``keep_both`` or ``coin`` (dead-ends flip like any node)
    :param virtual_length: length of every virtual link in meters
    :raise NetworkInvalid: if some physical link cannot be reached from an inflow link
    """
    if deadend_policy not in DEADEND_POLICIES:
        raise ValueError(f"Unknown dead-end policy {deadend_policy!r}")

    if network.inflow_links.size or network.outflow_links.size:
        raise NetworkInvalid("Network already has virtual links")

    nodes = list(network.nodes)
    links = list(network.links)
    next_node = max((node.id for node in nodes), default=0) + 1
    roads = network.road_graph
    deadends = 0

    for node in network.physical_nodes:
        keep_inflow = keep_outflow = True

        if roads.degree(node.id) <= 1 and deadend_policy == "keep_both":
            deadends += 1
        else:
            keep_inflow = bool(rng.integers(2) == 0)
            keep_outflow = not keep_inflow

        if keep_inflow:
            nodes.append(Node(next_node, virtual=True))
            links.append(Link(len(links), next_node, node.id, virtual_length, LinkKind.INFLOW))
            next_node += 1

        if keep_outflow:
            nodes.append(Node(next_node, virtual=True))
            links.append(Link(len(links), node.id, next_node, virtual_length, LinkKind.OUTFLOW))
            next_node += 1

    result = Network(nodes, links, network.name)

    reachable = result.reachable_links()
    unreachable = [int(index) for index in result.physical_links if not reachable[index]]
    if unreachable:
        raise NetworkInvalid(
            f"Physical links {unreachable} are not reachable from any virtual inflow link; "
            "choose another seed"
        )

    logger.debug(
        "Attached virtual links to %s: %d nodes, %d links (%d dead-ends)",
        network.name,
        len(result.nodes),
        result.size,
        deadends,
    )

    return result


def save_network(network: Network, path: Path | str, params=None) -> None:
    """
    Write the network (and optionally its link parameters) as JSON.

    :param params: :class:`~traffic_twin.network.params.LinkParams` to include
    """
    data = network.to_dict()
    if params is not None:
        data["params"] = params.to_dict()

    with Path(path).open("w", encoding="utf8") as f:
        dump(data, f, ensure_ascii=False, indent=2)


def load_network(path: Path | str):
    """
    Read a network written by :func:`save_network`.

    :return: tuple of the network and its parameters (``None`` if absent)
    """
    from traffic_twin.network.params import LinkParams

    with Path(path).open("r", encoding="utf8") as f:
        data = load(f)

    if not isinstance(data, dict):
        raise NetworkInvalid(f"Network file contains invalid data type: {type(data).__name__}")

    network = Network.from_dict(data)
    params = LinkParams.from_dict(data["params"]) if "params" in data else None
    return network, params
