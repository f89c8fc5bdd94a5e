from pathlib import Path
import logging
import re

from traffic_twin.errors import TntpParseError
from traffic_twin.network.network import Link, LinkKind, Network, Node

__all__ = ["MILE", "parse_tntp", "read_tntp", "serialize_tntp"]

logger = logging.getLogger(__name__)

# meters per mile; default length scale for TNTP length columns
MILE = 1609.34

METADATA = re.compile(r"^<([^>]+)>\s*(.*)$")

COLUMNS = (
    "init_node",
    "term_node",
    "capacity",
    "length",
    "free_flow_time",
    "b",
    "power",
    "speed",
    "toll",
    "link_type",
)


def _header_count(metadata: dict[str, str], key: str, source: str) -> int:
    if key not in metadata:
        raise TntpParseError(f"Metadata header lacks <{key}>", None, source)

    try:
        return int(metadata[key])
    except ValueError:
        raise TntpParseError(f"<{key}> is not an integer: {metadata[key]!r}", None, source)


def parse_tntp(text: str, length_scale: float = MILE, source: str | Path = "<string>") -> Network:
    """
    Parse a TNTP ``_net.tntp`` network file.

    One directed physical link is made per data row. Nodes are numbered
    ``1..<NUMBER OF NODES>`` as the format prescribes, so isolated nodes
    survive parsing.

    :param text: file content
    :param length_scale: multiplier turning the length column into meters
    :param source: name used in error messages
    :raise TntpParseError: on malformed rows (naming the line) or header/row count mismatch
    """
    source = str(source)
    metadata: dict[str, str] = {}
    rows: list[tuple[int, int, int, tuple[float, ...]]] = []

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()

        if not line or line.startswith("~"):
            continue

        match = METADATA.match(line)
        if match:
            metadata[match.group(1).strip().upper()] = match.group(2).strip()
            continue

        if not line.endswith(";"):
            raise TntpParseError("Row is not terminated by ';'", number, source)

        fields = line[:-1].split()
        if len(fields) < 5:
            raise TntpParseError(
                f"Row has {len(fields)} columns, expected at least 5 "
                f"({', '.join(COLUMNS[:5])})",
                number,
                source,
            )

        try:
            init, term = int(fields[0]), int(fields[1])
            values = tuple(float(value) for value in fields[2:])
        except ValueError:
            raise TntpParseError(f"Row contains a non-numeric value: {line!r}", number, source)

        if values[1] * length_scale <= 0:
            raise TntpParseError("Link length must be positive", number, source)

        rows.append((number, init, term, values))

    node_count = _header_count(metadata, "NUMBER OF NODES", source)
    link_count = _header_count(metadata, "NUMBER OF LINKS", source)

    if link_count != len(rows):
        raise TntpParseError(
            f"Header declares {link_count} links but the file has {len(rows)} rows", None, source
        )

    for number, init, term, _ in rows:
        if not (1 <= init <= node_count and 1 <= term <= node_count):
            raise TntpParseError(
                f"Row references a node outside 1..{node_count} declared in the header",
                number,
                source,
            )

    nodes = [Node(node_id) for node_id in range(1, node_count + 1)]
    links = [
        Link(index, init, term, values[1] * length_scale, LinkKind.PHYSICAL, values)
        for index, (_, init, term, values) in enumerate(rows)
    ]

    logger.debug("Parsed %s: %d nodes, %d links", source, node_count, len(links))

    return Network(nodes, links, name=Path(source).name.removesuffix("_net.tntp"))


def read_tntp(path: Path | str, length_scale: float = MILE) -> Network:
    path = Path(path)
    return parse_tntp(path.read_text(encoding="utf8"), length_scale, path)


def _row_values(link: Link, length_scale: float) -> tuple[float, ...]:
    if link.attributes:
        return link.attributes

    return 0.0, link.length / length_scale, 0.0


def serialize_tntp(network: Network, length_scale: float = MILE) -> str:
    """
    Physical part of ``network`` as TNTP text.

    Rows keep the raw columns they were parsed from, so parsing the output
    with the same ``length_scale`` gives back an identical network.
    """
    physical = [link for link in network.links if not link.is_virtual]
    nodes = network.physical_nodes

    lines = [
        f"<NUMBER OF NODES> {len(nodes)}",
        f"<NUMBER OF LINKS> {len(physical)}",
        "<END OF METADATA>",
        "",
        "",
        "~\t" + "\t".join(COLUMNS) + "\t;",
    ]

    for link in physical:
        values = "\t".join(repr(value) for value in _row_values(link, length_scale))
        lines.append(f"\t{link.from_node}\t{link.to_node}\t{values}\t;")

    return "\n".join(lines) + "\n"
