"""
Genotype artifacts.

JSON: {"schema_version": 1, "normal": [[[pred, op], [pred, op]], ...x4], "reduce": ...},
written with sorted keys and two-space indent.

DOT: one digraph per cell type ("normal", then "reduce"). Nodes c_{k-2},
c_{k-1}, 0..3, c_{k}; each chosen op is an edge labeled with the op name,
each intermediate node has an unlabeled edge into c_{k}.
"""

import json
import logging
import re
from typing import Dict, List

from graphviz import Digraph

from src.search_space.genotypes import CellGene, CellTopology, Genotype, genotype_from_pairs
from src.utils.errors import GenotypeError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INPUT_NAMES = ("c_{k-2}", "c_{k-1}")
OUTPUT_NAME = "c_{k}"

_EDGE_RE = re.compile(r'^\s*"?([^"\s]+)"?\s*->\s*"?([^"\s\[]+)"?\s*(?:\[label="?([^"\]\s]+)"?\])?\s*$')
_GRAPH_RE = re.compile(r"digraph (\w+) \{\n(.*?)\n\}", re.S)
_SCHEMA_RE = re.compile(r"schema_version=(\d+)")


def _node_name(pred: int) -> str:
    return INPUT_NAMES[pred] if pred < CellTopology.NUM_INPUTS else str(pred - CellTopology.NUM_INPUTS)


def _node_index(name: str) -> int:
    if name in INPUT_NAMES:
        return INPUT_NAMES.index(name)
    return int(name) + CellTopology.NUM_INPUTS


def cell_digraph(cell: CellGene, name: str) -> Digraph:
    g = Digraph(name=name, comment=f"fednas genotype schema_version={SCHEMA_VERSION} cell={name}",
                graph_attr={"rankdir": "LR"},
                node_attr={"style": "filled", "shape": "rect", "fontname": "times"},
                edge_attr={"fontname": "times"})
    for input_name in INPUT_NAMES:
        g.node(input_name, fillcolor="darkseagreen2")
    for j in range(len(cell)):
        g.node(str(j), fillcolor="lightblue")
    for j, node in enumerate(cell):
        for pred, op in node:
            g.edge(_node_name(pred), str(j), label=op.value)
    g.node(OUTPUT_NAME, fillcolor="palegoldenrod")
    for j in range(len(cell)):
        g.edge(str(j), OUTPUT_NAME)
    return g


def to_json(genotype: Genotype) -> str:
    payload = {"schema_version": SCHEMA_VERSION}
    for name, cell in genotype.cells().items():
        payload[name] = [[[pred, op.value] for pred, op in node] for node in cell]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def from_json(text: str) -> Genotype:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenotypeError(f"unreadable genotype JSON: {exc}") from exc
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise GenotypeError(f"unsupported genotype schema {payload.get('schema_version')!r}")
    try:
        return genotype_from_pairs(payload["normal"], payload["reduce"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GenotypeError(f"malformed genotype JSON: {exc}") from exc


def to_dot(genotype: Genotype, cell: str | None = None) -> str:
    cells = genotype.cells()
    names = [cell] if cell else list(cells)
    return "".join(cell_digraph(cells[name], name).source for name in names)


def from_dot(text: str) -> Genotype:
    versions = set(_SCHEMA_RE.findall(text))
    if versions != {str(SCHEMA_VERSION)}:
        raise GenotypeError(f"unsupported genotype DOT schema {sorted(versions)}")
    cells: Dict[str, List[List[tuple]]] = {}
    for name, body in _GRAPH_RE.findall(text):
        nodes: List[List[tuple]] = [[] for _ in range(CellTopology.NUM_NODES)]
        for line in body.splitlines():
            m = _EDGE_RE.match(line)
            if not m or m.group(3) is None:
                continue
            tail, head, op = m.groups()
            nodes[int(head)].append((_node_index(tail), op))
        cells[name] = nodes
    if set(cells) != {"normal", "reduce"}:
        raise GenotypeError(f"DOT must hold a normal and a reduce digraph, found {sorted(cells)}")
    return genotype_from_pairs(cells["normal"], cells["reduce"])


def export_genotype(genotype: Genotype, fmt: str, cell: str | None = None) -> str:
    if fmt == "json":
        return to_json(genotype)
    if fmt == "dot":
        return to_dot(genotype, cell)
    raise GenotypeError(f"unknown genotype format {fmt!r}")


def import_genotype(text: str, fmt: str) -> Genotype:
    if fmt == "json":
        return from_json(text)
    if fmt == "dot":
        return from_dot(text)
    raise GenotypeError(f"unknown genotype format {fmt!r}")


def render_genotype(genotype: Genotype, file_stem: str, image_format: str = "png") -> List[str]:
    """Render both cells with the graphviz binary; returns the written paths."""
    paths = []
    for name, cell in genotype.cells().items():
        g = cell_digraph(cell, name)
        g.format = image_format
        paths.append(g.render(f"{file_stem}_{name}", view=False, cleanup=True))
        logger.info(f"rendered {name} cell to {paths[-1]}")
    return paths
