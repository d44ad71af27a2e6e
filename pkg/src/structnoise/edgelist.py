"""Plain-text edge-list and label files.

Edge file: one ``u v`` pair per line, 0-based, ``u < v``, lines in ascending
order. Label file: one ``node label`` pair per line for every node in order.
"""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .graphgen import Graph


def write_edge_list(graph: Graph, path: str | Path) -> None:
    Path(path).write_text("".join(f"{u} {v}\n" for u, v in graph.edges.tolist()))


def write_labels(graph: Graph, path: str | Path) -> None:
    if graph.labels is None:
        raise ValueError("graph has no labels")
    Path(path).write_text("".join(f"{i} {c}\n" for i, c in enumerate(graph.labels.tolist())))


def _pairs(path: str | Path) -> list[tuple[int, int]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two integers")
        out.append((int(parts[0]), int(parts[1])))
    return out


def read_graph(edge_path: str | Path, label_path: Optional[str | Path] = None,
               num_nodes: Optional[int] = None) -> Graph:
    """Load a graph; the node count comes from the label file, ``num_nodes``, or the largest index."""
    edges = _pairs(edge_path)
    labels = None
    if label_path is not None:
        rows = _pairs(label_path)
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError(f"{label_path}: node indices must run 0..n-1 in order")
        labels = np.array([c for _, c in rows], dtype=np.int64)
        num_nodes = len(rows) if num_nodes is None else num_nodes
    if num_nodes is None:
        num_nodes = 1 + max((max(e) for e in edges), default=-1)
    for u, v in edges:
        if u >= v:
            raise ValueError(f"{edge_path}: pair {u} {v} is not in ascending order")
    return Graph.from_edges(num_nodes, edges, labels)
