"""Ring-of-houses graphs with structural role labels, WL refinement and k-hop pairs.

Node numbering is fixed: ring nodes ``0 .. ring_len - 1`` come first, then the
five nodes of every house in house order. Inside a house the local order is
``(b1, b2, t1, t2, apex)`` where ``b1`` carries the attachment edge to the ring.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

# Role ids. Free ring nodes get the last id so that a period-1 ring (no free
# ring nodes) still has contiguous labels 0..4.
ATTACHED_RING = 0
ATTACHED_BOTTOM = 1
FREE_BOTTOM = 2
TOP = 3
APEX = 4
FREE_RING = 5


class NotAHouseRing(ValueError):
    """Raised when a graph does not match any ring-of-houses construction."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node labels and scalar degree features.

    ``edges`` is an ``(E, 2)`` integer array with ``u < v`` on every row, rows in
    lexicographic order. Instances are immutable; use :meth:`from_edges` to
    build one from arbitrary pairs.
    """

    num_nodes: int
    edges: np.ndarray
    labels: Optional[np.ndarray]
    features: np.ndarray

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Sequence[int]] | np.ndarray,
        labels: Optional[Sequence[int] | np.ndarray] = None,
    ) -> "Graph":
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise ValueError("num_nodes must be non-negative")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        arr = arr.reshape(-1, 2)
        if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        if np.any(arr[:, 0] == arr[:, 1]):
            raise ValueError("self-loops are not allowed")
        arr = np.sort(arr, axis=1)
        order = np.lexsort((arr[:, 1], arr[:, 0]))
        arr = arr[order]
        if len(arr) > 1 and np.any(np.all(arr[1:] == arr[:-1], axis=1)):
            raise ValueError("duplicate edges are not allowed")
        lab = None
        if labels is not None:
            lab = np.asarray(labels, dtype=np.int64)
            if lab.shape != (num_nodes,):
                raise ValueError(f"expected {num_nodes} labels, got {lab.shape}")
            present = np.unique(lab)
            if len(present) and not np.array_equal(present, np.arange(len(present))):
                raise ValueError("class indices must be contiguous from 0")
            lab.setflags(write=False)
        arr.setflags(write=False)
        feats = _standardized_degrees(num_nodes, arr)
        feats.setflags(write=False)
        return cls(num_nodes, arr, lab, feats)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1 if self.num_nodes else 0

    @cached_property
    def degrees(self) -> np.ndarray:
        return _degrees(self.num_nodes, self.edges)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        """Per-node sorted neighbor lists."""
        nbrs: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for u, v in self.edges.tolist():
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(n)) for n in nbrs)

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        n = self.num_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        return sp.csr_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))

    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(map(tuple, self.edges.tolist()))

    def with_labels(self, labels: Sequence[int] | np.ndarray) -> "Graph":
        return Graph.from_edges(self.num_nodes, self.edges, labels)


def _degrees(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    return np.bincount(edges.ravel(), minlength=num_nodes).astype(np.int64)


def _standardized_degrees(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    deg = _degrees(num_nodes, edges).astype(np.float64)
    if num_nodes == 0:
        return deg
    std = deg.std()
    if std == 0.0:
        return np.zeros(num_nodes)
    return (deg - deg.mean()) / std


def degree_features(graph: Graph) -> np.ndarray:
    """Degrees standardized to zero mean and unit population std.

    A graph whose nodes all share one degree gets all-zero features.
    """
    if graph.num_nodes == 0:
        raise ValueError("graph is empty")
    return _standardized_degrees(graph.num_nodes, graph.edges)


@dataclass(frozen=True)
class HouseMotif:
    """Five-node house template in local order ``(b1, b2, t1, t2, apex)``."""

    edges: tuple[tuple[int, int], ...]
    roles: tuple[int, ...]
    attach: int = 0


# Bottom square with both diagonals plus a roof: 8 internal edges. With one
# attachment edge per house and period 3 this reproduces 2664 nodes / 3996 edges.
DEFAULT_MOTIF = HouseMotif(
    edges=((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (2, 4), (3, 4)),
    roles=(ATTACHED_BOTTOM, FREE_BOTTOM, TOP, TOP, APEX),
)

# Plain 6-edge house (square + roof). t1 sits above b1, so the two top corners
# play different roles; role 6 marks t2.
CLASSIC_MOTIF = HouseMotif(
    edges=((0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 4)),
    roles=(ATTACHED_BOTTOM, FREE_BOTTOM, TOP, 6, APEX),
)

KNOWN_MOTIFS = (DEFAULT_MOTIF, CLASSIC_MOTIF)


@dataclass(frozen=True)
class HouseRingConfig:
    num_houses: int
    ring_period: int = 3
    motif: HouseMotif = field(default=DEFAULT_MOTIF)

    def __post_init__(self):
        if self.num_houses < 1:
            raise ValueError("num_houses must be >= 1")
        if self.ring_period < 1:
            raise ValueError("ring_period must be >= 1")
        if self.ring_length < 3:
            raise ValueError("ring needs at least 3 nodes (num_houses * ring_period >= 3)")

    @property
    def ring_length(self) -> int:
        return self.num_houses * self.ring_period

    @property
    def num_nodes(self) -> int:
        return self.ring_length + 5 * self.num_houses

    @property
    def num_edges(self) -> int:
        return self.ring_length + (len(self.motif.edges) + 1) * self.num_houses


def _house_ring_edges(config: HouseRingConfig) -> np.ndarray:
    h, period, ring = config.num_houses, config.ring_period, config.ring_length
    idx = np.arange(ring)
    ring_edges = np.stack([idx, (idx + 1) % ring], axis=1)
    base = ring + 5 * np.arange(h)[:, None]
    local = np.asarray(config.motif.edges + ((config.motif.attach, -1),), dtype=np.int64)
    house_edges = []
    for a, b in local:
        left = base[:, 0] + a
        right = base[:, 0] + b if b >= 0 else np.arange(h) * period
        house_edges.append(np.stack([left, right], axis=1))
    arr = np.concatenate([ring_edges] + house_edges)
    arr = np.sort(arr, axis=1)
    return arr[np.lexsort((arr[:, 1], arr[:, 0]))]


def _house_ring_roles(config: HouseRingConfig) -> np.ndarray:
    ring = np.full(config.ring_length, FREE_RING, dtype=np.int64)
    ring[:: config.ring_period] = ATTACHED_RING
    houses = np.tile(np.asarray(config.motif.roles, dtype=np.int64), config.num_houses)
    roles = np.concatenate([ring, houses])
    _, compact = np.unique(roles, return_inverse=True)
    return compact.astype(np.int64)


def build_ring_of_houses(config: HouseRingConfig) -> Graph:
    """Ring of ``h * period`` nodes with a house hanging off every period-th node."""
    return Graph.from_edges(config.num_nodes, _house_ring_edges(config), _house_ring_roles(config))


def assign_structural_labels(
    graph: Graph, motifs: Sequence[HouseMotif] = KNOWN_MOTIFS
) -> np.ndarray:
    """Recover role labels of a noiseless house ring from its structure alone.

    Tries every (num_houses, ring_period) consistent with the node count and
    every candidate motif; raises :class:`NotAHouseRing` if none reproduces the
    edge set exactly.
    """
    n = graph.num_nodes
    for motif in motifs:
        for period in range(1, n):
            if n % (period + 5):
                continue
            h = n // (period + 5)
            if h < 1 or h * period < 3:
                continue
            cfg = HouseRingConfig(h, period, motif)
            if cfg.num_edges != graph.num_edges:
                continue
            if np.array_equal(_house_ring_edges(cfg), graph.edges):
                return _house_ring_roles(cfg)
    raise NotAHouseRing(f"graph with {n} nodes / {graph.num_edges} edges is not a house ring")


@dataclass(frozen=True)
class WlPartition:
    colors: np.ndarray
    num_cells: int
    iterations_to_fixpoint: int
    stable: bool

    def same_partition(self, other_colors: Sequence[int] | np.ndarray) -> bool:
        return same_partition(self.colors, other_colors)


def same_partition(a: Sequence[int] | np.ndarray, b: Sequence[int] | np.ndarray) -> bool:
    """True if two colorings induce the same partition (up to color renaming)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


def wl_refine(
    graph: Graph, max_iters: int = 100, initial: Optional[Sequence[int] | np.ndarray] = None
) -> WlPartition:
    """1-WL color refinement.

    Colors are canonical: new ids follow the sorted order of the
    ``(own color, sorted neighbor colors)`` signatures, so the result does not
    depend on node numbering. ``iterations_to_fixpoint`` counts the rounds that
    split at least one cell; when the cutoff is hit it equals ``max_iters``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    n = graph.num_nodes
    if initial is None:
        colors = np.zeros(n, dtype=np.int64)
    else:
        _, colors = np.unique(np.asarray(initial), return_inverse=True)
        colors = colors.astype(np.int64)
    num_cells = len(np.unique(colors)) if n else 0
    adj = graph.adjacency
    for it in range(max_iters):
        sigs = [(int(colors[v]), tuple(sorted(colors[list(adj[v])].tolist()))) for v in range(n)]
        table = {s: i for i, s in enumerate(sorted(set(sigs)))}
        new = np.fromiter((table[s] for s in sigs), dtype=np.int64, count=n)
        if len(table) == num_cells:
            return WlPartition(new, num_cells, it, True)
        colors, num_cells = new, len(table)
    return WlPartition(colors, num_cells, max_iters, False)


def _bfs_within(adj: tuple[tuple[int, ...], ...], source: int, k: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if d == k:
            continue
        for w in adj[u]:
            if w not in dist:
                dist[w] = d + 1
                queue.append(w)
    return dist


@functools.lru_cache(maxsize=16)
def khop_pair_array(graph: Graph, k: int) -> np.ndarray:
    """Sorted ``(M, 2)`` array of pairs ``u < v`` at distance in ``[2, k]``."""
    if k < 2:
        raise ValueError("k must be >= 2")
    adj = graph.adjacency
    rows = []
    for u in range(graph.num_nodes):
        for v, d in _bfs_within(adj, u, k).items():
            if v > u and d >= 2:
                rows.append((u, v))
    arr = np.asarray(sorted(rows), dtype=np.int64).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


def khop_eligible_pairs(graph: Graph, k: int) -> set[tuple[int, int]]:
    """All unordered pairs at shortest-path distance between 2 and ``k``."""
    return set(map(tuple, khop_pair_array(graph, k).tolist()))
