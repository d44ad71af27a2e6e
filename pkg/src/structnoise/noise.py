"""Random edge-addition noise, either global or restricted to k-hop neighborhoods."""
from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

import numpy as np

from .graphgen import Graph, khop_pair_array

_MODE_RE = re.compile(r"^(global|khop(\d+))$")


class EligiblePairsExhausted(ValueError):
    def __init__(self, requested: int, available: int):
        super().__init__(f"requested {requested} noise edges but only {available} eligible pairs exist")
        self.requested = requested
        self.available = available


def parse_mode(mode: str) -> Optional[int]:
    """Return the hop limit encoded by ``mode`` (None for ``global``)."""
    m = _MODE_RE.match(mode)
    if m is None:
        raise ValueError(f"invalid noise mode {mode!r}; expected 'global' or 'khop<k>'")
    if m.group(2) is None:
        return None
    k = int(m.group(2))
    if k < 2:
        raise ValueError(f"invalid noise mode {mode!r}; k must be >= 2")
    return k


@dataclass(frozen=True)
class NoiseSpec:
    ratio: float
    mode: str = "global"
    seed: int = 0

    def __post_init__(self):
        if not self.ratio >= 0:
            raise ValueError("noise ratio must be >= 0")
        parse_mode(self.mode)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def hop_limit(self) -> Optional[int]:
        return parse_mode(self.mode)


def noise_edge_budget(edge_count: int, p: float) -> int:
    """``p * edge_count`` rounded half-up, computed in decimal to dodge float ties."""
    if p < 0:
        raise ValueError("p must be >= 0")
    exact = Decimal(str(p)) * edge_count
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _sample_global(graph: Graph, m: int, rng: np.random.Generator) -> np.ndarray:
    n = graph.num_nodes
    available = n * (n - 1) // 2 - graph.num_edges
    if m > available:
        raise EligiblePairsExhausted(m, available)
    if m == 0:
        return np.empty((0, 2), dtype=np.int64)
    taken = set((graph.edges[:, 0] * n + graph.edges[:, 1]).tolist())
    if 2 * m > available:
        # dense regime: rejection would stall, so permute the complement instead
        iu, ju = np.triu_indices(n, 1)
        codes = iu * n + ju
        free = codes[~np.isin(codes, np.fromiter(taken, dtype=np.int64, count=len(taken)))]
        pick = free[rng.permutation(len(free))[:m]]
        return np.stack([pick // n, pick % n], axis=1)
    out: list[int] = []
    seen: set[int] = set()
    while len(out) < m:
        batch = rng.integers(0, n, size=(max(64, 2 * (m - len(out))), 2))
        for u, v in batch.tolist():
            if u == v:
                continue
            code = u * n + v if u < v else v * n + u
            if code in taken or code in seen:
                continue
            seen.add(code)
            out.append(code)
            if len(out) == m:
                break
    codes = np.asarray(out, dtype=np.int64)
    return np.stack([codes // n, codes % n], axis=1)


def _sample_khop(graph: Graph, k: int, m: int, rng: np.random.Generator) -> np.ndarray:
    pairs = khop_pair_array(graph, k)
    if m > len(pairs):
        raise EligiblePairsExhausted(m, len(pairs))
    return pairs[rng.permutation(len(pairs))[:m]]


def sample_noise_edges(graph: Graph, spec: NoiseSpec) -> np.ndarray:
    """The ``(m, 2)`` array of new edges ``add_noise`` would insert, in draw order."""
    m = noise_edge_budget(graph.num_edges, spec.ratio)
    rng = np.random.default_rng(spec.seed)
    k = spec.hop_limit
    if k is None:
        return _sample_global(graph, m, rng)
    return _sample_khop(graph, k, m, rng)


def add_noise(graph: Graph, spec: NoiseSpec) -> Graph:
    """Copy of ``graph`` with ``round(p * |E|)`` random new edges and refreshed features.

    Pairs are drawn uniformly without replacement from all non-adjacent pairs
    (global) or from pairs at distance 2..k in the input graph (k-hop). Labels
    are carried over untouched.
    """
    added = sample_noise_edges(graph, spec)
    edges = np.concatenate([graph.edges, added]) if len(added) else graph.edges
    return Graph.from_edges(graph.num_nodes, edges, graph.labels)
