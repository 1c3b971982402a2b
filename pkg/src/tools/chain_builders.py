"""
Chain builders: random connected graphs, the Metropolis-Hastings random walk
on them, directed cycle overlays, and the non-reversible lifted chain

    Q = rownorm(d_max * P + w0 * V).
"""

from typing import List, Optional, Tuple
from dataclasses import dataclass
import logging

import networkx as nx
import numpy as np
from tenacity import RetryError, Retrying, after_log, retry_if_exception_type, stop_after_attempt

from ..core.errors import ConnectivityTimeout, CycleSearchTimeout, ZeroRow
from ..core.markov_chain import (
    TransitionMatrix, classify_chain, validate_transition_matrix,
)
from ..core.random_streams import Stream, make_rng
from .mixing_analysis import spectral_profile

logger = logging.getLogger(__name__)

MAX_GRAPH_REDRAWS = 1000
MAX_CYCLE_ATTEMPTS = 100_000


class _Disconnected(Exception):
    """Internal signal for the redraw loop"""


@dataclass(frozen=True, eq=False)
class UndirectedGraph:
    adjacency: np.ndarray

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def d_max(self) -> int:
        return int(self.degrees.max())

    def to_networkx(self) -> nx.Graph:
        return nx.from_numpy_array(self.adjacency)


@dataclass(frozen=True, eq=False)
class CycleOverlay:
    v: np.ndarray
    cycles: Tuple[Tuple[int, ...], ...]
    w0: float = 1.0

    @property
    def edge_count(self) -> int:
        return int(self.v.sum())


@dataclass(frozen=True, eq=False)
class ChainPair:
    """Reversible MH chain P and its non-reversible lift Q on the same graph"""
    p: TransitionMatrix
    q: TransitionMatrix
    graph: UndirectedGraph
    overlay: CycleOverlay
    lambda2_p: float
    lambda2_q: float
    stationary_q: np.ndarray
    p_reversible: bool
    q_reversible: bool


def _draw_connected(n: int, edge_prob: float, rng: np.random.Generator) -> UndirectedGraph:
    upper = np.triu(rng.random((n, n)) < edge_prob, k=1)
    adjacency = (upper | upper.T).astype(np.int64)
    if not nx.is_connected(nx.from_numpy_array(adjacency)):
        raise _Disconnected()
    return UndirectedGraph(adjacency=adjacency)


def random_connected_graph(n: int, edge_prob: float, seed: int,
                           max_redraws: int = MAX_GRAPH_REDRAWS) -> UndirectedGraph:
    """Erdos-Renyi G(n, p) redrawn from the seeded stream until connected"""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if not 0 < edge_prob <= 1:
        raise ValueError(f"edge_prob must lie in (0, 1], got {edge_prob}")

    rng = make_rng(seed, Stream.GRAPH)
    retrying = Retrying(
        stop=stop_after_attempt(max_redraws),
        retry=retry_if_exception_type(_Disconnected),
        after=after_log(logger, logging.DEBUG),
    )
    try:
        graph = retrying(_draw_connected, n, edge_prob, rng)
    except RetryError as e:
        raise ConnectivityTimeout(
            f"G({n}, {edge_prob}) not connected after {max_redraws} draws") from e

    logger.info(f"Drew connected graph n={n} edges={int(graph.adjacency.sum()) // 2} d_max={graph.d_max}")
    return graph


def metropolis_hastings(graph: UndirectedGraph) -> TransitionMatrix:
    """P_ij = 1/d_max on edges, P_ii = 1 - deg(i)/d_max. Symmetric, uniform pi."""
    d_max = graph.d_max
    if d_max == 0:
        raise ValueError("graph has no edges")
    entries = graph.adjacency / d_max
    np.fill_diagonal(entries, 1.0 - graph.degrees / d_max)
    return validate_transition_matrix(entries)


def _random_cycle(adjacency: np.ndarray, cycle_len: int,
                  rng: np.random.Generator) -> Optional[List[int]]:
    """Randomized DFS for a simple cycle of cycle_len nodes through a random start"""
    start = int(rng.integers(adjacency.shape[0]))
    path = [start]
    frontier = [list(rng.permutation(np.flatnonzero(adjacency[start])))]
    while frontier:
        candidates = frontier[-1]
        if not candidates:
            frontier.pop()
            path.pop()
            continue
        node = int(candidates.pop())
        if node in path:
            continue
        path.append(node)
        if len(path) == cycle_len:
            if adjacency[node, start]:
                return path
            path.pop()
            continue
        frontier.append(list(rng.permutation(np.flatnonzero(adjacency[node]))))
    return None


def add_cycles(graph: UndirectedGraph, num_cycles: int, cycle_len: int, seed: int,
               w0: float = 1.0, max_attempts: int = MAX_CYCLE_ATTEMPTS) -> CycleOverlay:
    """
    Pick `num_cycles` directed simple cycles of length `cycle_len` on graph edges.

    A new cycle may not reuse an edge already oriented by an earlier one, in
    either direction, so V never holds both (i, j) and (j, i).
    """
    if cycle_len < 3:
        raise ValueError(f"cycle_len must be >= 3, got {cycle_len}")
    if num_cycles < 0:
        raise ValueError(f"num_cycles must be >= 0, got {num_cycles}")

    rng = make_rng(seed, Stream.CYCLES)
    n = graph.n
    v = np.zeros((n, n), dtype=np.int64)
    cycles: List[Tuple[int, ...]] = []

    attempts = 0
    while len(cycles) < num_cycles:
        if attempts >= max_attempts:
            raise CycleSearchTimeout(
                f"placed {len(cycles)} of {num_cycles} cycles of length {cycle_len} in {max_attempts} attempts")
        attempts += 1

        cycle = _random_cycle(graph.adjacency, cycle_len, rng)
        if cycle is None:
            continue
        edges = list(zip(cycle, cycle[1:] + cycle[:1]))
        if any(v[i, j] or v[j, i] for i, j in edges):
            continue
        for i, j in edges:
            v[i, j] = 1
        cycles.append(tuple(cycle))

    logger.info(f"Placed {len(cycles)} directed cycles of length {cycle_len} in {attempts} attempts")
    return CycleOverlay(v=v, cycles=tuple(cycles), w0=w0)


def nonreversible_lift(p: TransitionMatrix, overlay: CycleOverlay, d_max: int) -> TransitionMatrix:
    """Q_ij = W_ij / sum_l W_il with W = d_max * P + w0 * V"""
    weights = d_max * p.entries + overlay.w0 * overlay.v
    row_sums = weights.sum(axis=1)
    zero = row_sums <= 0
    if zero.any():
        raise ZeroRow(int(np.argmax(zero)))
    return validate_transition_matrix(weights / row_sums[:, None])


def build_chain_pair(n: int, seed: int, edge_prob: float = 0.3, num_cycles: int = 5,
                     cycle_len: int = 4, w0_factor: float = 0.5) -> ChainPair:
    """MH chain on G(n, edge_prob) and its lift with w0 = w0_factor * d_max"""
    if n < 8:
        raise ValueError(f"need n >= 8 for the cycle overlay, got {n}")

    graph = random_connected_graph(n, edge_prob, seed)
    p = metropolis_hastings(graph)
    overlay = add_cycles(graph, num_cycles, cycle_len, seed, w0=w0_factor * graph.d_max)
    q = nonreversible_lift(p, overlay, graph.d_max)

    lambda2_p = spectral_profile(p).lambda2_modulus
    lambda2_q = spectral_profile(q).lambda2_modulus
    class_p = classify_chain(p)
    class_q = classify_chain(q)

    logger.info(f"Chain pair seed={seed}: |l2(P)|={lambda2_p:.4f} |l2(Q)|={lambda2_q:.4f}")
    return ChainPair(
        p=p,
        q=q,
        graph=graph,
        overlay=overlay,
        lambda2_p=lambda2_p,
        lambda2_q=lambda2_q,
        stationary_q=class_q.stationary,
        p_reversible=class_p.reversible,
        q_reversible=class_q.reversible,
    )
