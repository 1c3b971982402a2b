"""
Finite Markov chains: validation, classification, stationary distribution,
matrix powers and trajectory sampling.

Transition matrices are row-stochastic: row i is the distribution of the next
state given the current state i.
"""

from typing import List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
import logging

import networkx as nx
import numpy as np

from .errors import (
    MatrixParseError, NegativeEntry, NoConvergence, NonSquare, NotErgodic,
    RowSumViolation,
)
from .random_streams import Stream, make_rng

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
DETAILED_BALANCE_TOL = 1e-10
STATIONARY_TOL = 1e-13
STATIONARY_MAX_ITER = 10**6
_UNIFORM_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Validated row-stochastic matrix. Build with validate_transition_matrix."""
    entries: np.ndarray
    cumulative: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def is_symmetric(self, tol: float = ROW_SUM_TOL) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T)) <= tol)

    def support_graph(self) -> nx.DiGraph:
        """Directed graph with an edge i -> j wherever P[i, j] > 0"""
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.size))
        rows, cols = np.nonzero(self.entries > 0)
        graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
        return graph


@dataclass(frozen=True, eq=False)
class ChainClassification:
    irreducible: bool
    aperiodic: bool
    reversible: bool
    stationary: Optional[np.ndarray]
    period_per_state: Tuple[int, ...]

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    start_state: int
    seed: int

    @property
    def length(self) -> int:
        return len(self.states)


def validate_transition_matrix(entries: Union[np.ndarray, Sequence[Sequence[float]]]) -> TransitionMatrix:
    """
    Check that `entries` is a non-empty square row-stochastic matrix.

    Raises NonSquare, NegativeEntry (also for NaN/inf) or RowSumViolation
    (|row sum - 1| > 1e-12), reporting the first offending row.
    """
    matrix = np.array(entries, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] == 0:
        raise NonSquare(matrix.shape)

    bad = ~(matrix >= 0) | ~np.isfinite(matrix)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise NegativeEntry(int(i), int(j), float(matrix[i, j]))

    row_sums = matrix.sum(axis=1)
    off = np.abs(row_sums - 1.0) > ROW_SUM_TOL
    if off.any():
        i = int(np.argmax(off))
        raise RowSumViolation(i, float(row_sums[i]))

    cumulative = np.cumsum(matrix, axis=1)
    cumulative /= cumulative[:, -1:]
    matrix.setflags(write=False)
    cumulative.setflags(write=False)
    return TransitionMatrix(entries=matrix, cumulative=cumulative)


def _state_periods(graph: nx.DiGraph) -> Tuple[int, ...]:
    """Period of every state: gcd of BFS level differences along edges of its class"""
    periods = [0] * graph.number_of_nodes()
    for component in nx.strongly_connected_components(graph):
        sub = graph.subgraph(component)
        root = next(iter(component))
        levels = nx.single_source_shortest_path_length(sub, root)
        period = 0
        for u, v in sub.edges():
            period = gcd(period, levels[u] + 1 - levels[v])
        for node in component:
            periods[node] = period
    return tuple(periods)


def _is_ergodic(chain: TransitionMatrix) -> bool:
    graph = chain.support_graph()
    return nx.is_strongly_connected(graph) and nx.is_aperiodic(graph)


def _solve_stationary(chain: TransitionMatrix) -> np.ndarray:
    """Least-squares solve of pi (P - I) = 0 with sum(pi) = 1"""
    m = chain.size
    system = np.vstack([chain.entries.T - np.eye(m), np.ones((1, m))])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def satisfies_detailed_balance(chain: TransitionMatrix, pi: np.ndarray,
                               tol: float = DETAILED_BALANCE_TOL) -> bool:
    flux = pi[:, None] * chain.entries
    return bool(np.all(np.abs(flux - flux.T) <= tol))


def classify_chain(chain: TransitionMatrix) -> ChainClassification:
    """
    Irreducibility, per-state periods, stationary distribution and reversibility.

    Irreducible chains (periodic ones included) get their unique pi from a
    linear solve; reducible chains report stationary=None and reversible=False.
    A state that lies on no cycle has period 0.
    """
    graph = chain.support_graph()
    irreducible = nx.is_strongly_connected(graph)
    periods = _state_periods(graph)
    aperiodic = all(p == 1 for p in periods)

    stationary = _solve_stationary(chain) if irreducible else None
    reversible = stationary is not None and satisfies_detailed_balance(chain, stationary)

    return ChainClassification(
        irreducible=irreducible,
        aperiodic=aperiodic,
        reversible=reversible,
        stationary=stationary,
        period_per_state=periods,
    )


def stationary_distribution(chain: TransitionMatrix,
                            tol: float = STATIONARY_TOL,
                            max_iter: int = STATIONARY_MAX_ITER) -> np.ndarray:
    """
    Stationary distribution of an ergodic chain by power iteration.

    Iterates v <- vP from the uniform vector until the l1 change is <= tol,
    falling back to a linear solve after `max_iter` iterations.
    """
    if not _is_ergodic(chain):
        raise NotErgodic("stationary distribution requires an irreducible aperiodic chain")

    v = np.full(chain.size, 1.0 / chain.size)
    for _ in range(max_iter):
        nxt = v @ chain.entries
        nxt /= nxt.sum()
        change = np.abs(nxt - v).sum()
        v = nxt
        if change <= tol:
            return v

    logger.warning(f"Power iteration did not reach tol={tol} in {max_iter} iterations, using linear solve")
    v = _solve_stationary(chain)
    residual = np.abs(v @ chain.entries - v).sum()
    if not np.isfinite(residual) or residual > 1e-9:
        raise NoConvergence(f"stationary solve residual {residual:.3e}")
    return v


def matrix_power(chain: TransitionMatrix, k: int) -> np.ndarray:
    """P^k by repeated squaring"""
    if k < 0:
        raise ValueError(f"power must be non-negative, got {k}")
    return np.linalg.matrix_power(chain.entries, k)


class ChainWalker:
    """
    Walks a chain with inverse-CDF sampling on its own PRNG.

    Uniforms are drawn in blocks; the values consumed are the same as drawing
    them one at a time, so walks are reproducible for a given generator.
    """

    def __init__(self, chain: TransitionMatrix, state: int, rng: np.random.Generator):
        if not 0 <= state < chain.size:
            raise ValueError(f"state {state} outside 0..{chain.size - 1}")
        self.chain = chain
        self.state = int(state)
        self.rng = rng
        self._uniforms = np.empty(0)
        self._cursor = 0

    def _next_uniform(self) -> float:
        if self._cursor >= len(self._uniforms):
            self._uniforms = self.rng.random(_UNIFORM_BLOCK)
            self._cursor = 0
        u = self._uniforms[self._cursor]
        self._cursor += 1
        return u

    def step(self) -> int:
        row = self.chain.cumulative[self.state]
        nxt = int(np.searchsorted(row, self._next_uniform(), side="right"))
        # guards u landing on the final cumulative value after rounding
        self.state = min(nxt, self.chain.size - 1)
        return self.state

    def walk(self, steps: int) -> np.ndarray:
        states = np.empty(steps, dtype=np.int64)
        for t in range(steps):
            states[t] = self.step()
        return states

    def restart(self, state: int) -> None:
        self.state = int(state)


def sample_trajectory(chain: TransitionMatrix, start_state: int, length: int, seed: int) -> Trajectory:
    """States j_1..j_length visited after start_state (start_state itself excluded)"""
    if length < 0:
        raise ValueError(f"length must be non-negative, got {length}")
    walker = ChainWalker(chain, start_state, make_rng(seed, Stream.TRAJECTORY))
    return Trajectory(states=walker.walk(length), start_state=start_state, seed=seed)


def sgdt_sample(chain: TransitionMatrix, start_state: int, T: int, seed: int) -> int:
    """State reached after T fresh steps from start_state. Costs T samples."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    walker = ChainWalker(chain, start_state, make_rng(seed, Stream.SGDT))
    return int(walker.walk(T)[-1])


def empirical_frequencies(states: np.ndarray, size: int) -> np.ndarray:
    if len(states) == 0:
        return np.zeros(size)
    return np.bincount(states, minlength=size) / len(states)


def read_transition_matrix(path: Union[str, Path]) -> TransitionMatrix:
    """
    Load the text format: first line M, then M lines of M whitespace-separated
    floats. Blank lines are ignored.
    """
    lines = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if not lines:
        raise MatrixParseError(f"{path}: empty file")
    try:
        size = int(lines[0][0])
        rows: List[List[float]] = [[float(tok) for tok in line] for line in lines[1:]]
    except (ValueError, IndexError) as e:
        raise MatrixParseError(f"{path}: {e}") from e

    if len(lines[0]) != 1 or size < 1:
        raise MatrixParseError(f"{path}: first line must be a single positive integer")
    if len(rows) != size or any(len(row) != size for row in rows):
        raise MatrixParseError(f"{path}: expected {size} rows of {size} values")
    return validate_transition_matrix(rows)


def write_transition_matrix(chain: TransitionMatrix, path: Union[str, Path]) -> Path:
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [str(chain.size)]
    lines += [" ".join(repr(float(x)) for x in row) for row in chain.entries]
    output_path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote {chain.size}x{chain.size} transition matrix to {output_path}")
    return output_path
