import pytest
import numpy as np
import networkx as nx

from src.core.errors import ConnectivityTimeout, CycleSearchTimeout, ZeroRow
from src.core.markov_chain import classify_chain, validate_transition_matrix
from src.tools.chain_builders import (
    CycleOverlay, UndirectedGraph, add_cycles, build_chain_pair, metropolis_hastings,
    nonreversible_lift, random_connected_graph,
)


@pytest.fixture
def triangle():
    return UndirectedGraph(adjacency=np.ones((3, 3), dtype=np.int64) - np.eye(3, dtype=np.int64))


@pytest.fixture
def path_graph():
    adjacency = np.zeros((4, 4), dtype=np.int64)
    for i in range(3):
        adjacency[i, i + 1] = adjacency[i + 1, i] = 1
    return UndirectedGraph(adjacency=adjacency)


class TestRandomConnectedGraph:

    def test_connected_and_simple(self):
        graph = random_connected_graph(20, 0.3, seed=1)
        assert nx.is_connected(graph.to_networkx())
        assert np.array_equal(graph.adjacency, graph.adjacency.T)
        assert np.all(np.diag(graph.adjacency) == 0)

    def test_reproducible(self):
        first = random_connected_graph(15, 0.3, seed=4)
        second = random_connected_graph(15, 0.3, seed=4)
        assert np.array_equal(first.adjacency, second.adjacency)

    def test_connectivity_timeout(self):
        with pytest.raises(ConnectivityTimeout):
            random_connected_graph(30, 0.01, seed=0, max_redraws=5)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            random_connected_graph(1, 0.5, seed=0)
        with pytest.raises(ValueError):
            random_connected_graph(10, 0.0, seed=0)


class TestMetropolisHastings:

    def test_path_graph(self, path_graph):
        p = metropolis_hastings(path_graph)
        assert p.entries[0, 0] == pytest.approx(0.5)
        assert p.entries[1, 1] == pytest.approx(0.0)
        assert p.entries[1, 2] == pytest.approx(0.5)
        assert p.is_symmetric()

    def test_uniform_stationary(self):
        p = metropolis_hastings(random_connected_graph(12, 0.4, seed=2))
        result = classify_chain(p)
        assert result.reversible
        assert np.allclose(result.stationary, 1 / 12, atol=1e-10)

    def test_edgeless_graph_rejected(self):
        with pytest.raises(ValueError):
            metropolis_hastings(UndirectedGraph(adjacency=np.zeros((3, 3), dtype=np.int64)))


class TestCycleOverlay:

    def test_triangle_lift(self, triangle):
        p = metropolis_hastings(triangle)
        v = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
        overlay = CycleOverlay(v=v, cycles=((0, 1, 2),), w0=1.0)
        q = nonreversible_lift(p, overlay, triangle.d_max)
        expected = np.array([[0, 2, 1], [1, 0, 2], [2, 1, 0]]) / 3
        assert np.allclose(q.entries, expected, atol=1e-15)

    def test_zero_weight_keeps_p(self):
        graph = random_connected_graph(12, 0.4, seed=3)
        p = metropolis_hastings(graph)
        overlay = add_cycles(graph, 2, 3, seed=3, w0=0.0)
        q = nonreversible_lift(p, overlay, graph.d_max)
        assert np.allclose(q.entries, p.entries, atol=1e-15)

    def test_cycles_use_graph_edges_once(self):
        graph = random_connected_graph(20, 0.3, seed=5)
        overlay = add_cycles(graph, 5, 4, seed=5)
        assert overlay.edge_count == 20
        assert len(overlay.cycles) == 5
        assert np.all(overlay.v <= graph.adjacency)
        assert not np.any(overlay.v & overlay.v.T)
        for cycle in overlay.cycles:
            assert len(set(cycle)) == 4

    def test_triangle_holds_one_cycle(self, triangle):
        assert add_cycles(triangle, 1, 3, seed=0).edge_count == 3
        with pytest.raises(CycleSearchTimeout):
            add_cycles(triangle, 2, 3, seed=0, max_attempts=50)

    def test_short_cycle_rejected(self, triangle):
        with pytest.raises(ValueError):
            add_cycles(triangle, 1, 2, seed=0)

    def test_zero_row(self, triangle):
        p = metropolis_hastings(triangle)
        overlay = CycleOverlay(v=np.zeros((3, 3), dtype=np.int64), cycles=())
        with pytest.raises(ZeroRow) as excinfo:
            nonreversible_lift(p, overlay, 0)
        assert excinfo.value.row == 0


class TestChainPair:

    def test_pair_properties(self):
        pair = build_chain_pair(20, seed=0)
        assert pair.p_reversible
        assert not pair.q_reversible
        assert pair.overlay.edge_count == 20
        assert pair.stationary_q.sum() == pytest.approx(1.0, abs=1e-12)
        assert classify_chain(pair.q).ergodic

    def test_reproducible(self):
        first = build_chain_pair(16, seed=7)
        second = build_chain_pair(16, seed=7)
        assert np.array_equal(first.q.entries, second.q.entries)
        assert first.lambda2_q == second.lambda2_q

    def test_lift_can_mix_faster(self):
        improved = 0
        for seed in range(20):
            pair = build_chain_pair(20, seed=seed)
            improved += pair.lambda2_q < pair.lambda2_p
        assert improved >= 1

    def test_needs_eight_nodes(self):
        with pytest.raises(ValueError):
            build_chain_pair(7, seed=0)

    def test_validated_output(self):
        pair = build_chain_pair(10, seed=1, edge_prob=0.5, num_cycles=2, cycle_len=3)
        validate_transition_matrix(pair.q.entries)
