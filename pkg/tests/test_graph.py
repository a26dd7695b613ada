"""Unit tests for graph construction and spectral operators."""
import numpy as np
import pytest

from gcnrwz import graph as graphmod
from conftest import random_graph


class TestBuildGraph:
    def test_segment_ids_sorted_when_undeclared(self):
        g = graphmod.build_graph([("b", "c", 1.0), ("a", "b", 2.0)])
        assert g.segment_ids == ("a", "b", "c")

    def test_edge_order_does_not_matter(self):
        edges = [("a", "b", 1.0), ("b", "c", 2.0), ("a", "c", 1.5)]
        g1 = graphmod.build_graph(edges)
        g2 = graphmod.build_graph(edges[::-1])
        assert np.array_equal(g1.adjacency, g2.adjacency)
        assert np.array_equal(g1.distances, g2.distances)

    def test_reversed_duplicate_edge_is_deduplicated(self):
        g = graphmod.build_graph([("a", "b", 1.0), ("b", "a", 1.0)])
        assert g.n == 2

    def test_conflicting_duplicate_distance_rejected(self):
        with pytest.raises(ValueError, match="conflicting distances"):
            graphmod.build_graph([("a", "b", 1.0), ("b", "a", 2.0)])

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            graphmod.build_graph([("a", "a", 1.0)])

    def test_non_positive_distance_rejected(self):
        with pytest.raises(ValueError, match="non-positive distance"):
            graphmod.build_graph([("a", "b", 0.0)])

    def test_undeclared_segment_reference_rejected(self):
        with pytest.raises(ValueError, match="undeclared segment"):
            graphmod.build_graph([("a", "z", 1.0)], segment_ids=["a", "b"])

    def test_declared_roster_can_include_isolated_nodes(self):
        g = graphmod.build_graph([("a", "b", 1.0)], segment_ids=["a", "b", "lone"])
        assert g.n == 3
        assert g.adjacency[g.index_of("lone")].sum() == 0

    def test_gaussian_kernel_weight_value(self):
        # two distinct distances: sigma = std([1, 3]) = 1
        g = graphmod.build_graph([("a", "b", 1.0), ("b", "c", 3.0)])
        i, j = g.index_of("a"), g.index_of("b")
        assert g.adjacency[i, j] == pytest.approx(np.exp(-1.0))
        # exp(-9) < 0.1 so the long edge is thresholded to zero
        assert g.adjacency[g.index_of("b"), g.index_of("c")] == 0.0

    def test_sigma_fallback_for_single_distance(self):
        g = graphmod.build_graph([("a", "b", 0.5), ("b", "c", 0.5)])
        w = g.adjacency[g.index_of("a"), g.index_of("b")]
        assert w == pytest.approx(np.exp(-0.25))  # sigma falls back to 1.0

    def test_binary_mode_sets_unit_weights(self):
        g = graphmod.build_graph([("a", "b", 1.0), ("b", "c", 9.0)],
                                 adjacency_mode="binary")
        assert set(np.unique(g.adjacency)) == {0.0, 1.0}
        assert g.adjacency.sum() == 4.0

    def test_adjacency_is_read_only(self):
        g = graphmod.build_graph([("a", "b", 1.0)])
        with pytest.raises(ValueError):
            g.adjacency[0, 1] = 5.0

    def test_index_of_unknown_id_raises_keyerror(self):
        g = graphmod.build_graph([("a", "b", 1.0)])
        with pytest.raises(KeyError, match="nope"):
            g.index_of("nope")


class TestShortestPaths:
    def test_line_graph_distances(self, line_graph):
        sp = line_graph.shortest_path_miles()
        a, b, c = (line_graph.index_of(s) for s in "abc")
        assert sp[a, c] == pytest.approx(3.0)
        assert sp[a, b] == pytest.approx(1.0)

    def test_disconnected_pairs_are_infinite(self):
        g = graphmod.build_graph([("a", "b", 1.0)], segment_ids=["a", "b", "z"])
        sp = g.shortest_path_miles()
        assert np.isinf(sp[g.index_of("a"), g.index_of("z")])


class TestNormalizedAdjacency:
    def test_two_node_hand_case(self, pair_graph):
        a_hat = graphmod.normalized_adjacency(pair_graph)
        w = pair_graph.adjacency[0, 1]
        expected = np.full((2, 2), 1.0) * np.array([[1.0, w], [w, 1.0]]) / (1.0 + w)
        assert np.allclose(a_hat, expected)

    def test_symmetric_with_bounded_spectrum(self):
        rng = np.random.default_rng(11)
        g = random_graph(rng, 9)
        a_hat = graphmod.normalized_adjacency(g)
        assert np.allclose(a_hat, a_hat.T)
        eig = np.linalg.eigvalsh(a_hat)
        assert eig.max() <= 1.0 + 1e-10
        assert eig.min() >= -1.0 - 1e-10


class TestScaledLaplacian:
    def test_laplacian_rows_sum_to_zero(self, line_graph):
        lap = graphmod.laplacian(line_graph)
        assert np.allclose(lap.sum(axis=1), 0.0)
        assert np.allclose(lap, lap.T)

    def test_power_iteration_matches_eigh(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(3, 13)))
            lap = graphmod.laplacian(g)
            lam = graphmod.power_iteration_lambda_max(lap)
            assert lam == pytest.approx(np.linalg.eigvalsh(lap).max(), abs=1e-7)

    def test_scaled_spectrum_within_unit_interval(self):
        rng = np.random.default_rng(13)
        g = random_graph(rng, 10)
        l_hat = graphmod.scaled_laplacian(g)
        eig = np.linalg.eigvalsh(l_hat)
        assert eig.min() >= -1.0 - 1e-9
        assert eig.max() <= 1.0 + 1e-9

    def test_edgeless_graph_scales_to_negative_identity(self):
        g0 = graphmod.RoadGraph(("x", "y"), np.zeros((2, 2)),
                                np.where(np.eye(2) > 0, 0.0, np.inf))
        l_hat = graphmod.scaled_laplacian(g0)
        assert np.allclose(l_hat, -np.eye(2))

    def test_explicit_lambda_max_respected(self, line_graph):
        lap = graphmod.laplacian(line_graph)
        l_hat = graphmod.scaled_laplacian(line_graph, lambda_max=4.0)
        assert np.allclose(l_hat, 2.0 * lap / 4.0 - np.eye(3))

    def test_non_positive_lambda_max_rejected(self, line_graph):
        with pytest.raises(ValueError, match="must be positive"):
            graphmod.scaled_laplacian(line_graph, lambda_max=-1.0)


class TestChebyshev:
    def test_recurrence_first_terms(self, line_graph):
        l_hat = graphmod.scaled_laplacian(line_graph)
        x = np.random.default_rng(14).standard_normal((3, 2))
        terms = graphmod.chebyshev_apply(l_hat, 3, x)
        assert len(terms) == 4
        assert np.allclose(terms[0], x)
        assert np.allclose(terms[1], l_hat @ x)
        assert np.allclose(terms[2], 2 * l_hat @ (l_hat @ x) - x)

    def test_order_zero(self, line_graph):
        l_hat = graphmod.scaled_laplacian(line_graph)
        x = np.ones((3, 1))
        assert len(graphmod.chebyshev_apply(l_hat, 0, x)) == 1

    def test_dimension_mismatch_rejected(self, line_graph):
        l_hat = graphmod.scaled_laplacian(line_graph)
        with pytest.raises(ValueError, match="dimension mismatch"):
            graphmod.chebyshev_apply(l_hat, 2, np.ones((5, 1)))


class TestSpectralOracle:
    def test_identity_filter_reproduces_signal(self, line_graph):
        lap = graphmod.laplacian(line_graph)
        x = np.random.default_rng(15).standard_normal(3)
        out = graphmod.spectral_conv_oracle(lap, np.ones(3), x)
        assert np.allclose(out, x)

    def test_oracle_refuses_large_graphs(self):
        big = np.eye(17)
        with pytest.raises(ValueError, match="N <= 16"):
            graphmod.spectral_conv_oracle(big, np.ones(17), np.ones(17))

    def test_decomposition_requires_symmetry(self):
        with pytest.raises(ValueError, match="not symmetric"):
            graphmod.spectral_decomposition(np.array([[0.0, 1.0], [0.0, 0.0]]))
