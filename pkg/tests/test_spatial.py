"""Adjacency parsing, ICAR quadratic form, and BYM2 scaling factors.

The path-3 scaling oracle: the graph Laplacian is

    [ 1 -1  0]
    [-1  2 -1]
    [ 0 -1  1]

whose generalized-inverse diagonal is (5/9, 2/9, 5/9), so the geometric
mean marginal variance is (50/729)^(1/3) and alpha is its square root.
"""

import math

import numpy as np
import pytest

from nutrimap.errors import GraphError
from nutrimap.spatial import build_graph, bym2_scaling, icar_quadratic

PATH3_GM = 0.4093368331822652  # (50/729)^(1/3)
PATH3_ALPHA = 0.639794367888828


class TestBuildGraph:
    def test_two_node_text(self):
        g = build_graph("A: B\nB: A\n")
        assert g.nodes == ("A", "B")
        assert g.n_edges == 1
        assert g.neighbors_of("A") == ("B",)

    def test_mapping_input(self):
        g = build_graph({"A": ["B"], "B": ["A", "C"], "C": ["B"]})
        assert g.n_nodes == 3 and g.n_edges == 2
        assert g.components == ((0, 1, 2),)

    def test_file_input(self, tmp_path):
        path = tmp_path / "adj.txt"
        path.write_text("# comment\nA: B\nB: A\n\nC:\n", encoding="utf-8")
        g = build_graph(path)
        assert g.nodes == ("A", "B", "C")
        assert g.neighbors_of("C") == ()

    def test_asymmetry_names_the_pair(self):
        with pytest.raises(GraphError, match="'A'.*'B'|'B'.*'A'"):
            build_graph("A: B\nB:\n")

    def test_self_loop_rejected(self):
        with pytest.raises(GraphError, match="itself"):
            build_graph("A: A\n")

    def test_unknown_neighbor_rejected(self):
        with pytest.raises(GraphError, match="unknown neighbor"):
            build_graph("A: Z\n")

    def test_duplicate_listing_rejected(self):
        with pytest.raises(GraphError, match="twice"):
            build_graph("A: B\nB: A\nA: B\n")

    def test_missing_separator_rejected(self):
        with pytest.raises(GraphError, match="separator"):
            build_graph("A B\nB A\n")

    def test_known_ids_fix_order_and_add_singletons(self):
        g = build_graph("A: B\nB: A\n", known_ids=["C", "B", "A"])
        assert g.nodes == ("C", "B", "A")
        assert ((0,) in g.components) and g.n_edges == 1

    def test_id_outside_universe_rejected(self):
        with pytest.raises(GraphError, match="unknown area id"):
            build_graph("A: B\nB: A\nZ:\n", known_ids=["A", "B"])

    def test_thirty_node_ring_is_connected(self):
        n = 30
        ids = [f"a{i:02d}" for i in range(n)]
        adj = {ids[i]: [ids[(i - 1) % n], ids[(i + 1) % n]] for i in range(n)}
        g = build_graph(adj)
        assert len(g.components) == 1
        assert g.n_edges == n

    def test_laplacian_rows_sum_to_zero(self, rng):
        n = 12
        ids = [f"n{i}" for i in range(n)]
        adj = {i: set() for i in ids}
        for _ in range(20):
            a, b = rng.choice(n, size=2, replace=False)
            adj[ids[a]].add(ids[b])
            adj[ids[b]].add(ids[a])
        g = build_graph({k: sorted(v) for k, v in adj.items()})
        lap = g.laplacian().toarray()
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-14)
        np.testing.assert_allclose(lap, lap.T)

    def test_index_unknown_id(self, path3_graph):
        with pytest.raises(GraphError):
            path3_graph.index("Z")


class TestIcarQuadratic:
    def test_constant_field_is_zero(self, path3_graph):
        assert icar_quadratic([3.7, 3.7, 3.7], path3_graph) == 0.0

    def test_path3_oracle(self, path3_graph):
        # (0-1)^2 + (1-2)^2 = 2
        assert icar_quadratic([0.0, 1.0, 2.0], path3_graph) == 2.0

    def test_doubling_quadruples(self, path3_graph, rng):
        u = rng.standard_normal(3)
        assert icar_quadratic(2 * u, path3_graph) == pytest.approx(
            4 * icar_quadratic(u, path3_graph), rel=1e-12
        )

    def test_matches_laplacian_form(self, path3_graph, rng):
        u = rng.standard_normal(3)
        lap = path3_graph.laplacian().toarray()
        assert icar_quadratic(u, path3_graph) == pytest.approx(u @ lap @ u, rel=1e-12)

    def test_length_mismatch(self, path3_graph):
        with pytest.raises(GraphError):
            icar_quadratic([0.0, 1.0], path3_graph)


class TestBym2Scaling:
    def test_path3_oracle(self, path3_graph):
        scaling = bym2_scaling(path3_graph)
        assert scaling.geometric_mean_marginal_variance == pytest.approx(PATH3_GM, abs=1e-6)
        assert scaling.alpha == pytest.approx(PATH3_ALPHA, abs=1e-6)

    def test_two_node_exact(self):
        # pinv of [[1,-1],[-1,1]] has diagonal (1/4, 1/4)
        scaling = bym2_scaling(build_graph("A: B\nB: A\n"))
        assert scaling.geometric_mean_marginal_variance == pytest.approx(0.25, abs=1e-12)
        assert scaling.alpha == pytest.approx(0.5, abs=1e-12)

    def test_matches_pinv_diagonal(self, path3_graph):
        lap = path3_graph.laplacian().toarray()
        diag = np.diag(np.linalg.pinv(lap))
        np.testing.assert_allclose(diag, [5 / 9, 2 / 9, 5 / 9], atol=1e-12)
        gm = float(np.exp(np.mean(np.log(diag))))
        assert bym2_scaling(path3_graph).alpha == pytest.approx(math.sqrt(gm), abs=1e-12)

    def test_relabeling_invariance(self):
        a = bym2_scaling(build_graph({"A": ["B"], "B": ["A", "C"], "C": ["B"]}))
        b = bym2_scaling(build_graph({"X": ["Q"], "Q": ["X", "K"], "K": ["Q"]}))
        assert a.alpha == pytest.approx(b.alpha, abs=1e-14)

    def test_components_scaled_independently(self):
        # a path-3 next to a 2-node pair: each component keeps the alpha
        # it would have alone
        g = build_graph({"A": ["B"], "B": ["A", "C"], "C": ["B"], "X": ["Y"], "Y": ["X"]})
        scaling = bym2_scaling(g)
        assert scaling.component_sizes == (3, 2)
        assert scaling.alpha_by_component[0] == pytest.approx(PATH3_ALPHA, abs=1e-6)
        assert scaling.alpha_by_component[1] == pytest.approx(0.5, abs=1e-12)
        with pytest.raises(ValueError):
            scaling.alpha  # ambiguous with two scaled components

    def test_singleton_nodes_unscaled(self):
        g = build_graph("A: B\nB: A\nS:\n")
        scaling = bym2_scaling(g)
        assert math.isnan(scaling.alpha_by_node[g.index("S")])
        assert scaling.alpha == pytest.approx(0.5, abs=1e-12)  # the single scaled component

    def test_all_singletons_rejected(self):
        with pytest.raises(GraphError, match="singleton"):
            bym2_scaling(build_graph("A:\nB:\n"))

    def test_report_shape(self, path3_graph):
        report = bym2_scaling(path3_graph).report(path3_graph)
        assert list(report.columns) == [
            "component", "size", "geometric_mean_marginal_variance", "alpha",
        ]
        assert len(report) == 1
