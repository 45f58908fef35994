# tests/test_graphs.py

from itertools import combinations

import networkx as nx
import numpy as np
import pytest

from confsel.core.errors import OracleQueryError
from confsel.services.graphs import (
    Dag,
    DsepOracle,
    Skeleton,
    d_separated,
    d_separated_moral,
    dsep_oracle_ci,
    setting1_dag,
    setting2_dag,
    markov_blanket_undirected,
)


# networkx renamed d_separated to is_d_separator in 3.3
_reference = getattr(nx, "is_d_separator", None) or getattr(nx, "d_separated")


def _random_dag(rng, p, density):
    order = rng.permutation(p)
    edges = [(int(order[a]), int(order[b])) for a in range(p) for b in range(a + 1, p) if rng.random() < density]
    return Dag(p, edges)


def _names(dag, vertices):
    return {dag.names[v] for v in vertices}


class TestSkeleton:
    def test_edgeless_blanket(self):
        assert markov_blanket_undirected(Skeleton(3), 1) == frozenset()

    def test_path_blanket(self):
        skeleton = Skeleton(3, [(0, 1), (1, 2)])
        assert markov_blanket_undirected(skeleton, 1) == {0, 2}
        assert skeleton.edges() == [(0, 1), (1, 2)]

    def test_self_edge(self):
        with pytest.raises(ValueError):
            Skeleton(2, [(1, 1)])

    def test_setting1_treatment_neighbours(self):
        dag = setting1_dag()
        t = dag.index("T")
        assert _names(dag, markov_blanket_undirected(dag.skeleton(), t)) == {"X1", "X2", "X3", "X4", "X7"}


class TestDag:
    def test_cycle_is_rejected(self):
        dag = Dag(3, [(0, 1), (1, 2)])
        with pytest.raises(ValueError, match="cycle"):
            dag.add_edge(2, 0)

    def test_markov_blanket_includes_co_parents(self):
        dag = setting1_dag()
        assert _names(dag, dag.markov_blanket(dag.index("X1"))) == {"X2", "T", "Y", "X3", "X4", "X7", "X5", "X6", "X8"}

    def test_edge_list_round_trip_keeps_latents(self):
        dag = setting2_dag()
        back = Dag.from_edge_list(dag.to_edge_list(), names=dag.names)
        assert back.edges() == dag.edges()
        assert back.latent == dag.latent

    def test_edge_list_numbers_vertices_by_appearance(self):
        dag = Dag.from_edge_list("A -> B\nC\n")
        assert dag.names == ["A", "B", "C"]
        assert dag.edges() == [(0, 1)]


class TestDSeparation:
    def test_chain(self):
        dag = Dag(3, [(0, 1), (1, 2)])
        assert d_separated(dag, 0, 2, [1])
        assert not d_separated(dag, 0, 2, [])

    def test_collider_opens_when_conditioned(self):
        dag = Dag(3, [(0, 2), (1, 2)])
        assert d_separated(dag, 0, 1, [])
        assert not d_separated(dag, 0, 1, [2])

    def test_descendant_of_collider_opens(self):
        dag = Dag(4, [(0, 2), (1, 2), (2, 3)])
        assert not d_separated(dag, 0, 1, [3])

    def test_setting1_isolated_covariate(self):
        dag = setting1_dag()
        assert d_separated(dag, dag.index("X9"), dag.index("T"), [])

    def test_setting2_collider_opens_latent_path(self):
        dag = setting2_dag()
        t, y = dag.index("T"), dag.index("Y")
        base = dag.indices(["X1", "X2", "X7", "X4"])
        assert d_separated(dag, t, y, base)
        assert not d_separated(dag, t, y, base + [dag.index("X9")])

    def test_agrees_with_moral_graph_and_networkx(self, rng):
        for _ in range(40):
            p = int(rng.integers(4, 8))
            dag = _random_dag(rng, p, 0.35)
            for i, j in combinations(range(p), 2):
                others = [v for v in range(p) if v not in (i, j)]
                for size in range(min(3, len(others)) + 1):
                    for cond in combinations(others, size):
                        expected = _reference(dag.graph, {i}, {j}, set(cond))
                        assert d_separated(dag, i, j, cond) == expected
                        assert d_separated_moral(dag, i, j, cond) == expected

    def test_symmetric(self, rng):
        dag = _random_dag(rng, 7, 0.4)
        for i, j in combinations(range(7), 2):
            assert d_separated(dag, i, j, [k for k in range(7) if k not in (i, j)][:2]) == d_separated(
                dag, j, i, [k for k in range(7) if k not in (i, j)][:2]
            )

    def test_query_preconditions(self):
        dag = Dag(3, [(0, 1)])
        with pytest.raises(ValueError):
            d_separated(dag, 0, 0, [])
        with pytest.raises(ValueError):
            d_separated(dag, 0, 1, [1])


class TestDsepOracle:
    def test_latent_confounder_makes_dependence(self):
        dag = setting2_dag()
        oracle = dsep_oracle_ci(dag)
        assert not oracle.query(dag.index("X9"), dag.index("T"), [])
        assert not oracle.query(dag.index("X4"), dag.index("Y"), [])

    def test_isolated_vertex_is_independent(self):
        dag = Dag(3, [(0, 1)])
        oracle = DsepOracle(dag)
        assert oracle.query(2, 0, [])
        assert oracle.association(2, 0, []) == 0.0
        assert oracle.association(0, 1, []) == 1.0

    def test_latent_query_is_rejected(self):
        dag = setting2_dag()
        oracle = DsepOracle(dag)
        with pytest.raises(OracleQueryError):
            oracle.query(dag.index("T"), dag.index("Y"), [dag.index("U1")])

    def test_study_dags_are_acyclic(self):
        for dag in (setting1_dag(), setting2_dag()):
            assert nx.is_directed_acyclic_graph(dag.graph)
            assert np.all([dag.names[v].startswith("U") for v in dag.latent])
