# confsel/services/graphs.py
# The module provides the undirected Skeleton and the Dag types, Markov-blanket queries,
# d-separation (reachability and moral-graph forms) and the d-separation CI oracle.
# Vertices are integers 0..p-1; names are carried for reporting and serialization.

from collections import deque
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from confsel.core.errors import OracleQueryError


def _default_names(p: int) -> List[str]:
    return [f"V{k}" for k in range(p)]


class Skeleton:
    """Undirected graph over p vertices stored as a symmetric boolean adjacency matrix."""

    def __init__(self, p: int, edges: Iterable[Tuple[int, int]] = (), names: Optional[Sequence[str]] = None):
        self.p = p
        self.names = list(names) if names is not None else _default_names(p)
        self.adjacency = np.zeros((p, p), dtype=bool)
        for a, b in edges:
            self.add_edge(a, b)

    def add_edge(self, a: int, b: int):
        if a == b:
            raise ValueError("self-edges are not allowed")
        self.adjacency[a, b] = self.adjacency[b, a] = True

    def remove_edge(self, a: int, b: int):
        self.adjacency[a, b] = self.adjacency[b, a] = False

    def has_edge(self, a: int, b: int) -> bool:
        return bool(self.adjacency[a, b])

    def neighbors(self, v: int) -> FrozenSet[int]:
        return frozenset(np.flatnonzero(self.adjacency[v]).tolist())

    def edges(self) -> List[Tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(rows.tolist(), cols.tolist()))

    def __eq__(self, other) -> bool:
        return isinstance(other, Skeleton) and self.p == other.p and np.array_equal(self.adjacency, other.adjacency)


def markov_blanket_undirected(skeleton: Skeleton, v: int) -> FrozenSet[int]:
    """In an undirected graph the blanket of v is its neighbour set."""
    if not 0 <= v < skeleton.p:
        raise ValueError(f"vertex {v} out of range")
    return skeleton.neighbors(v)


class Dag:
    """
    Directed acyclic graph over p vertices, backed by a networkx DiGraph. Vertices listed
    in `latent` exist in the graph but are unobserved.
    """

    def __init__(
        self,
        p: int,
        edges: Iterable[Tuple[int, int]] = (),
        names: Optional[Sequence[str]] = None,
        latent: Iterable[int] = (),
    ):
        self.p = p
        self.names = list(names) if names is not None else _default_names(p)
        if len(self.names) != p:
            raise ValueError("one name per vertex is required")
        self._index = {name: k for k, name in enumerate(self.names)}
        self.latent: FrozenSet[int] = frozenset(latent)
        self.graph = nx.DiGraph()
        self.graph.add_nodes_from(range(p))
        for a, b in edges:
            self.add_edge(a, b)

    def index(self, name: str) -> int:
        return self._index[name]

    def indices(self, names: Iterable[str]) -> List[int]:
        return [self._index[name] for name in names]

    def add_edge(self, a: int, b: int):
        if a == b:
            raise ValueError("self-edges are not allowed")
        if nx.has_path(self.graph, b, a):
            raise ValueError(f"edge {self.names[a]} -> {self.names[b]} would create a cycle")
        self.graph.add_edge(a, b)

    def remove_edge(self, a: int, b: int):
        self.graph.remove_edge(a, b)

    def has_edge(self, a: int, b: int) -> bool:
        return self.graph.has_edge(a, b)

    def parents(self, v: int) -> FrozenSet[int]:
        return frozenset(self.graph.predecessors(v))

    def children(self, v: int) -> FrozenSet[int]:
        return frozenset(self.graph.successors(v))

    def adjacent(self, v: int) -> FrozenSet[int]:
        return self.parents(v) | self.children(v)

    def edges(self) -> List[Tuple[int, int]]:
        return sorted(self.graph.edges())

    def markov_blanket(self, v: int) -> FrozenSet[int]:
        """Parents, children and the children's other parents."""
        blanket: Set[int] = set(self.parents(v))
        for child in self.children(v):
            blanket.add(child)
            blanket.update(self.parents(child))
        blanket.discard(v)
        return frozenset(blanket)

    def skeleton(self) -> Skeleton:
        return Skeleton(self.p, self.edges(), self.names)

    @property
    def observed(self) -> FrozenSet[int]:
        return frozenset(range(self.p)) - self.latent

    def to_edge_list(self) -> str:
        """'parent -> child' lines; vertices without edges appear as bare names."""
        lines = [f"{self.names[a]} -> {self.names[b]}" for a, b in self.edges()]
        lines += [self.names[v] for v in range(self.p) if self.graph.degree(v) == 0]
        if self.latent:
            lines.insert(0, "# latent: " + ",".join(self.names[v] for v in sorted(self.latent)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_list(cls, text: str, names: Optional[Sequence[str]] = None) -> "Dag":
        """
        Parses the to_edge_list format. Without `names`, vertices are numbered in order of
        first appearance.
        """
        order: Dict[str, int] = {name: k for k, name in enumerate(names or [])}
        edges: List[Tuple[str, str]] = []
        latent: List[str] = []

        def vertex(name: str) -> str:
            if name not in order:
                if names is not None:
                    raise ValueError(f"unknown vertex '{name}'")
                order[name] = len(order)
            return name

        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("latent:"):
                    latent += [part.strip() for part in body[len("latent:"):].split(",") if part.strip()]
                continue
            if "->" in line:
                parent, child = (part.strip() for part in line.split("->", 1))
                edges.append((vertex(parent), vertex(child)))
            else:
                vertex(line)
        for name in latent:
            vertex(name)
        ordered = sorted(order, key=order.get)
        return cls(
            len(ordered),
            [(order[a], order[b]) for a, b in edges],
            ordered,
            latent=[order[name] for name in latent],
        )


def _check_query(p: int, i: int, j: int, cond: Iterable[int]) -> Set[int]:
    cond = set(cond)
    if i == j:
        raise ValueError("d-separation needs two distinct vertices")
    if i in cond or j in cond:
        raise ValueError("queried vertices must not be in the conditioning set")
    if not all(0 <= v < p for v in cond | {i, j}):
        raise ValueError("vertex out of range")
    return cond


def d_separated(dag: Dag, i: int, j: int, cond: Iterable[int] = ()) -> bool:
    """
    Reachability ('Bayes-ball') test: j is d-separated from i given cond iff no active
    trail from i reaches j.
    """
    cond = _check_query(dag.p, i, j, cond)
    graph = dag.graph

    # Phase I: cond and its ancestors
    ancestors: Set[int] = set()
    to_visit = set(cond)
    while to_visit:
        v = to_visit.pop()
        if v not in ancestors:
            ancestors.add(v)
            to_visit.update(graph.predecessors(v))

    # Phase II: traverse active trails from i
    queue = deque([(i, "up")])
    visited: Set[Tuple[int, str]] = set()
    while queue:
        v, direction = queue.popleft()
        if (v, direction) in visited:
            continue
        visited.add((v, direction))
        if v == j and v not in cond:
            return False
        if direction == "up" and v not in cond:
            queue.extend((u, "up") for u in graph.predecessors(v))
            queue.extend((w, "down") for w in graph.successors(v))
        elif direction == "down":
            if v not in cond:
                queue.extend((w, "down") for w in graph.successors(v))
            if v in ancestors:
                queue.extend((u, "up") for u in graph.predecessors(v))
    return True


def d_separated_moral(dag: Dag, i: int, j: int, cond: Iterable[int] = ()) -> bool:
    """Equivalent criterion: separation in the moralized graph of the ancestral set of {i, j} | cond."""
    cond = _check_query(dag.p, i, j, cond)
    relevant = {i, j} | cond
    for v in list(relevant):
        relevant |= nx.ancestors(dag.graph, v)
    moral = nx.moral_graph(dag.graph.subgraph(relevant))
    moral.remove_nodes_from(cond)
    return not nx.has_path(moral, i, j)


class DsepOracle:
    """
    Perfect CI oracle: i is independent of j given cond iff they are d-separated in the
    full DAG. Latent vertices are never conditioned on and may not be queried.
    """

    def __init__(self, dag: Dag, observed: Optional[Iterable[int]] = None):
        self.dag = dag
        self.observed: FrozenSet[int] = frozenset(observed) if observed is not None else dag.observed
        self._memo: Dict[Tuple[int, int, Tuple[int, ...]], bool] = {}

    def query(self, i: int, j: int, cond: Sequence[int]) -> bool:
        mentioned = {i, j, *cond}
        hidden = mentioned - self.observed
        if hidden:
            raise OracleQueryError(
                "query mentions unobserved vertex " + ", ".join(self.dag.names[v] for v in sorted(hidden))
            )
        key = (min(i, j), max(i, j), tuple(sorted(cond)))
        if key not in self._memo:
            self._memo[key] = d_separated(self.dag, key[0], key[1], key[2])
        return self._memo[key]

    def association(self, i: int, j: int, cond: Sequence[int]) -> float:
        return 0.0 if self.query(i, j, cond) else 1.0


def dsep_oracle_ci(dag: Dag, observed: Optional[Iterable[int]] = None) -> DsepOracle:
    return DsepOracle(dag, observed)


STUDY_VARIABLES = [f"X{k}" for k in range(1, 11)] + ["T", "Y"]

_SETTING1_EDGES = [
    ("X2", "X1"),
    ("X1", "T"), ("X2", "T"), ("X3", "T"), ("X4", "T"), ("X7", "T"),
    ("X1", "Y"), ("X2", "Y"), ("X5", "Y"), ("X6", "Y"), ("X8", "Y"),
    ("X7", "X8"), ("X6", "X5"),
]

_SETTING2_LATENT_EDGES = [
    ("U1", "T"), ("U1", "X9"), ("U2", "X9"), ("U2", "Y"), ("U3", "X4"), ("U3", "Y"),
]


def _build(names: List[str], edges: List[Tuple[str, str]], latent: Sequence[str] = ()) -> Dag:
    index = {name: k for k, name in enumerate(names)}
    return Dag(
        len(names),
        [(index[a], index[b]) for a, b in edges],
        names,
        latent=[index[name] for name in latent],
    )


def setting1_dag() -> Dag:
    """Setting 1 ground truth: ten covariates, treatment T and potential outcome Y."""
    return _build(STUDY_VARIABLES, _SETTING1_EDGES)


def setting2_dag() -> Dag:
    """Setting 2 ground truth: the setting 1 graph plus latent U1..U3 making X9 a collider and X4 a confounder proxy."""
    latent = ["U1", "U2", "U3"]
    return _build(STUDY_VARIABLES + latent, _SETTING1_EDGES + _SETTING2_LATENT_EDGES, latent)
