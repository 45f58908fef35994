# confsel/services/structure.py
# The module implements constraint-based neighbour discovery (MMPC, three phases) over
# any CiOracle, decomposable multinomial scores, and the skeleton-constrained
# hill-climbing search that together make up MMHC.

from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from confsel.schemas.config import HillClimbConfig, MmpcConfig
from confsel.services.citest import CiOracle
from confsel.services.dataset import DiscreteDataset, stratum_ids
from confsel.services.graphs import Dag, Skeleton
from confsel.utils.logger import logger

# Gains at or below this are treated as no improvement.
_MIN_GAIN = 1e-10

DELETE, REVERSE, ADD = 0, 1, 2


def _subsets(pool: Sequence[int], max_size: Optional[int]) -> Iterable[Tuple[int, ...]]:
    """All subsets of pool by increasing size, capped at max_size."""
    top = len(pool) if max_size is None else min(max_size, len(pool))
    for size in range(top + 1):
        yield from combinations(pool, size)


def _grow_index(oracle: CiOracle, target: int, candidates: List[int], max_cond_size: Optional[int]) -> List[int]:
    """
    Ascending-index pass. Uncapped, a candidate joins unless it is independent of the
    target given the whole CMB; capped, unless some subset of the CMB of at most
    max_cond_size members separates it.
    """
    cmb: List[int] = []
    for v in candidates:
        if max_cond_size is None:
            separated = oracle.query(target, v, cmb)
        else:
            separated = any(oracle.query(target, v, subset) for subset in _subsets(cmb, max_cond_size))
        if not separated:
            cmb.append(v)
    return cmb


def _grow_max_min(oracle: CiOracle, target: int, candidates: List[int], max_cond_size: Optional[int]) -> List[int]:
    """
    Adds, one at a time, the candidate whose minimum association with the target over
    subsets of the current CMB is largest. Candidates reaching zero association are dropped.
    Minima are updated incrementally with the subsets that contain the newest member.
    """
    cmb: List[int] = []
    min_assoc = {v: oracle.association(target, v, ()) for v in candidates}
    remaining = [v for v in candidates if min_assoc[v] > 0.0]
    while remaining:
        chosen = max(remaining, key=lambda v: (min_assoc[v], -v))
        remaining.remove(chosen)
        previous = list(cmb)
        cmb.append(chosen)
        if max_cond_size is not None and max_cond_size == 0:
            continue
        cap = None if max_cond_size is None else max_cond_size - 1
        survivors = []
        for v in remaining:
            for base in _subsets(previous, cap):
                assoc = oracle.association(target, v, base + (chosen,))
                if assoc < min_assoc[v]:
                    min_assoc[v] = assoc
                if assoc == 0.0:
                    break
            if min_assoc[v] > 0.0:
                survivors.append(v)
        remaining = survivors
    return cmb


def _shrink(oracle: CiOracle, target: int, cmb: List[int], max_cond_size: Optional[int]) -> List[int]:
    current = list(cmb)
    for v in list(cmb):
        others = [u for u in current if u != v]
        if any(oracle.query(target, v, subset) for subset in _subsets(others, max_cond_size)):
            current.remove(v)
    return current


def mmpc_neighbors(
    oracle: CiOracle,
    target: int,
    candidates: Iterable[int],
    cfg: MmpcConfig = MmpcConfig(),
) -> FrozenSet[int]:
    """
    Phases 1 and 2: grow a candidate blanket of `target` from `candidates`, then remove
    every member separated from the target by some subset of the rest.
    """
    pool = sorted(set(candidates))
    if target in pool:
        raise ValueError("target must not be among its own candidates")
    if not pool:
        return frozenset()
    if cfg.variable_order == "max_min":
        cmb = _grow_max_min(oracle, target, pool, cfg.max_cond_size)
    else:
        cmb = _grow_index(oracle, target, pool, cfg.max_cond_size)
    return frozenset(_shrink(oracle, target, cmb, cfg.max_cond_size))


class _NeighborMemo:
    """Phase 1-2 results for each vertex of a fixed universe."""

    def __init__(self, oracle: CiOracle, vertices: Iterable[int], cfg: MmpcConfig):
        self.oracle = oracle
        self.vertices = frozenset(vertices)
        self.cfg = cfg
        self._memo: Dict[int, FrozenSet[int]] = {}

    def __call__(self, v: int) -> FrozenSet[int]:
        if v not in self._memo:
            self._memo[v] = mmpc_neighbors(self.oracle, v, self.vertices - {v}, self.cfg)
        return self._memo[v]


def mmpc_blanket(
    oracle: CiOracle,
    target: int,
    vertices: Iterable[int],
    cfg: MmpcConfig = MmpcConfig(),
) -> FrozenSet[int]:
    """
    Phase 3 for a single vertex: keep l in the target's set only if the target is also in
    l's set. Only the vertices that need checking are searched.
    """
    vertices = frozenset(vertices) | {target}
    neighbors = _NeighborMemo(oracle, vertices, cfg)
    return frozenset(v for v in neighbors(target) if target in neighbors(v))


def mmpc_skeleton(
    oracle: CiOracle,
    vertices: Iterable[int],
    cfg: MmpcConfig = MmpcConfig(),
    p: Optional[int] = None,
    names: Optional[Sequence[str]] = None,
) -> Skeleton:
    """Runs phases 1-2 for every vertex and keeps an edge only when both ends agree."""
    vertices = sorted(set(vertices))
    if len(vertices) < 2:
        raise ValueError("a skeleton needs at least two vertices")
    size = p if p is not None else vertices[-1] + 1
    neighbors = _NeighborMemo(oracle, vertices, cfg)
    skeleton = Skeleton(size, names=names)
    for a in vertices:
        for b in neighbors(a):
            if a < b and a in neighbors(b):
                skeleton.add_edge(a, b)
    logger.debug(f"MMPC skeleton over {len(vertices)} vertices has {len(skeleton.edges())} edges.")
    return skeleton


def local_score(data: DiscreteDataset, v: int, parents: Sequence[int], kind: str = "aic") -> float:
    """
    Multinomial log-likelihood of v given its parent configurations, less the penalty:
    k for AIC, k/2 * ln n for BIC, nothing for 'loglik', with
    k = (levels_v - 1) * prod(levels of parents).
    """
    parents = tuple(parents)
    if v in parents:
        raise ValueError("a vertex cannot be its own parent")
    levels_v = int(data.levels[v])
    strata, n_strata = stratum_ids(data, parents)
    joint = np.bincount(strata * levels_v + data.codes[v], minlength=n_strata * levels_v).reshape(n_strata, levels_v)
    totals = joint.sum(axis=1, keepdims=True)
    rows, cols = np.nonzero(joint)
    counts = joint[rows, cols].astype(float)
    loglik = float(np.dot(counts, np.log(counts) - np.log(totals[rows, 0].astype(float))))

    k = float(levels_v - 1)
    for u in parents:
        k *= float(data.levels[u])
    if kind == "aic":
        return loglik - k
    if kind == "bic":
        return loglik - 0.5 * k * np.log(max(data.n, 1))
    if kind == "loglik":
        return loglik
    raise ValueError(f"unknown score '{kind}'")


class ScoreCache:
    """Memo of local scores keyed by (vertex, sorted parent tuple)."""

    def __init__(self, data: DiscreteDataset, kind: str = "aic"):
        self.data = data
        self.kind = kind
        self._memo: Dict[Tuple[int, Tuple[int, ...]], float] = {}
        self.misses = 0

    def __call__(self, v: int, parents: Iterable[int]) -> float:
        key = (v, tuple(sorted(parents)))
        value = self._memo.get(key)
        if value is None:
            value = local_score(self.data, v, key[1], self.kind)
            self._memo[key] = value
            self.misses += 1
        return value

    def total(self, dag: Dag, vertices: Optional[Iterable[int]] = None) -> float:
        """Decomposable score of dag summed over vertices (default: all)."""
        vertices = range(dag.p) if vertices is None else vertices
        return float(sum(self(v, dag.parents(v)) for v in vertices))


def _creates_cycle_on_reverse(graph: nx.DiGraph, src: int, dst: int) -> bool:
    """True when flipping src -> dst would close a cycle, i.e. another src..dst path exists."""
    graph.remove_edge(src, dst)
    try:
        return nx.has_path(graph, src, dst)
    finally:
        graph.add_edge(src, dst)


def move_key(gain: float, move: int, src: int, dst: int) -> Tuple[float, int, int, int]:
    """Sort key of a candidate move: the smallest key wins (highest gain, then DELETE < REVERSE < ADD, then (src, dst))."""
    return (-gain, move, src, dst)


def hill_climb(data: DiscreteDataset, skeleton: Skeleton, cfg: HillClimbConfig = HillClimbConfig()) -> Dag:
    """
    Greedy ascent from the empty DAG over single-edge additions (skeleton edges only),
    deletions and reversals. The best-gain move is applied each round; equal gains prefer
    deletion, then reversal, then addition, then the smaller (source, destination).
    """
    if skeleton.p != data.p:
        raise ValueError("skeleton and data must have the same vertices")
    dag = Dag(data.p, names=data.names)
    graph = dag.graph
    score = ScoreCache(data, cfg.score)
    forbidden = cfg.forbidden_children
    pairs = skeleton.edges()
    touched = sorted({v for pair in pairs for v in pair})
    local = {v: score(v, ()) for v in touched}

    for _ in range(cfg.max_iter):
        best: Optional[Tuple[float, int, int, int]] = None
        best_key = None

        def consider(gain: float, move: int, src: int, dst: int):
            nonlocal best, best_key
            key = move_key(gain, move, src, dst)
            if best_key is None or key < best_key:
                best, best_key = (gain, move, src, dst), key

        for a, b in pairs:
            if graph.has_edge(a, b) or graph.has_edge(b, a):
                src, dst = (a, b) if graph.has_edge(a, b) else (b, a)
                without = dag.parents(dst) - {src}
                delete_gain = score(dst, without) - local[dst]
                consider(delete_gain, DELETE, src, dst)
                if dst not in forbidden and not _creates_cycle_on_reverse(graph, src, dst):
                    reverse_gain = delete_gain + score(src, dag.parents(src) | {dst}) - local[src]
                    consider(reverse_gain, REVERSE, src, dst)
            else:
                for src, dst in ((a, b), (b, a)):
                    if src in forbidden or nx.has_path(graph, dst, src):
                        continue
                    consider(score(dst, dag.parents(dst) | {src}) - local[dst], ADD, src, dst)

        if best is None or best[0] <= _MIN_GAIN:
            break
        gain, move, src, dst = best
        if move == ADD:
            graph.add_edge(src, dst)
        elif move == DELETE:
            graph.remove_edge(src, dst)
        else:
            graph.remove_edge(src, dst)
            graph.add_edge(dst, src)
        local[src] = score(src, dag.parents(src))
        local[dst] = score(dst, dag.parents(dst))
    else:
        logger.warning(f"Hill climbing stopped at max_iter={cfg.max_iter} before converging.")

    logger.debug(f"Hill climbing finished with {len(dag.edges())} edges after {score.misses} score evaluations.")
    return dag


def mmhc(
    oracle: CiOracle,
    data: DiscreteDataset,
    vertices: Iterable[int],
    mmpc_cfg: MmpcConfig = MmpcConfig(),
    hc_cfg: HillClimbConfig = HillClimbConfig(),
) -> Dag:
    """MMPC skeleton over `vertices` followed by hill climbing restricted to it."""
    skeleton = mmpc_skeleton(oracle, vertices, mmpc_cfg, p=data.p, names=data.names)
    return hill_climb(data, skeleton, hc_cfg)
