# confsel/services/targets.py
# The module runs the stepwise estimation of the six target covariate sets. Each step asks
# a blanket backend for the Markov blanket of T or Y over a candidate set, optionally
# within one treatment arm; the backend is either data-driven (MMPC / MMHC on a
# DiscreteDataset) or a perfect d-separation oracle on a known DAG.

from typing import Dict, FrozenSet, Iterable, Optional, Protocol, Set, Tuple

import numpy as np

from confsel.schemas.config import Method, SelectionConfig
from confsel.schemas.results import TargetSubsets
from confsel.services.citest import ArmConditionedOracle, EmpiricalOracle
from confsel.services.dataset import DiscreteDataset
from confsel.services.graphs import Dag, DsepOracle
from confsel.services.structure import hill_climb, mmpc_blanket, mmpc_skeleton
from confsel.utils.logger import logger

ARMS: Tuple[int, int] = (0, 1)


class BlanketBackend(Protocol):
    def blanket(self, focal: str, candidates: Iterable[str], arm: Optional[int] = None) -> FrozenSet[str]:
        """Markov blanket of `focal` among `candidates`, restricted to T == arm when arm is given."""
        ...


class EmpiricalBackend:
    """Learns blankets from a DiscreteDataset; one memoised CI oracle per row subset."""

    def __init__(self, data: DiscreteDataset, cfg: SelectionConfig = SelectionConfig()):
        if data.treatment is None or data.outcome is None:
            raise ValueError("the dataset needs designated treatment and outcome columns")
        self.data = data
        self.cfg = cfg
        self.warnings: Set[str] = set()
        self._subsets: Dict[Optional[int], Tuple[DiscreteDataset, EmpiricalOracle]] = {}

    def _subset(self, arm: Optional[int]) -> Tuple[DiscreteDataset, EmpiricalOracle]:
        if arm not in self._subsets:
            if arm is None:
                part = self.data
            else:
                part = self.data.take_rows(self.data.codes[self.data.index(self.data.treatment)] == arm)
            oracle = EmpiricalOracle(part, self.cfg.mmpc.alpha, self.cfg.mmpc.sample_size_guard)
            self._subsets[arm] = (part, oracle)
        return self._subsets[arm]

    def view(self, method: Method) -> "BlanketBackend":
        """This backend with the learning method fixed; views share the memoised oracles."""
        return _MethodView(self, method)

    def blanket(
        self,
        focal: str,
        candidates: Iterable[str],
        arm: Optional[int] = None,
        method: Optional[Method] = None,
    ) -> FrozenSet[str]:
        method = method or self.cfg.method
        data, oracle = self._subset(arm)
        if arm is not None and data.n < 2 * self.cfg.bins:
            message = f"arm {self.data.treatment}={arm} has {data.n} rows (< {2 * self.cfg.bins}); its blanket is empty"
            if message not in self.warnings:
                logger.warning(message)
                self.warnings.add(message)
            return frozenset()
        target = data.index(focal)
        pool = frozenset(data.indices(candidates)) - {target}
        if not pool:
            return frozenset()
        if method == "mmpc":
            found = mmpc_blanket(oracle, target, pool, self.cfg.mmpc)
        else:
            # adjacency in a DAG searched inside the MMPC skeleton, so never wider than the MMPC blanket
            skeleton = mmpc_skeleton(oracle, pool | {target}, self.cfg.mmpc, p=data.p, names=data.names)
            hc_cfg = self.cfg.hill_climb.model_copy(update={"forbidden_children": frozenset({target})})
            found = hill_climb(data, skeleton, hc_cfg).adjacent(target)
        return frozenset(data.names[v] for v in found)


class _MethodView:
    def __init__(self, backend: EmpiricalBackend, method: Method):
        self.backend = backend
        self.method = method

    def blanket(self, focal: str, candidates: Iterable[str], arm: Optional[int] = None) -> FrozenSet[str]:
        return self.backend.blanket(focal, candidates, arm, self.method)


class OracleBackend:
    """
    Blankets from d-separation in a known DAG. Restricting to an arm conditions on the
    treatment, so the treatment vertex joins every conditioning set of arm-level queries.
    """

    def __init__(self, dag: Dag, treatment: str = "T", cfg: SelectionConfig = SelectionConfig()):
        if cfg.method != "mmpc":
            raise ValueError("the oracle backend only supports MMPC")
        self.dag = dag
        self.treatment = treatment
        # uncapped conditioning sets: the oracle has no sample size to protect
        self.mmpc_cfg = cfg.mmpc.model_copy(update={"max_cond_size": None})
        self._oracle = DsepOracle(dag)
        self._arm_oracle = ArmConditionedOracle(self._oracle, [dag.index(treatment)])

    def blanket(self, focal: str, candidates: Iterable[str], arm: Optional[int] = None) -> FrozenSet[str]:
        oracle = self._oracle if arm is None else self._arm_oracle
        target = self.dag.index(focal)
        pool = frozenset(self.dag.indices(candidates)) - {target}
        if not pool:
            return frozenset()
        found = mmpc_blanket(oracle, target, pool, self.mmpc_cfg)
        return frozenset(self.dag.names[v] for v in found)


def select_targets(
    backend: BlanketBackend,
    covariates: Iterable[str],
    treatment: str,
    outcome: str,
    refine: Optional[BlanketBackend] = None,
) -> TargetSubsets:
    """
    1. xt: blanket of T over X.
    2. qt: per arm, blanket of Y over xt; union.
    3. xy: per arm, blanket of Y over X; union.
    4. zy: per arm, blanket of T over that arm's xy on the full sample; union.
    5. xty: xt | xy.
    6. wy: per arm, blanket of Y over xty; union.

    With `refine`, every step searches the same candidate pool as `backend` but keeps
    refine's blanket, cut down to the refined set it stems from. When each refined
    blanket lies inside backend's blanket over the same pool, every refined set lies
    inside the corresponding backend set.
    """
    covariates = frozenset(covariates) - {treatment, outcome}

    def step(focal: str, pool: FrozenSet[str], arm: Optional[int], within: Optional[FrozenSet[str]] = None):
        wide = backend.blanket(focal, pool, arm)
        if refine is None:
            return wide, wide
        narrow = refine.blanket(focal, pool, arm)
        return wide, narrow if within is None else narrow & within

    xt_pool, xt = step(treatment, covariates, None)
    qt_arms = [step(outcome, xt_pool, arm, xt)[1] for arm in ARMS]
    xy_steps = [step(outcome, covariates, arm) for arm in ARMS]
    zy_arms = [step(treatment, pool, None, narrow)[1] for pool, narrow in xy_steps]
    xy_arms = [narrow for _, narrow in xy_steps]
    xy = xy_arms[0] | xy_arms[1]
    xty = xt | xy
    xty_pool = xt_pool | xy_steps[0][0] | xy_steps[1][0]
    wy_arms = [step(outcome, xty_pool, arm, xty)[1] for arm in ARMS]
    return TargetSubsets(
        treatment=treatment,
        outcome=outcome,
        xt=xt,
        qt=qt_arms[0] | qt_arms[1],
        xy=xy,
        zy=zy_arms[0] | zy_arms[1],
        xty=xty,
        wy=wy_arms[0] | wy_arms[1],
        qt0=qt_arms[0], qt1=qt_arms[1],
        xy0=xy_arms[0], xy1=xy_arms[1],
        zy0=zy_arms[0], zy1=zy_arms[1],
        wy0=wy_arms[0], wy1=wy_arms[1],
    )


def estimate_targets(data: DiscreteDataset, cfg: SelectionConfig = SelectionConfig()) -> TargetSubsets:
    """Target sets learned from data with cfg.method ('mmpc' or 'mmhc')."""
    backend = EmpiricalBackend(data, cfg)
    covariates = [data.names[v] for v in data.covariate_indices()]
    if cfg.method == "mmhc":
        # MMHC refines inside the MMPC pipeline's candidate pools
        subsets = select_targets(
            backend.view("mmpc"), covariates, data.treatment, data.outcome, refine=backend.view("mmhc")
        )
    else:
        subsets = select_targets(backend, covariates, data.treatment, data.outcome)
    if np.any(data.constant[data.indices([data.treatment])]):
        logger.warning(f"Treatment column '{data.treatment}' is constant; every set is empty.")
    return subsets


def oracle_targets(dag: Dag, treatment: str = "T", outcome: str = "Y") -> TargetSubsets:
    """Target sets a perfect CI learner recovers from the observed vertices of dag."""
    covariates = [dag.names[v] for v in sorted(dag.observed)]
    return select_targets(OracleBackend(dag, treatment), covariates, treatment, outcome)
