# confsel/tasks/harness.py
# The module contains the replication engine: each replication simulates one dataset,
# selects the target sets with every requested method, scores them against the truth and
# runs every requested estimator on each distinct set. Replications run in a joblib pool
# and are folded back in index order.

import time
from dataclasses import dataclass
from itertools import product
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from confsel.core.errors import EstimationError
from confsel.schemas.config import GridSpec, PsmConfig, SelectionConfig, SimConfig, TmleConfig
from confsel.schemas.results import (
    SET_NAMES,
    AceEstimate,
    EstimateRecord,
    ReplicationRecord,
    SelectionRecord,
)
from confsel.services.dataset import discretize
from confsel.services.dgp import check_success, simulate, stream_seed, true_ace, true_sets
from confsel.services.estimators import psm_ace, tmle_ace
from confsel.services.targets import estimate_targets
from confsel.utils.logger import logger

# The full covariate set is method-independent and is reported under this method label.
ALL_METHOD = "all"
FULL_SET = "X"


@dataclass(frozen=True)
class Cell:
    setting: int
    n: int
    outcome: str


@dataclass(frozen=True)
class ReplicationPlan:
    """Everything a worker needs besides the cell and the replication index."""
    grid: GridSpec
    selection: Dict[str, SelectionConfig]
    psm: PsmConfig
    tmle: TmleConfig


def grid_cells(grid: GridSpec) -> List[Cell]:
    return [Cell(s, n, o) for s, n, o in product(grid.data_settings, grid.sizes, grid.outcomes)]


def _estimate(estimator: str, data, covariates: Sequence[str], plan: ReplicationPlan) -> AceEstimate:
    if estimator == "psm":
        return psm_ace(data, covariates, plan.psm)
    return tmle_ace(data, covariates, plan.tmle)


def run_replication(cell: Cell, replication: int, plan: ReplicationPlan) -> ReplicationRecord:
    """One seeded draw of `cell`, scored and estimated with every method and estimator."""
    started = time.perf_counter()
    grid = plan.grid
    seed = stream_seed(grid.base_seed, replication)
    raw = simulate(
        SimConfig(
            setting=cell.setting,
            n=cell.n,
            outcome=cell.outcome,
            seed=seed,
            p_total=grid.p_total,
            emit_potential_outcomes=False,
        )
    )
    truth = true_sets(cell.setting)
    record = ReplicationRecord(
        setting=cell.setting, n=cell.n, outcome=cell.outcome, replication=replication, seed=seed
    )

    candidates: List[Tuple[str, str, FrozenSet[str]]] = [(ALL_METHOD, FULL_SET, frozenset(raw.covariates))]
    unconf, superset, equal = check_success(cell.setting, raw.covariates, truth["xty"])
    record.selections.append(
        SelectionRecord(
            method=ALL_METHOD,
            set_name=FULL_SET,
            selected=frozenset(raw.covariates),
            unconf=unconf,
            superset=superset,
            equal=equal,
        )
    )

    bins = {cfg.bins for cfg in plan.selection.values()}
    discrete = {b: discretize(raw, b) for b in sorted(bins)}
    for method in grid.methods:
        cfg = plan.selection[method]
        subsets = estimate_targets(discrete[cfg.bins], cfg)
        for name in SET_NAMES:
            selected = getattr(subsets, name)
            unconf, superset, equal = check_success(cell.setting, selected, truth[name])
            record.selections.append(
                SelectionRecord(
                    method=method, set_name=name, selected=selected, unconf=unconf, superset=superset, equal=equal
                )
            )
            candidates.append((method, name, selected))

    # identical sets share one estimate within a replication
    memo: Dict[Tuple[str, FrozenSet[str]], EstimateRecord] = {}
    order = {name: k for k, name in enumerate(raw.covariates)}
    for method, name, selected in candidates:
        covariates = sorted(selected, key=order.get)
        for estimator in grid.estimators:
            key = (estimator, selected)
            if key not in memo:
                try:
                    est = _estimate(estimator, raw, covariates, plan)
                    memo[key] = EstimateRecord(
                        method=method,
                        set_name=name,
                        estimator=estimator,
                        beta_hat=est.beta_hat,
                        se=est.se,
                        ci_low=est.ci_low,
                        ci_high=est.ci_high,
                    )
                except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as e:
                    logger.warning(
                        f"Replication {replication} ({cell.setting}, {cell.n}, {cell.outcome}): "
                        f"{estimator} on {method}/{name} failed: {e}"
                    )
                    memo[key] = EstimateRecord(
                        method=method, set_name=name, estimator=estimator, failed=True, error=str(e)
                    )
            record.estimates.append(memo[key].model_copy(update={"method": method, "set_name": name}))

    record.wall_time = time.perf_counter() - started
    return record


def run_grid(
    grid: GridSpec,
    selection: Dict[str, SelectionConfig],
    psm: PsmConfig = PsmConfig(),
    tmle: TmleConfig = TmleConfig(),
    workers: Optional[int] = None,
) -> Tuple[List[ReplicationRecord], Dict[Tuple[int, str], float]]:
    """
    Runs grid.replications replications of every cell. Returns the records in
    (cell, replication) order and the true ACE of each (setting, outcome).
    """
    missing = set(grid.methods) - set(selection)
    if missing:
        raise ValueError(f"no selection config for method(s): {', '.join(sorted(missing))}")
    plan = ReplicationPlan(grid=grid, selection=selection, psm=psm, tmle=tmle)
    truths = {
        (s, o): true_ace(s, o, grid.true_ace_mc_n)
        for s, o in sorted({(c.setting, c.outcome) for c in grid_cells(grid)})
    }
    jobs = [(cell, r) for cell in grid_cells(grid) for r in range(grid.replications)]
    n_jobs = workers if workers is not None else -1
    logger.info(f"Running {len(jobs)} replications on {'all' if n_jobs == -1 else n_jobs} worker(s).")

    if n_jobs == 1:
        records = [
            run_replication(cell, r, plan)
            for cell, r in logger.track(jobs, description="Replications")
        ]
    else:
        records = Parallel(n_jobs=n_jobs)(delayed(run_replication)(cell, r, plan) for cell, r in jobs)

    failures = sum(est.failed for rec in records for est in rec.estimates)
    if failures:
        logger.warning(f"{failures} estimator run(s) failed and are excluded from the aggregates.")
    logger.success(f"Finished {len(records)} replications.")
    return records, truths
