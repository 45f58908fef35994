# confsel/services/dgp.py
# The module simulates the two data-generating settings (ten core covariates, nuisance
# covariates, a binary treatment and linear / binary / nonlinear potential outcomes),
# computes the true average causal effect and checks estimated sets against the truth.

from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, Tuple

import numpy as np
import pandas as pd
from scipy import special

from confsel.schemas.config import SimConfig
from confsel.services.dataset import AUDIT_PREFIX, RawDataset
from confsel.utils.logger import logger

_MASK64 = (1 << 64) - 1
NUISANCE_BLOCK = 10
NUISANCE_RHO = 0.3
TRUE_ACE_SEED = 0x5EEDACE
TRUE_ACE_CHUNK = 1_000_000


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function; used to decorrelate replication indices."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_seed(base_seed: int, index: int) -> int:
    """Seed of replication `index`: independent of scheduling and worker count."""
    return (base_seed ^ splitmix64(index)) & _MASK64


def _streams(seed: int, count: int):
    """`count` non-overlapping Philox streams derived from one seed."""
    bit_generator = np.random.Philox(seed)
    jumped = [bit_generator.jumped(k) for k in range(1, count)]
    return [np.random.Generator(bg) for bg in [bit_generator] + jumped]


def _uniform(rng: np.random.Generator, size) -> np.ndarray:
    # rng.random() is a multiple of 2**-53; the offset keeps draws strictly inside (0, 1)
    return rng.random(size) + 2.0**-54


def _normal(rng: np.random.Generator, size) -> np.ndarray:
    return special.ndtri(_uniform(rng, size))


def _core(rng: np.random.Generator, n: int, setting: int) -> Dict[str, np.ndarray]:
    """X1..X10 (and U1..U3 for setting 2) in a fixed draw order."""
    z = _normal(rng, (4, n))
    root = np.sqrt(0.75)
    x2 = 0.5 * z[0] + root * z[1]
    x1 = (z[0] > 0).astype(np.int64)
    x5 = z[2]
    x6 = ((0.5 * z[2] + root * z[3]) > 0).astype(np.int64)

    # (X7, X8) categories 0..3 = (0,0), (1,1), (1,0), (0,1) with probs .425, .425, .075, .075
    u = _uniform(rng, n)
    pair = np.searchsorted(np.array([0.425, 0.85, 0.925]), u, side="right")
    x7 = np.isin(pair, (1, 2)).astype(np.int64)
    x8 = np.isin(pair, (1, 3)).astype(np.int64)

    x3 = (_uniform(rng, n) < 0.5).astype(np.int64)
    x10 = (_uniform(rng, n) < 0.5).astype(np.int64)

    core = {"X1": x1, "X2": x2, "X3": x3, "X5": x5, "X6": x6, "X7": x7, "X8": x8, "X10": x10}
    if setting == 1:
        extra = _normal(rng, (2, n))
        core["X4"], core["X9"] = extra[0], extra[1]
    else:
        latent = _normal(rng, (3, n))
        noise = np.sqrt(0.5) * _normal(rng, (2, n))
        core["U1"], core["U2"], core["U3"] = latent[0], latent[1], latent[2]
        core["X4"] = 0.2 + 0.8 * latent[2] + noise[0]
        core["X9"] = 1.0 + 2.0 * latent[0] + 3.0 * latent[1] + noise[1]
    return core


def _nuisance(rng: np.random.Generator, n: int, count: int) -> Dict[str, np.ndarray]:
    """
    X11 onwards, in blocks of ten: an AR(1) chain (rho = 0.3) started from a block latent;
    every second column is thresholded at zero.
    """
    columns: Dict[str, np.ndarray] = {}
    scale = np.sqrt(1.0 - NUISANCE_RHO**2)
    for start in range(0, count, NUISANCE_BLOCK):
        width = min(NUISANCE_BLOCK, count - start)
        draws = _normal(rng, (width, n))
        current = draws[0]
        for k in range(width):
            if k > 0:
                current = NUISANCE_RHO * current + scale * draws[k]
            name = f"X{11 + start + k}"
            columns[name] = (current > 0).astype(np.int64) if k % 2 == 1 else current.copy()
    return columns


def linear_predictors(core: Dict[str, np.ndarray], setting: int) -> Tuple[np.ndarray, np.ndarray]:
    """(f_T, f_Y) including the latent terms in setting 2."""
    f_t = 3.0 - 2.0 * core["X1"] - 2.0 * core["X2"] - 2.0 * core["X3"] - core["X4"] - 2.0 * core["X7"]
    f_y = 4.0 * core["X1"] + 2.0 * core["X2"] + 2.0 * core["X5"] + 4.0 * core["X6"] + 4.0 * core["X8"]
    if setting == 2:
        f_t = f_t - core["U1"]
        f_y = f_y + 7.0 * core["U2"] + 2.0 * core["U3"]
    return f_t, f_y


def nonlinear_mean(core: Dict[str, np.ndarray], setting: int, t: int) -> np.ndarray:
    """Conditional mean of the nonlinear potential outcome Y(t)."""
    slope = (7.0 - 3.0 * t) if setting == 2 else (7.0 - 4.0 * t)
    value = (
        2.0
        + 4.4 * t
        + slope * core["X1"]
        - (6.0 + 3.0 * t) * core["X6"] / (0.5 + (core["X2"] + 1.4) ** (2 + 2 * t))
        + 2.0 * core["X5"] ** 2
        + 4.0 * core["X8"]
    )
    if setting == 2:
        value = value + 7.0 * core["U2"] + 2.0 * core["U3"]
    return value


def _conditional_effect(core: Dict[str, np.ndarray], setting: int, outcome: str) -> np.ndarray:
    _, f_y = linear_predictors(core, setting)
    if outcome == "linear":
        return np.full(f_y.shape, 2.0)
    if outcome == "binary":
        return special.expit(4.0 - f_y) - special.expit(2.0 - f_y)
    return nonlinear_mean(core, setting, 1) - nonlinear_mean(core, setting, 0)


def simulate(cfg: SimConfig) -> RawDataset:
    """
    One draw of n rows: X1..Xp, T, Y and, when requested, audit columns with the potential
    outcomes (and the latents in setting 2).
    """
    core_rng, nuisance_rng, outcome_rng = _streams(cfg.seed, 3)
    n = cfg.n
    core = _core(core_rng, n, cfg.setting)
    nuisance = _nuisance(nuisance_rng, n, cfg.p_total - 10)

    f_t, f_y = linear_predictors(core, cfg.setting)
    treated = (_uniform(outcome_rng, n) < special.expit(-f_t)).astype(np.int64)

    if cfg.outcome == "linear":
        eps = _normal(outcome_rng, (2, n))
        y0 = 2.0 + f_y + eps[0]
        y1 = 4.0 + f_y + eps[1]
    elif cfg.outcome == "binary":
        u = _uniform(outcome_rng, (2, n))
        y0 = (u[0] < special.expit(2.0 - f_y)).astype(np.int64)
        y1 = (u[1] < special.expit(4.0 - f_y)).astype(np.int64)
    else:
        eps = _normal(outcome_rng, (2, n))
        y0 = nonlinear_mean(core, cfg.setting, 0) + eps[0]
        y1 = nonlinear_mean(core, cfg.setting, 1) + eps[1]
    y = np.where(treated == 1, y1, y0)

    columns: Dict[str, np.ndarray] = {f"X{k}": core[f"X{k}"] for k in range(1, 11)}
    columns.update(nuisance)
    columns["T"] = treated
    columns["Y"] = y
    if cfg.emit_potential_outcomes:
        columns[f"{AUDIT_PREFIX}Y0"] = y0
        columns[f"{AUDIT_PREFIX}Y1"] = y1
        if cfg.setting == 2:
            for name in ("U1", "U2", "U3"):
                columns[f"{AUDIT_PREFIX}{name}"] = core[name]
    return RawDataset(pd.DataFrame(columns), treatment="T", outcome="Y")


@lru_cache(maxsize=None)
def true_ace(setting: int, outcome: str, mc_n: int = 10_000_000, seed: int = TRUE_ACE_SEED) -> float:
    """
    E[Y(1) - Y(0)]. Exactly 2 for the linear model; otherwise the Monte-Carlo mean of the
    conditional effect over mc_n fresh covariate draws, in chunks.
    """
    if outcome == "linear":
        return 2.0
    if mc_n < 100_000:
        raise ValueError("mc_n must be at least 100000")
    total = 0.0
    done = 0
    chunk = 0
    while done < mc_n:
        size = min(TRUE_ACE_CHUNK, mc_n - done)
        (rng,) = _streams(stream_seed(seed, chunk), 1)
        total += float(np.sum(_conditional_effect(_core(rng, size, setting), setting, outcome)))
        done += size
        chunk += 1
    value = total / mc_n
    logger.info(f"True ACE for setting {setting}, {outcome} outcome: {value:.6f} ({mc_n} draws, seed {seed}).")
    return value


def _xs(*indices: int) -> FrozenSet[str]:
    return frozenset(f"X{k}" for k in indices)


_CAUSAL_SETS = {
    1: {
        "xt": _xs(1, 2, 3, 4, 7),
        "qt": _xs(1, 2, 7),
        "xy": _xs(1, 2, 5, 6, 8),
        "zy": _xs(1, 2, 8),
        "xty": _xs(1, 2, 3, 4, 5, 6, 7, 8),
        "wy": _xs(1, 2, 5, 6, 8),
    },
    2: {
        "xt": _xs(1, 2, 3, 4, 7),
        "qt": _xs(1, 2, 4, 7),
        "xy": _xs(1, 2, 5, 6, 8),
        "zy": _xs(1, 2, 8),
        "xty": _xs(1, 2, 3, 4, 5, 6, 7, 8),
        "wy": _xs(1, 2, 4, 5, 6, 8),
    },
}

_CI_SETS = {
    1: _CAUSAL_SETS[1],
    2: {
        "xt": _xs(1, 2, 3, 4, 7, 9),
        "qt": _xs(1, 2, 4, 7, 9),
        "xy": _xs(1, 2, 4, 5, 6, 8, 9),
        "zy": _xs(1, 2, 4, 8, 9),
        "xty": _xs(1, 2, 3, 4, 5, 6, 7, 8, 9),
        "wy": _xs(1, 2, 4, 5, 6, 8, 9),
    },
}


def true_sets(setting: int) -> Dict[str, FrozenSet[str]]:
    """The causal target sets of each setting's graph, used to score estimated sets."""
    return dict(_CAUSAL_SETS[setting])


def ci_sets(setting: int) -> Dict[str, FrozenSet[str]]:
    """The sets a perfect conditional-independence learner recovers from the observed variables."""
    return dict(_CI_SETS[setting])


def check_success(setting: int, selected: Iterable[str], true_set: Iterable[str]) -> Tuple[bool, bool, bool]:
    """
    (unconf, superset, equal). Unconfoundedness needs X1, X2 and one of X7 / X8; setting 2
    also needs X4 and must exclude the collider X9.
    """
    chosen = frozenset(selected)
    truth = frozenset(true_set)
    unconf = {"X1", "X2"} <= chosen and bool({"X7", "X8"} & chosen)
    if setting == 2:
        unconf = unconf and "X4" in chosen and "X9" not in chosen
    return unconf, truth <= chosen, truth == chosen
