# confsel/services/estimators.py
# The module estimates the average causal effect given a selected covariate set:
# main-effects logistic regression by IRLS for propensity scores and outcome models,
# one-to-one nearest-neighbour propensity-score matching with replacement and the
# matching variance, and a targeted (TMLE) estimator with GLM learners.

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from confsel.core.errors import EstimationError
from confsel.schemas.config import PsmConfig, TmleConfig
from confsel.schemas.results import AceEstimate
from confsel.services.dataset import FACTOR, RawDataset
from confsel.utils.logger import logger

MAX_ITER = 50
REL_TOL = 1e-10
RIDGE = 1e-8
SEPARATION_COEF = 15.0
ALIAS_TOL = 1e-10
PROB_EPS = 1e-12
Q_BOUND = 1e-9


@dataclass(frozen=True)
class LogisticModel:
    """A fitted main-effects logistic regression."""
    columns: List[str]
    coefficients: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    separated: bool = False
    dropped: List[str] = field(default_factory=list)

    def linear_predictor(self, design: np.ndarray, offset: Optional[np.ndarray] = None) -> np.ndarray:
        eta = design @ self.coefficients
        return eta if offset is None else eta + offset

    def predict(self, design: np.ndarray, offset: Optional[np.ndarray] = None) -> np.ndarray:
        """Probabilities clipped to stay strictly inside (0, 1)."""
        return np.clip(expit(self.linear_predictor(design, offset)), PROB_EPS, 1.0 - PROB_EPS)


def design_matrix(data: RawDataset, regressors: Sequence[str]) -> Tuple[np.ndarray, List[str]]:
    """
    Intercept plus main effects. Factors with more than two observed levels become indicator
    contrasts against their lowest level; binary factors and continuous columns enter as is.
    """
    blocks = [np.ones((data.n, 1))]
    names = ["(Intercept)"]
    for name in regressors:
        values = data.column(name)
        if data.kinds[name] == FACTOR:
            levels = np.unique(values)
            if levels.shape[0] > 2:
                blocks.append((values[:, None] == levels[None, 1:]).astype(float))
                names += [f"{name}={level}" for level in levels[1:].tolist()]
                continue
        blocks.append(values.astype(float)[:, None])
        names.append(name)
    return np.hstack(blocks), names


def _aliased(design: np.ndarray) -> np.ndarray:
    """Mask of columns that are linear combinations of the columns before them."""
    r = np.linalg.qr(design, mode="r")
    diag = np.abs(np.diag(r))
    scale = diag.max() if diag.size else 0.0
    return diag <= ALIAS_TOL * max(scale, 1.0)


def _loglik(y: np.ndarray, eta: np.ndarray) -> float:
    # y*eta - log(1 + e^eta), stable for large |eta|
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def irls(design: np.ndarray, y: np.ndarray, offset: Optional[np.ndarray] = None) -> Tuple[np.ndarray, bool, int, float]:
    """
    Newton-Raphson / IRLS for the binomial log-likelihood with an optional offset. y may be
    fractional in [0, 1] (quasi-binomial). Returns (coefficients, converged, iterations, loglik).
    """
    n, k = design.shape
    offset = np.zeros(n) if offset is None else offset
    beta = np.zeros(k)
    ybar = float(np.clip(np.mean(y), 1e-6, 1.0 - 1e-6))
    if k and np.allclose(design[:, 0], 1.0):
        beta[0] = logit(ybar) - float(np.mean(offset))
    eta = design @ beta + offset
    ll = _loglik(y, eta)
    ridge = RIDGE * np.eye(k)
    converged = False
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        p = expit(eta)
        w = p * expit(-eta)
        # y - p without cancellation when p rounds to 0 or 1
        resid = y * expit(-eta) - (1.0 - y) * p
        hessian = design.T @ (w[:, None] * design) + ridge
        step = np.linalg.solve(hessian, design.T @ resid)
        beta = beta + step
        eta = design @ beta + offset
        ll_new = _loglik(y, eta)
        change = abs(ll_new - ll) / max(abs(ll), 1e-300)
        ll = ll_new
        if change < REL_TOL:
            converged = True
            break
    return beta, converged, iterations, ll


def fit_design(design: np.ndarray, columns: List[str], y: np.ndarray, offset: Optional[np.ndarray] = None) -> LogisticModel:
    """Fits on a prepared design; aliased columns get a zero coefficient and a warning."""
    n, k = design.shape
    if n <= k:
        raise EstimationError(f"need more rows ({n}) than regressors ({k})")
    alias = _aliased(design)
    dropped = [columns[c] for c in np.flatnonzero(alias)]
    if dropped:
        logger.warning(f"Dropping aliased design column(s): {', '.join(dropped)}.")
    keep = ~alias
    beta_kept, converged, iterations, ll = irls(design[:, keep], y, offset)
    beta = np.zeros(k)
    beta[keep] = beta_kept
    separated = bool(not converged and np.any(np.abs(beta) > SEPARATION_COEF))
    if separated:
        logger.warning("Logistic fit did not converge and has coefficients beyond 15: probable separation.")
    elif not converged:
        logger.warning(f"Logistic fit did not converge in {MAX_ITER} iterations.")
    return LogisticModel(columns, beta, converged, iterations, ll, separated, dropped)


def fit_logistic(data: RawDataset, response: str, regressors: Iterable[str]) -> LogisticModel:
    """Main-effects logistic regression of `response` on `regressors` by IRLS."""
    y = data.column(response).astype(float)
    if np.any((y < 0.0) | (y > 1.0)):
        raise EstimationError(f"response '{response}' must lie in [0, 1]")
    design, columns = design_matrix(data, list(regressors))
    return fit_design(design, columns, y)


def propensity_scores(data: RawDataset, covariates: Iterable[str]) -> np.ndarray:
    """P(T = 1 | S); the treated share when S is empty. Continuous covariates enter undiscretized."""
    if data.treatment is None:
        raise EstimationError("no treatment column designated")
    covariates = list(covariates)
    t = data.column(data.treatment).astype(float)
    if not covariates:
        return np.full(data.n, float(np.mean(t)))
    return fit_logistic(data, data.treatment, covariates).predict(design_matrix(data, covariates)[0])


def _arms(data: RawDataset) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if data.treatment is None or data.outcome is None:
        raise EstimationError("treatment and outcome columns must be designated")
    t = data.column(data.treatment).astype(np.int64)
    y = data.column(data.outcome).astype(float)
    if t.sum() == 0 or t.sum() == t.shape[0]:
        raise EstimationError("degenerate arms: one treatment arm is empty")
    return t, y, np.arange(t.shape[0])


class _SortedArm:
    """One arm's scores in ascending order (stable in row index) with outcome prefix sums."""

    def __init__(self, scores: np.ndarray, y: np.ndarray, rows: np.ndarray):
        order = np.argsort(scores, kind="stable")
        self.scores = scores[order]
        self.y = y[order]
        self.rows = rows[order]
        self.size = self.scores.shape[0]
        self.csum = np.concatenate(([0.0], np.cumsum(self.y)))
        centred = self.y - self.y.mean()
        self.csum_c = np.concatenate(([0.0], np.cumsum(centred)))
        self.csq_c = np.concatenate(([0.0], np.cumsum(centred**2)))

    def run(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """[lo, hi) position ranges of entries equal to each value."""
        return np.searchsorted(self.scores, values, "left"), np.searchsorted(self.scores, values, "right")


def _nearest_runs(arm: _SortedArm, query: np.ndarray):
    """
    For each query score, the run(s) of equal arm scores at minimal distance: the left run
    [l_lo, l_hi) and right run [r_lo, r_hi), each empty when not at the minimal distance.
    """
    pos = np.searchsorted(arm.scores, query, "left")
    has_left = pos > 0
    has_right = pos < arm.size
    left_val = arm.scores[np.clip(pos - 1, 0, arm.size - 1)]
    right_val = arm.scores[np.clip(pos, 0, arm.size - 1)]
    d_left = np.where(has_left, query - left_val, np.inf)
    d_right = np.where(has_right, right_val - query, np.inf)
    dist = np.minimum(d_left, d_right)
    use_left = has_left & (d_left == dist)
    use_right = has_right & (d_right == dist)
    l_lo, l_hi = arm.run(left_val)
    r_lo, r_hi = arm.run(right_val)
    l_lo, l_hi = np.where(use_left, l_lo, 0), np.where(use_left, l_hi, 0)
    r_lo, r_hi = np.where(use_right, r_lo, 0), np.where(use_right, r_hi, 0)
    return dist, (l_lo, l_hi), (r_lo, r_hi)


def _match(arm: _SortedArm, query: np.ndarray, ties: str):
    """Imputed outcomes for the queries, plus per-unit usage weights over the arm's sorted positions."""
    dist, (l_lo, l_hi), (r_lo, r_hi) = _nearest_runs(arm, query)
    if ties == "lowest_index":
        # the first entry of a run has the lowest row index; pick the better of the two runs
        left_row = np.where(l_hi > l_lo, arm.rows[np.clip(l_lo, 0, arm.size - 1)], np.iinfo(np.int64).max)
        right_row = np.where(r_hi > r_lo, arm.rows[np.clip(r_lo, 0, arm.size - 1)], np.iinfo(np.int64).max)
        pick = np.where(left_row <= right_row, l_lo, r_lo)
        l_lo, l_hi = pick, pick + 1
        r_lo = r_hi = np.zeros_like(pick)
    count = (l_hi - l_lo) + (r_hi - r_lo)
    total = (arm.csum[l_hi] - arm.csum[l_lo]) + (arm.csum[r_hi] - arm.csum[r_lo])
    imputed = total / count
    share = 1.0 / count
    delta = np.zeros(arm.size + 1)
    np.add.at(delta, l_lo, share)
    np.add.at(delta, l_hi, -share)
    np.add.at(delta, r_lo, share)
    np.add.at(delta, r_hi, -share)
    usage = np.cumsum(delta)[:-1]
    return imputed, dist, usage


def _within_arm_variance(arm: _SortedArm) -> np.ndarray:
    """
    Conditional outcome variance of each unit from its nearest same-arm neighbours (ties
    included): sample variance of the unit together with those neighbours.
    """
    if arm.size < 2:
        return np.zeros(arm.size)
    k = np.arange(arm.size)
    own_lo, own_hi = arm.run(arm.scores)
    has_twin = (own_hi - own_lo) > 1
    left_val = arm.scores[np.clip(k - 1, 0, arm.size - 1)]
    right_val = arm.scores[np.clip(k + 1, 0, arm.size - 1)]
    d_left = np.where(k > 0, arm.scores - left_val, np.inf)
    d_right = np.where(k < arm.size - 1, right_val - arm.scores, np.inf)
    dist = np.minimum(d_left, d_right)
    l_lo, l_hi = arm.run(left_val)
    r_lo, r_hi = arm.run(right_val)
    take_left = ~has_twin & (d_left == dist)
    take_right = ~has_twin & (d_right == dist)

    def window(lo, hi, mask):
        lo, hi = np.where(mask, lo, 0), np.where(mask, hi, 0)
        return hi - lo, arm.csum_c[hi] - arm.csum_c[lo], arm.csq_c[hi] - arm.csq_c[lo]

    c_own, s_own, q_own = window(own_lo, own_hi, has_twin)
    c_l, s_l, q_l = window(l_lo, l_hi, take_left)
    c_r, s_r, q_r = window(r_lo, r_hi, take_right)
    centred_self = arm.y - arm.y.mean()
    self_part = ~has_twin
    count = c_own + c_l + c_r + self_part
    total = s_own + s_l + s_r + np.where(self_part, centred_self, 0.0)
    squares = q_own + q_l + q_r + np.where(self_part, centred_self**2, 0.0)
    return np.maximum(squares - total**2 / count, 0.0) / (count - 1)


def psm_ace(
    data: RawDataset,
    covariates: Iterable[str],
    cfg: PsmConfig = PsmConfig(),
    scores: Optional[np.ndarray] = None,
) -> AceEstimate:
    """
    Each unit is matched with replacement to its nearest opposite-arm unit on the
    propensity score; equidistant units are averaged (or the lowest row index is used).
    The standard error is the matching-with-replacement variance counting how often each
    unit serves as a match.
    """
    covariates = list(covariates)
    t, y, rows = _arms(data)
    scores = propensity_scores(data, covariates) if scores is None else np.asarray(scores, dtype=float)
    treated, control = t == 1, t == 0
    arm1 = _SortedArm(scores[treated], y[treated], rows[treated])
    arm0 = _SortedArm(scores[control], y[control], rows[control])

    imputed0, dist1, usage0 = _match(arm0, scores[treated], cfg.ties)
    imputed1, dist0, usage1 = _match(arm1, scores[control], cfg.ties)

    tau = np.empty(t.shape[0])
    tau[treated] = y[treated] - imputed0
    tau[control] = imputed1 - y[control]
    matched = np.ones(t.shape[0], dtype=bool)
    warnings: List[str] = []
    if cfg.caliper is not None:
        limit = cfg.caliper * float(np.std(scores, ddof=1))
        matched[treated] = dist1 <= limit
        matched[control] = dist0 <= limit
        if not matched.any():
            raise EstimationError("no unit has a match within the caliper")
        if not matched.all():
            warnings.append(f"caliper dropped {int((~matched).sum())} unit(s)")
            logger.warning(f"Caliper left {int((~matched).sum())} unit(s) unmatched.")
            # usage counts only from units that stay in the estimate
            usage0 = _match(arm0, scores[treated & matched], cfg.ties)[2]
            usage1 = _match(arm1, scores[control & matched], cfg.ties)[2]

    beta = float(np.mean(tau[matched]))
    usage = np.empty(t.shape[0])
    usage[arm1.rows] = usage1
    usage[arm0.rows] = usage0
    sigma2 = np.empty(t.shape[0])
    sigma2[arm1.rows] = _within_arm_variance(arm1)
    sigma2[arm0.rows] = _within_arm_variance(arm0)
    n_used = int(matched.sum())
    # unmatched units neither contribute a tau nor serve as matches for kept units
    contrib = np.where(matched, (tau - beta) ** 2, 0.0) + (usage**2 + usage) * sigma2
    var = float(np.sum(contrib)) / n_used**2
    return AceEstimate.normal(
        "psm", beta, float(np.sqrt(var)), n_used, cardinality=len(covariates), warnings=tuple(warnings)
    )


@dataclass(frozen=True)
class TargetedFit:
    """Intermediate quantities of a targeted fit on the outcome's [0, 1] scale."""
    q1: np.ndarray
    q0: np.ndarray
    qa: np.ndarray
    clever: np.ndarray
    y_scaled: np.ndarray
    g: np.ndarray
    epsilon: float
    score: float
    psi: float
    influence: np.ndarray
    lower: float
    span: float


def _fluctuate(y: np.ndarray, base: np.ndarray, clever: np.ndarray, cfg: TmleConfig) -> Tuple[float, float]:
    """
    Solves sum H * (y - expit(base + eps * H)) = 0 for eps by damped Newton steps on the
    quasi-binomial log-likelihood. Returns (eps, final score).
    """
    n = y.shape[0]
    eps = 0.0

    def ll(e: float) -> float:
        return _loglik(y, base + e * clever)

    def score(e: float) -> float:
        eta = base + e * clever
        return float(np.dot(clever, y * expit(-eta) - (1.0 - y) * expit(eta)))

    current = score(eps)
    for _ in range(cfg.max_newton_steps):
        if abs(current) <= cfg.tolerance * n:
            break
        eta = base + eps * clever
        info = float(np.dot(clever**2, expit(eta) * expit(-eta)))
        if info <= 0.0:
            break
        step = current / info
        before = ll(eps)
        for _ in range(60):
            if ll(eps + step) >= before:
                break
            step /= 2.0
        eps += step
        current = score(eps)
    return eps, current


def targeted_fit(data: RawDataset, covariates: Iterable[str], cfg: TmleConfig = TmleConfig()) -> TargetedFit:
    """Initial outcome and propensity models followed by one logistic fluctuation."""
    covariates = list(covariates)
    t, y, _ = _arms(data)
    lower, upper = float(y.min()), float(y.max())
    binary = bool(np.all((y == 0.0) | (y == 1.0)))
    if binary:
        lower, span = 0.0, 1.0
    else:
        span = upper - lower
    y_scaled = (y - lower) / span if span > 0 else np.zeros_like(y)

    design, columns = design_matrix(data, [data.treatment] + covariates)
    model = fit_design(design, columns, y_scaled)
    t_col = columns.index(data.treatment)
    d1, d0 = design.copy(), design.copy()
    d1[:, t_col], d0[:, t_col] = 1.0, 0.0

    def bounded(matrix: np.ndarray) -> np.ndarray:
        return np.clip(expit(model.linear_predictor(matrix)), Q_BOUND, 1.0 - Q_BOUND)

    q1, q0 = bounded(d1), bounded(d0)
    qa = np.where(t == 1, q1, q0)
    g = np.clip(propensity_scores(data, covariates), cfg.truncation_low, cfg.truncation_high)
    h1, h0 = 1.0 / g, -1.0 / (1.0 - g)
    clever = np.where(t == 1, h1, h0)

    eps, score = _fluctuate(y_scaled, logit(qa), clever, cfg)
    q1_star = expit(logit(q1) + eps * h1)
    q0_star = expit(logit(q0) + eps * h0)
    qa_star = np.where(t == 1, q1_star, q0_star)
    psi = float(np.mean(q1_star - q0_star))
    influence = clever * (y_scaled - qa_star) + q1_star - q0_star - psi
    return TargetedFit(q1_star, q0_star, qa_star, clever, y_scaled, g, eps, score, psi, influence, lower, span)


def tmle_ace(data: RawDataset, covariates: Iterable[str], cfg: TmleConfig = TmleConfig()) -> AceEstimate:
    """
    TMLE with logistic learners. Continuous outcomes are scaled to [0, 1] by their observed
    range and the estimate is mapped back; binary outcomes give the risk difference. The
    standard error comes from the variance of the efficient influence curve.
    """
    covariates = list(covariates)
    t, y, _ = _arms(data)
    if float(y.max()) == float(y.min()):
        return AceEstimate.normal("tmle", 0.0, 0.0, int(t.shape[0]), cardinality=len(covariates))
    fit = targeted_fit(data, covariates, cfg)
    n = fit.influence.shape[0]
    beta = fit.psi * fit.span
    se = float(np.sqrt(np.var(fit.influence) / n)) * fit.span
    warnings: Tuple[str, ...] = ()
    if abs(fit.score) > 1e-6 * n:
        warnings = (f"fluctuation score {fit.score:.3g} not solved",)
        logger.warning(f"TMLE fluctuation left a score of {fit.score:.3g}.")
    return AceEstimate.normal("tmle", beta, se, n, cardinality=len(covariates), warnings=warnings)
