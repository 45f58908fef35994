# confsel/services/citest.py
# The module implements the mutual-information (G-squared) conditional-independence test
# on discrete data, and the CiOracle interface shared with the d-separation oracle so
# the structure learners can run against either.

from typing import Dict, Iterable, Protocol, Sequence, Tuple

import numpy as np
from scipy import special, stats

from confsel.schemas.results import CiTestResult
from confsel.services.dataset import ContingencyTable, DiscreteDataset, contingency

# Minimum rows per degree of freedom before a test is trusted.
ROWS_PER_DF = 5


class CiOracle(Protocol):
    """Answers 'is i independent of j given cond?' over integer vertex indices."""

    def query(self, i: int, j: int, cond: Sequence[int]) -> bool:
        ...

    def association(self, i: int, j: int, cond: Sequence[int]) -> float:
        """Nonnegative strength of dependence, 0 when independent; used only for ordering."""
        ...


def mi_statistic(table: ContingencyTable) -> Tuple[float, int]:
    """
    Returns (mi_hat, df). mi_hat is the plug-in conditional mutual information in nats,
    summed over nonzero cells only. df adds (A_c - 1)(B_c - 1) over observed strata,
    with A_c, B_c the levels of i and j actually seen in stratum c.
    """
    cells = table.cells
    n = int(cells.sum())
    if n == 0:
        return 0.0, 0

    n_k = cells.sum(axis=(1, 2))
    n_ik = cells.sum(axis=2)
    n_jk = cells.sum(axis=1)

    c_idx, a_idx, b_idx = np.nonzero(cells)
    observed = cells[c_idx, a_idx, b_idx].astype(float)
    # one quotient of exact integer products, so a product-form table gives log(1) == 0
    ratio = (observed * n_k[c_idx]) / (n_ik[c_idx, a_idx].astype(float) * n_jk[c_idx, b_idx])
    mi_hat = max(float(np.dot(observed, np.log(ratio))) / n, 0.0)

    a_seen = np.count_nonzero(n_ik, axis=1)
    b_seen = np.count_nonzero(n_jk, axis=1)
    df = int(np.sum(np.maximum(a_seen - 1, 0) * np.maximum(b_seen - 1, 0)))
    return mi_hat, df


def chi2_sf(x: float, df: int) -> float:
    """Upper tail P(chi2_df >= x) through the regularized upper incomplete gamma function."""
    if x < 0:
        raise ValueError("chi-square statistic must be nonnegative")
    if df <= 0 or x == 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def ci_test(
    data: DiscreteDataset,
    i: int,
    j: int,
    cond: Sequence[int] = (),
    alpha: float = 0.05,
    sample_size_guard: bool = True,
) -> CiTestResult:
    """
    G-test of i _||_ j | cond. With the guard on, a test with n < ROWS_PER_DF * df is
    skipped and reported independent. The threshold counts free cells (the adjusted df),
    not every cell of the table: with all cells counted, most four-variable tests at
    n ~ 1000 per arm would be skipped.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    table = contingency(data, i, j, cond)
    mi_hat, df = mi_statistic(table)
    n = table.n
    g2 = 2.0 * n * mi_hat
    if df == 0:
        return CiTestResult(mi_hat=mi_hat, g2=g2, df=0, p_value=1.0, independent=True)
    p_value = min(max(chi2_sf(g2, df), 0.0), 1.0)
    if sample_size_guard and n < ROWS_PER_DF * df:
        return CiTestResult(mi_hat=mi_hat, g2=g2, df=df, p_value=p_value, independent=True, skipped=True)
    return CiTestResult(mi_hat=mi_hat, g2=g2, df=df, p_value=p_value, independent=p_value > alpha)


class EmpiricalOracle:
    """
    CiOracle backed by ci_test on a DiscreteDataset. Answers are memoised per unordered
    pair and sorted conditioning set, since the test is symmetric in i and j.
    """

    def __init__(self, data: DiscreteDataset, alpha: float = 0.05, sample_size_guard: bool = True):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.data = data
        self.alpha = alpha
        self.sample_size_guard = sample_size_guard
        self._memo: Dict[Tuple[int, int, Tuple[int, ...]], CiTestResult] = {}
        self.n_tests = 0

    def test(self, i: int, j: int, cond: Iterable[int]) -> CiTestResult:
        key = (min(i, j), max(i, j), tuple(sorted(cond)))
        result = self._memo.get(key)
        if result is None:
            result = ci_test(self.data, key[0], key[1], key[2], self.alpha, self.sample_size_guard)
            self._memo[key] = result
            self.n_tests += 1
        return result

    def query(self, i: int, j: int, cond: Sequence[int]) -> bool:
        return self.test(i, j, cond).independent

    def association(self, i: int, j: int, cond: Sequence[int]) -> float:
        result = self.test(i, j, cond)
        if result.independent:
            return 0.0
        log_p = stats.chi2.logsf(result.g2, result.df)
        if np.isfinite(log_p):
            return float(-log_p)
        # p underflowed: Wilson-Hilferty normal approximation of the chi-square tail
        k = float(result.df)
        z = ((result.g2 / k) ** (1.0 / 3.0) - (1.0 - 2.0 / (9.0 * k))) / np.sqrt(2.0 / (9.0 * k))
        return float(-special.log_ndtr(-z))


class ArmConditionedOracle:
    """Adds a fixed set of vertices to every conditioning set of the wrapped oracle."""

    def __init__(self, oracle: CiOracle, extra: Iterable[int]):
        self.oracle = oracle
        self.extra = tuple(extra)

    def _cond(self, i: int, j: int, cond: Sequence[int]) -> Tuple[int, ...]:
        return tuple(dict.fromkeys(tuple(cond) + tuple(v for v in self.extra if v not in (i, j))))

    def query(self, i: int, j: int, cond: Sequence[int]) -> bool:
        return self.oracle.query(i, j, self._cond(i, j, cond))

    def association(self, i: int, j: int, cond: Sequence[int]) -> float:
        return self.oracle.association(i, j, self._cond(i, j, cond))
