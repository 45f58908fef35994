# confsel/services/dataset.py
# The module holds the tabular containers used everywhere else: RawDataset (mixed
# continuous/factor columns, CSV ingestion) and DiscreteDataset (factor codes only),
# together with quantile discretization and contingency-table construction.

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from confsel.core.errors import DataFormatError
from confsel.utils.logger import logger

AUDIT_PREFIX = "audit_"
CONTINUOUS = "continuous"
FACTOR = "factor"


def write_header(handle, header: Mapping[str, object]) -> None:
    """Writes '# key=value' provenance lines in the order given."""
    for key, value in header.items():
        handle.write(f"# {key}={value}\n")


def read_header(path: Path) -> Dict[str, str]:
    """Collects the '# key=value' lines at the top of a file written by this package."""
    header: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                header[key.strip()] = value.strip()
    return header


class RawDataset:
    """
    Rows x named columns before discretization. Each column is either 'continuous'
    (finite reals) or 'factor' (nonnegative integer codes). Columns whose name starts
    with 'audit_' travel with the data but are never offered as covariates.
    """

    def __init__(
        self,
        frame: pd.DataFrame,
        kinds: Optional[Mapping[str, str]] = None,
        treatment: Optional[str] = "T",
        outcome: Optional[str] = "Y",
    ):
        if frame.shape[0] == 0 or frame.shape[1] == 0:
            raise DataFormatError("dataset is empty")
        if frame.columns.duplicated().any():
            raise DataFormatError("duplicate column names")
        if frame.isna().to_numpy().any():
            bad = [str(c) for c in frame.columns[frame.isna().any()]]
            raise DataFormatError(
                f"missing values in column(s) {', '.join(bad)}; filter to complete cases before ingestion"
            )

        self.frame = frame.reset_index(drop=True)
        self.treatment = treatment if treatment in frame.columns else None
        self.outcome = outcome if outcome in frame.columns else None
        if treatment is not None and self.treatment is None:
            raise DataFormatError(f"treatment column '{treatment}' not found")
        if outcome is not None and self.outcome is None:
            raise DataFormatError(f"outcome column '{outcome}' not found")

        inferred = {
            str(c): FACTOR if pd.api.types.is_integer_dtype(frame[c]) or pd.api.types.is_bool_dtype(frame[c]) else CONTINUOUS
            for c in frame.columns
        }
        if kinds is not None:
            inferred.update({k: v for k, v in kinds.items() if k in inferred})
        if self.treatment is not None:
            inferred[self.treatment] = FACTOR
        self.kinds: Dict[str, str] = inferred
        self._validate()

    def _validate(self):
        for name, kind in self.kinds.items():
            values = self.frame[name].to_numpy()
            if not pd.api.types.is_numeric_dtype(self.frame[name]):
                raise DataFormatError(f"column '{name}' is not numeric; categorical labels must be pre-coded")
            if kind == FACTOR:
                if np.any(values < 0) or np.any(np.asarray(values, dtype=float) % 1 != 0):
                    raise DataFormatError(f"factor column '{name}' must hold nonnegative integers")
            elif kind == CONTINUOUS:
                if not np.all(np.isfinite(values)):
                    raise DataFormatError(f"continuous column '{name}' contains non-finite values")
            else:
                raise DataFormatError(f"unknown column kind '{kind}' for '{name}'")
        if self.treatment is not None:
            levels = set(np.unique(self.frame[self.treatment].to_numpy()).tolist())
            if not levels <= {0, 1}:
                raise DataFormatError(f"treatment column '{self.treatment}' must be coded 0/1, found {sorted(levels)}")

    @property
    def n(self) -> int:
        return int(self.frame.shape[0])

    @property
    def names(self) -> List[str]:
        return [str(c) for c in self.frame.columns]

    @property
    def analysis_names(self) -> List[str]:
        """All non-audit columns, in file order."""
        return [c for c in self.names if not c.startswith(AUDIT_PREFIX)]

    @property
    def covariates(self) -> List[str]:
        roles = {self.treatment, self.outcome}
        return [c for c in self.analysis_names if c not in roles]

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()

    def take_rows(self, mask: np.ndarray) -> "RawDataset":
        return RawDataset(self.frame.loc[np.asarray(mask)], self.kinds, self.treatment, self.outcome)

    @classmethod
    def from_csv(
        cls,
        path: Path,
        factor_cols: Optional[Iterable[str]] = None,
        treatment: Optional[str] = "T",
        outcome: Optional[str] = "Y",
    ) -> "RawDataset":
        """
        Reads a CSV with a header row. Leading '#' lines are provenance and are skipped.
        Without factor_cols, every all-integer column is a factor.
        """
        try:
            frame = pd.read_csv(path, comment="#")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataFormatError(f"cannot read '{path}': {e}") from e
        kinds = None
        if factor_cols is not None:
            factors = set(factor_cols)
            unknown = factors - set(map(str, frame.columns))
            if unknown:
                raise DataFormatError(f"--factor-cols names unknown column(s): {', '.join(sorted(unknown))}")
            kinds = {str(c): FACTOR if str(c) in factors else CONTINUOUS for c in frame.columns}
            for name in factors:
                if pd.api.types.is_float_dtype(frame[name]):
                    values = frame[name].to_numpy()
                    if np.all(np.isfinite(values)) and np.all(values % 1 == 0):
                        frame[name] = values.astype(np.int64)
        logger.info(f"Read {frame.shape[0]} rows x {frame.shape[1]} columns from '{path}'.")
        return cls(frame, kinds, treatment=treatment, outcome=outcome)

    def to_csv(self, path: Path, header: Optional[Mapping[str, object]] = None) -> None:
        """Writes the '# key=value' header followed by the table; floats keep full precision."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            write_header(handle, header or {})
            self.frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")


class DiscreteDataset:
    """
    Column-oriented factor-coded table. codes[v] holds the n codes of variable v, each in
    [0, levels[v]). Variables are addressed by integer index; names map back to columns.
    """

    def __init__(
        self,
        names: Sequence[str],
        codes: np.ndarray,
        levels: Sequence[int],
        treatment: Optional[str] = None,
        outcome: Optional[str] = None,
        flags: Optional[Mapping[str, str]] = None,
    ):
        codes = np.ascontiguousarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[0] != len(names):
            raise ValueError("codes must have shape (number of variables, n)")
        self.names: List[str] = list(names)
        self.codes = codes
        self.levels = np.asarray(levels, dtype=np.int64)
        if np.any(self.levels < 1):
            raise ValueError("every variable needs at least one level")
        if codes.size and (np.any(codes < 0) or np.any(codes.max(axis=1) >= self.levels)):
            raise ValueError("codes must lie in [0, levels)")
        self._index = {name: k for k, name in enumerate(self.names)}
        self.treatment = treatment
        self.outcome = outcome
        self.flags: Dict[str, str] = dict(flags or {})

    @property
    def n(self) -> int:
        return int(self.codes.shape[1])

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def constant(self) -> np.ndarray:
        """Boolean mask of variables taking a single value in this sample."""
        if self.n == 0:
            return np.ones(self.p, dtype=bool)
        return np.ptp(self.codes, axis=1) == 0

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown variable '{name}'") from None

    def indices(self, names: Iterable[str]) -> List[int]:
        return [self.index(name) for name in names]

    def covariate_indices(self) -> List[int]:
        roles = {self.treatment, self.outcome}
        return [k for k, name in enumerate(self.names) if name not in roles]

    def take_rows(self, mask: np.ndarray) -> "DiscreteDataset":
        """Row subset sharing the level counts (and so the bin boundaries) of the full sample."""
        return DiscreteDataset(
            self.names, self.codes[:, np.asarray(mask)], self.levels, self.treatment, self.outcome, self.flags
        )


def _quantile_codes(values: np.ndarray, bins: int) -> Tuple[np.ndarray, int]:
    """
    Boundaries are the order statistics at ceil(k*n/bins), k = 1..bins-1; a value equal
    to a boundary falls in the lower bin. Empty bins are squeezed out.
    """
    n = values.shape[0]
    ordered = np.sort(values)
    ranks = np.array([-(-k * n // bins) for k in range(1, bins)], dtype=np.int64)
    boundaries = np.unique(ordered[ranks - 1])
    raw = np.searchsorted(boundaries, values, side="left")
    observed, codes = np.unique(raw, return_inverse=True)
    return codes.astype(np.int64), int(observed.shape[0])


def discretize(raw: RawDataset, bins: int) -> DiscreteDataset:
    """
    Maps each continuous column to quantile-interval indices 0..bins-1; factor columns
    pass through unchanged. Audit columns are dropped.
    """
    if bins < 2:
        raise ValueError("bins must be at least 2")
    names = raw.analysis_names
    codes = np.empty((len(names), raw.n), dtype=np.int64)
    levels: List[int] = []
    flags: Dict[str, str] = {}
    for k, name in enumerate(names):
        values = raw.column(name)
        if raw.kinds[name] == FACTOR:
            column = values.astype(np.int64)
            n_levels = int(column.max()) + 1
        else:
            column, n_levels = _quantile_codes(values.astype(float), bins)
            if n_levels < bins:
                flags[name] = "collapsed"
                logger.warning(f"Column '{name}' has too few distinct values for {bins} bins; using {n_levels}.")
        if np.ptp(column) == 0:
            flags[name] = "constant"
            logger.warning(f"Column '{name}' is constant.")
        codes[k] = column
        levels.append(n_levels)
    return DiscreteDataset(names, codes, levels, raw.treatment, raw.outcome, flags)


@dataclass(frozen=True)
class ContingencyTable:
    """
    Counts of (i, j) within each observed configuration of K. cells[c, a, b] is the
    number of rows in stratum c with i = a and j = b. Strata with zero count are absent.
    """
    i: int
    j: int
    cond: Tuple[int, ...]
    cells: np.ndarray

    @property
    def n(self) -> int:
        return int(self.cells.sum())

    @property
    def n_k(self) -> np.ndarray:
        return self.cells.sum(axis=(1, 2))

    @property
    def n_ik(self) -> np.ndarray:
        return self.cells.sum(axis=2)

    @property
    def n_jk(self) -> np.ndarray:
        return self.cells.sum(axis=1)


def stratum_ids(data: DiscreteDataset, cond: Sequence[int]) -> Tuple[np.ndarray, int]:
    """
    Dense ids 0..C'-1 for the observed joint configurations of the variables in cond,
    ordered by their mixed-radix code. An empty cond gives one stratum.
    """
    n = data.n
    if not cond:
        return np.zeros(n, dtype=np.int64), (1 if n else 0)
    key = np.zeros(n, dtype=np.int64)
    radix = 1
    for v in cond:
        lv = int(data.levels[v])
        if radix * lv > max(n, 1) * 64:
            _, key = np.unique(key, return_inverse=True)
            key = key.astype(np.int64)
            radix = int(key.max()) + 1 if n else 1
        key = key * lv + data.codes[v]
        radix *= lv
    present = np.bincount(key, minlength=radix) > 0
    lookup = np.cumsum(present) - 1
    return lookup[key], int(present.sum())


def contingency(data: DiscreteDataset, i: int, j: int, cond: Sequence[int] = ()) -> ContingencyTable:
    cond = tuple(int(k) for k in cond)
    if i == j:
        raise ValueError("contingency requires two distinct variables")
    if i in cond or j in cond:
        raise ValueError("the tested variables must not appear in the conditioning set")
    if len(set(cond)) != len(cond):
        raise ValueError("conditioning set has repeated variables")
    a_levels = int(data.levels[i])
    b_levels = int(data.levels[j])
    strata, n_strata = stratum_ids(data, cond)
    flat = (strata * a_levels + data.codes[i]) * b_levels + data.codes[j]
    counts = np.bincount(flat, minlength=n_strata * a_levels * b_levels)
    return ContingencyTable(i, j, cond, counts.reshape(n_strata, a_levels, b_levels))
