# confsel/schemas/results.py
# Result objects returned by the services and persisted by the harness and the CLI.

import re
from typing import Dict, FrozenSet, Iterable, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

SET_NAMES: Tuple[str, ...] = ("xt", "qt", "xy", "zy", "xty", "wy")
ARM_COMPONENTS: Tuple[str, ...] = ("qt0", "qt1", "xy0", "xy1", "zy0", "zy1", "wy0", "wy1")

_NUMBERED = re.compile(r"^(.*?)(\d+)$")


def natural_key(name: str) -> Tuple[str, int, str]:
    """Sort key putting X2 before X10."""
    match = _NUMBERED.match(name)
    if match:
        return match.group(1), int(match.group(2)), name
    return name, -1, name


def format_set(names: Iterable[str]) -> str:
    """Comma-separated covariate names in natural order."""
    return ",".join(sorted(names, key=natural_key))


def parse_set(text: str) -> FrozenSet[str]:
    """Inverse of format_set; the empty string is the empty set."""
    return frozenset(part.strip() for part in text.split(",") if part.strip())


class CiTestResult(BaseModel):
    """Outcome of one mutual-information conditional-independence test."""
    model_config = ConfigDict(frozen=True)

    mi_hat: float = Field(..., ge=0.0)
    g2: float = Field(..., ge=0.0)
    df: int = Field(..., ge=0)
    p_value: float = Field(..., ge=0.0, le=1.0)
    independent: bool
    skipped: bool = Field(False, description="True when the sample-size guard declined to test.")


class TargetSubsets(BaseModel):
    """The six estimated covariate sets plus their per-arm components."""
    model_config = ConfigDict(frozen=True)

    treatment: str = "T"
    outcome: str = "Y"
    xt: FrozenSet[str] = frozenset()
    qt: FrozenSet[str] = frozenset()
    xy: FrozenSet[str] = frozenset()
    zy: FrozenSet[str] = frozenset()
    xty: FrozenSet[str] = frozenset()
    wy: FrozenSet[str] = frozenset()
    qt0: FrozenSet[str] = frozenset()
    qt1: FrozenSet[str] = frozenset()
    xy0: FrozenSet[str] = frozenset()
    xy1: FrozenSet[str] = frozenset()
    zy0: FrozenSet[str] = frozenset()
    zy1: FrozenSet[str] = frozenset()
    wy0: FrozenSet[str] = frozenset()
    wy1: FrozenSet[str] = frozenset()

    @model_validator(mode="after")
    def _check_relations(self) -> "TargetSubsets":
        if not self.qt <= self.xt:
            raise ValueError("qt must be a subset of xt")
        if not self.zy <= self.xy:
            raise ValueError("zy must be a subset of xy")
        if self.xty != self.xt | self.xy:
            raise ValueError("xty must equal xt | xy")
        if not self.wy <= self.xty:
            raise ValueError("wy must be a subset of xty")
        roles = {self.treatment, self.outcome}
        for name in SET_NAMES + ARM_COMPONENTS:
            if roles & getattr(self, name):
                raise ValueError(f"set '{name}' contains the treatment or outcome column")
        return self

    def sets(self, include_arms: bool = False) -> Dict[str, FrozenSet[str]]:
        names = SET_NAMES + (ARM_COMPONENTS if include_arms else ())
        return {name: getattr(self, name) for name in names}

    def to_text(self, include_arms: bool = False) -> str:
        """Flat 'name=X1,X2' lines, the machine-readable form written by the CLI."""
        names = SET_NAMES + (ARM_COMPONENTS if include_arms else ())
        return "".join(f"{name}={format_set(getattr(self, name))}\n" for name in names)


class AceEstimate(BaseModel):
    """A point estimate of the average causal effect with its normal-theory 95% interval."""
    model_config = ConfigDict(frozen=True)

    estimator: Literal["psm", "tmle"]
    beta_hat: float
    se: float = Field(..., ge=0.0)
    ci_low: float
    ci_high: float
    n_used: int = Field(..., ge=0)
    set_name: Optional[str] = None
    cardinality: int = Field(0, ge=0)
    warnings: Tuple[str, ...] = ()

    @classmethod
    def normal(cls, estimator: str, beta_hat: float, se: float, n_used: int, **extra) -> "AceEstimate":
        half = 1.96 * se
        return cls(
            estimator=estimator,
            beta_hat=beta_hat,
            se=se,
            ci_low=beta_hat - half,
            ci_high=beta_hat + half,
            n_used=n_used,
            **extra,
        )

    def to_row(self) -> Dict[str, object]:
        return {
            "estimator": self.estimator,
            "set": self.set_name or "",
            "cardinality": self.cardinality,
            "beta_hat": self.beta_hat,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


class SelectionRecord(BaseModel):
    """One estimated set of one replication with its three success verdicts."""
    method: str
    set_name: str
    selected: FrozenSet[str]
    unconf: bool
    superset: bool
    equal: bool


class EstimateRecord(BaseModel):
    """One estimator run on one covariate set; failed runs carry no numbers."""
    method: str
    set_name: str
    estimator: str
    beta_hat: Optional[float] = None
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    failed: bool = False
    error: Optional[str] = None


class ReplicationRecord(BaseModel):
    """Everything computed in a single replication of one grid cell."""
    setting: int
    n: int
    outcome: str
    replication: int
    seed: int
    selections: List[SelectionRecord] = []
    estimates: List[EstimateRecord] = []
    wall_time: float = Field(0.0, ge=0.0)

    def to_rows(self) -> List[Dict[str, object]]:
        """Flattens to one row per (method, set) with the estimator columns side by side."""
        keyed: Dict[Tuple[str, str], Dict[str, object]] = {}
        base = {
            "setting": self.setting,
            "n": self.n,
            "outcome": self.outcome,
            "replication": self.replication,
            "seed": self.seed,
        }
        for sel in self.selections:
            keyed[(sel.method, sel.set_name)] = {
                **base,
                "method": sel.method,
                "set": sel.set_name,
                "selected": format_set(sel.selected),
                "cardinality": len(sel.selected),
                "unconf": sel.unconf,
                "superset": sel.superset,
                "equal": sel.equal,
            }
        for est in self.estimates:
            row = keyed.setdefault((est.method, est.set_name), {**base, "method": est.method, "set": est.set_name})
            prefix = est.estimator
            row[f"{prefix}_beta_hat"] = est.beta_hat
            row[f"{prefix}_se"] = est.se
            row[f"{prefix}_ci_low"] = est.ci_low
            row[f"{prefix}_ci_high"] = est.ci_high
            row[f"{prefix}_failed"] = est.failed
        return list(keyed.values())
