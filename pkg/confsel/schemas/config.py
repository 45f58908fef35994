# confsel/schemas/config.py
# The module defines the validated configuration objects handed to the learning,
# simulation and estimation services. Each one can be derived from the global Settings.

from typing import FrozenSet, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from confsel.core.settings import Settings, settings

Method = Literal["mmpc", "mmhc"]
Estimator = Literal["psm", "tmle"]
OutcomeModel = Literal["linear", "binary", "nonlinear"]
ScoreKind = Literal["aic", "bic", "loglik"]


class MmpcConfig(BaseModel):
    """Parameters of the constraint-based neighbour search."""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.05, gt=0.0, lt=1.0, description="Significance level of each CI test.")
    max_cond_size: Optional[int] = Field(
        3, ge=0, description="Cap on conditioning-set size in the grow and shrink phases; None is uncapped."
    )
    variable_order: Literal["index", "max_min"] = "max_min"
    sample_size_guard: bool = Field(True, description="Treat a test as independent when n < 5 * df.")

    @classmethod
    def from_settings(cls, cfg: Settings = settings) -> "MmpcConfig":
        return cls(
            alpha=cfg.ALPHA,
            max_cond_size=cfg.MAX_COND_SIZE,
            variable_order=cfg.VARIABLE_ORDER,
            sample_size_guard=cfg.SAMPLE_SIZE_GUARD,
        )


class HillClimbConfig(BaseModel):
    """Parameters of the skeleton-constrained greedy DAG search."""
    model_config = ConfigDict(frozen=True)

    score: ScoreKind = "aic"
    max_iter: int = Field(10_000, ge=1)
    forbidden_children: FrozenSet[int] = Field(
        frozenset(), description="Vertices that may only be edge destinations."
    )

    @classmethod
    def from_settings(cls, cfg: Settings = settings) -> "HillClimbConfig":
        return cls(score=cfg.SCORE, max_iter=cfg.HC_MAX_ITER)


class SelectionConfig(BaseModel):
    """Everything the target-subset pipeline needs besides the data."""
    model_config = ConfigDict(frozen=True)

    method: Method = "mmpc"
    bins: int = Field(3, ge=2)
    mmpc: MmpcConfig = MmpcConfig()
    hill_climb: HillClimbConfig = HillClimbConfig()

    @classmethod
    def from_settings(cls, method: Method = "mmpc", cfg: Settings = settings) -> "SelectionConfig":
        return cls(
            method=method,
            bins=cfg.BINS,
            mmpc=MmpcConfig.from_settings(cfg),
            hill_climb=HillClimbConfig.from_settings(cfg),
        )


class SimConfig(BaseModel):
    """One simulated dataset: data-generating setting, size, outcome family and seed."""
    model_config = ConfigDict(frozen=True)

    setting: Literal[1, 2] = 1
    n: int = Field(..., ge=1)
    outcome: OutcomeModel = "linear"
    seed: int = Field(0, ge=0, lt=2**64)
    p_total: int = Field(100, ge=10, description="Number of covariates X1..Xp.")
    emit_potential_outcomes: bool = True


class PsmConfig(BaseModel):
    """Nearest-neighbour propensity-score matching options."""
    model_config = ConfigDict(frozen=True)

    caliper: Optional[float] = Field(None, gt=0.0, description="Maximum distance in propensity-score SDs.")
    ties: Literal["average", "lowest_index"] = "average"

    @classmethod
    def from_settings(cls, cfg: Settings = settings) -> "PsmConfig":
        return cls(caliper=cfg.CALIPER, ties=cfg.MATCH_TIES)


class TmleConfig(BaseModel):
    """Targeted estimation options; the propensity is truncated to [truncation_low, truncation_high]."""
    model_config = ConfigDict(frozen=True)

    truncation_low: float = Field(0.025, gt=0.0, lt=0.5)
    truncation_high: float = Field(0.975, gt=0.5, lt=1.0)
    max_newton_steps: int = Field(50, ge=1)
    tolerance: float = Field(1e-10, gt=0.0)

    @classmethod
    def from_settings(cls, cfg: Settings = settings) -> "TmleConfig":
        return cls(truncation_low=cfg.TRUNCATION_LOW, truncation_high=cfg.TRUNCATION_HIGH)


class GridSpec(BaseModel):
    """The cells of a simulation study. Every replication runs each method and estimator on one shared draw."""
    model_config = ConfigDict(frozen=True)

    data_settings: List[Literal[1, 2]] = [1]
    sizes: List[int] = [2000]
    outcomes: List[OutcomeModel] = ["linear"]
    methods: List[Method] = ["mmpc", "mmhc"]
    estimators: List[Estimator] = ["psm", "tmle"]
    replications: int = Field(200, ge=1)
    base_seed: int = Field(20190101, ge=0, lt=2**64)
    p_total: int = Field(100, ge=10)
    true_ace_mc_n: int = Field(10_000_000, ge=100_000)

    @model_validator(mode="after")
    def _non_empty(self) -> "GridSpec":
        for name in ("data_settings", "sizes", "outcomes", "methods", "estimators"):
            if not getattr(self, name):
                raise ValueError(f"grid dimension '{name}' must not be empty")
        if any(n < 1 for n in self.sizes):
            raise ValueError("sample sizes must be positive")
        return self
