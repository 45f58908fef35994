# confsel/schemas/__init__.py

from confsel.schemas.config import (
    GridSpec,
    HillClimbConfig,
    MmpcConfig,
    PsmConfig,
    SelectionConfig,
    SimConfig,
    TmleConfig,
)
from confsel.schemas.results import (
    AceEstimate,
    CiTestResult,
    EstimateRecord,
    ReplicationRecord,
    SelectionRecord,
    TargetSubsets,
)
