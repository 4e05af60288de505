"""Statistical evaluation of detection output."""

from .metrics import (
    ConfusionMatrix,
    LabelledRequest,
    OverlapTable,
    TopRow,
    confusion,
    half_up,
    import_external_verdicts,
    reason_overlap,
    top_user_agents,
    verdict_memberships,
    version_histogram,
)
from .stats import Correlation, PairedTTest, StatResult, betainc, compare_series, paired_t_test, pearson

__all__ = [
    "ConfusionMatrix", "LabelledRequest", "OverlapTable", "TopRow", "confusion", "half_up",
    "import_external_verdicts", "reason_overlap", "top_user_agents", "verdict_memberships",
    "version_histogram", "Correlation", "PairedTTest", "StatResult", "betainc", "compare_series",
    "paired_t_test", "pearson",
]
