"""Tail index estimation for discrete heavy-tailed laws and regenerative chains."""

__version__ = "0.1.0"

from .tail_core import (  # noqa: E402
    DeviationBound,
    SampleBatch,
    SurvivalCurve,
    TailEstimate,
    beta_hat,
    beta_hat_averaged,
    deviation_bound,
    empirical_survival,
    k_ln_rule,
    stability_scan,
    studentized_ci,
)

__all__ = [
    "DeviationBound",
    "SampleBatch",
    "SurvivalCurve",
    "TailEstimate",
    "beta_hat",
    "beta_hat_averaged",
    "deviation_bound",
    "empirical_survival",
    "k_ln_rule",
    "stability_scan",
    "studentized_ci",
]
