"""Python access to the skillflow core (tabular TTB trainer, flow oracle, diagnostics)."""

from ._core import (
    RunConfig,
    Runner,
    cgf,
    cgf_summaries,
    fixture_q4,
    smooth_reward,
    step_importance,
    telescope_log_flow,
    train,
    verify,
)

__all__ = [
    "RunConfig",
    "Runner",
    "cgf",
    "cgf_summaries",
    "fixture_q4",
    "smooth_reward",
    "step_importance",
    "telescope_log_flow",
    "train",
    "verify",
]
