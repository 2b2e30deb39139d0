"""Radar scene flow: synthetic data, IterFlow inference and metrics."""

from ._core import (
    Model,
    ModelConfig,
    acc_relaxed,
    acc_strict,
    ball_query,
    epe,
    generate_dataset,
    generate_pair,
    parameter_count,
    rne,
    verify_pair,
)

__all__ = [
    "Model",
    "ModelConfig",
    "acc_relaxed",
    "acc_strict",
    "ball_query",
    "epe",
    "generate_dataset",
    "generate_pair",
    "parameter_count",
    "rne",
    "verify_pair",
]
