"""Python bindings for the stalt trajectory scoring engine."""

from ._stalt import (
    StaltError,
    aupr,
    auroc,
    bootstrap_ci,
    coe_c,
    coe_r,
    deltas,
    fpr_at_tpr,
    grade,
    hedges_g,
    layer_weights,
    read_trajectory,
    run_cli,
    score,
    stalt,
    stalt_reversed,
    synth,
    trajectory_deltas,
    validate,
    write_trajectory,
)

__all__ = [
    "StaltError",
    "aupr",
    "auroc",
    "bootstrap_ci",
    "coe_c",
    "coe_r",
    "deltas",
    "fpr_at_tpr",
    "grade",
    "hedges_g",
    "layer_weights",
    "read_trajectory",
    "run_cli",
    "score",
    "stalt",
    "stalt_reversed",
    "synth",
    "trajectory_deltas",
    "validate",
    "write_trajectory",
]
