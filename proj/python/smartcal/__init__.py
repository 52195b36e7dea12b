"""Post-hoc confidence calibration from classifier logits."""

from ._smartcal import (
    CalibratorModel,
    DataError,
    NumericError,
    UsageError,
    accuracy,
    adaece,
    brier,
    check_bounds,
    classwise_ece,
    ece,
    evaluate,
    load_logits,
    logit_gap,
    membership,
    nll,
    save_logits,
    soft_ece,
    soft_ece_grad,
    softmax_rows,
    solve_temperature,
    synthesize,
    train_smart,
    train_ts,
    uniform_gap_temperature,
)

__all__ = [
    "CalibratorModel",
    "DataError",
    "NumericError",
    "UsageError",
    "accuracy",
    "adaece",
    "brier",
    "check_bounds",
    "classwise_ece",
    "ece",
    "evaluate",
    "load_logits",
    "logit_gap",
    "membership",
    "nll",
    "save_logits",
    "soft_ece",
    "soft_ece_grad",
    "softmax_rows",
    "solve_temperature",
    "synthesize",
    "train_smart",
    "train_ts",
    "uniform_gap_temperature",
]
