"""Class-incremental multi-label learning on patch features."""

from ._core import (
    CheckError,
    DataError,
    __version__,
    average_precision,
    config_json,
    eval_checkpoint,
    evaluate_predictions,
    gen,
    gradcheck,
    train,
)

__all__ = [
    "CheckError",
    "DataError",
    "__version__",
    "average_precision",
    "config_json",
    "eval_checkpoint",
    "evaluate_predictions",
    "gen",
    "gradcheck",
    "train",
]
