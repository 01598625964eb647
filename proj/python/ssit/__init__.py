"""Python surface for the C++ core.

Everything heavy lives in the compiled ``_ssit`` module; this package just
re-exports it under stable names.
"""

from _ssit import (
    contrastive_loss,
    fine_grained_saliency,
    gelu,
    knn_classify,
    patch_scores,
    quadratic_weighted_kappa,
    schedules,
    select_salient,
    softmax,
    spectral_residual_saliency,
)

__all__ = [
    "contrastive_loss",
    "fine_grained_saliency",
    "gelu",
    "knn_classify",
    "patch_scores",
    "quadratic_weighted_kappa",
    "schedules",
    "select_salient",
    "softmax",
    "spectral_residual_saliency",
]
