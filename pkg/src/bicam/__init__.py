"""Signed bidirectional attribution maps for small vision transformers.

The package bundles a float64 autodiff engine, an instrumented ViT,
signed attribution with an attention-rollout baseline, PGD / MI-FGSM
attacks, PNR-based adversarial detection, and localization/faithfulness
evaluation protocols, all behind a reproducible CLI.
"""

from .vit import (ViTConfig, ViTWeights, VisionTransformer, init_weights,
                  new_model)

__all__ = [
    "ViTConfig",
    "ViTWeights",
    "VisionTransformer",
    "init_weights",
    "new_model",
]

__version__ = "0.1.0"
