"""GateFuseNet: gated multimodal fusion classifier on synthetic 3D phantoms.

The heavy lifting lives in the native ``_core`` module; this package re-exports
it. Pipeline calls write the same files as the ``gatefusenet`` command line.
"""

from ._core import (
    ConfigError,
    FormatError,
    IoError,
    NumericError,
    cosine_lr,
    default_config,
    evaluate,
    focal_loss,
    gradcam,
    metrics,
    pr_curve,
    read_volume,
    roc_curve,
    synth,
    synth_subject,
    train,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "IoError",
    "NumericError",
    "cosine_lr",
    "default_config",
    "evaluate",
    "focal_loss",
    "gradcam",
    "metrics",
    "pr_curve",
    "read_volume",
    "roc_curve",
    "synth",
    "synth_subject",
    "train",
    "write_volume",
]
