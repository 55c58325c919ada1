"""Single-image head avatar reconstruction (C++ core with Python bindings)."""

from ._core import (
    Error,
    Mesh,
    Model,
    Subject,
    check,
    clip_deformation,
    default_config,
    mini_rig,
    psnr,
    render,
    resolve_config,
    synthesize,
    total_loss,
    weighted_loss,
)

__all__ = [
    "Error",
    "Mesh",
    "Model",
    "Subject",
    "check",
    "clip_deformation",
    "default_config",
    "mini_rig",
    "psnr",
    "render",
    "resolve_config",
    "synthesize",
    "total_loss",
    "weighted_loss",
]
