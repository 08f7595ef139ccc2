"""Hierarchically controllable GAN built around a decision-tree latent code."""

from .tree import (
    TreeSpec,
    CodeAssignment,
    ActivePath,
    sample_raw,
    apply_mask,
    curriculum_fill,
    active_path,
)

__all__ = [
    "TreeSpec",
    "CodeAssignment",
    "ActivePath",
    "sample_raw",
    "apply_mask",
    "curriculum_fill",
    "active_path",
    "DTLCGAN",
]

__version__ = "0.1.0"


def __getattr__(name):
    if name == "DTLCGAN":
        from .estimator import DTLCGAN

        return DTLCGAN
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
