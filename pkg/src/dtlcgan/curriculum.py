"""Curriculum schedule: which tree layers are live at a given iteration.

Regularizer terms switch on highest-layer-first at scheduled iterations, and
the sampling side mirrors them: codes for layers deeper than the deepest
active layer are replaced by their average fill.  Both effects are pure
functions of the iteration counter.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

UNSUPERVISED = "unsupervised"
WEAKLY_SUPERVISED = "weakly_supervised"
MODES = (UNSUPERVISED, WEAKLY_SUPERVISED)
VARIANTS = ("none", "regularizer_only", "full")


@dataclass(frozen=True)
class CurriculumState:
    iteration: int
    active_regularizer_layers: frozenset
    sampling_active_layer: int


@dataclass(frozen=True)
class ScheduleSpec:
    """Activation plan for a depth-L tree.

    With base B, layer l's regularizer activates at 2(l-1)B iterations in
    unsupervised mode (layer 1 from the start) and at 2(l-2)B in weakly
    supervised mode (layers 1-2 from the start).  ``variant`` selects the
    ablations: "none" activates everything at iteration 0,
    "regularizer_only" staggers the regularizers but samples every layer
    from the start, "full" staggers both.
    """

    mode: str
    depth: int
    base: int
    total_iterations: int
    variant: str = "full"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.depth < 1 or self.base < 1 or self.total_iterations < 0:
            raise ValueError("depth and base must be >= 1, total_iterations >= 0")

    def activation_iteration(self, layer: int) -> int:
        if not 1 <= layer <= self.depth:
            raise ValueError(f"layer {layer} outside 1..{self.depth}")
        if self.variant == "none":
            return 0
        if self.mode == UNSUPERVISED:
            return 0 if layer == 1 else 2 * (layer - 1) * self.base
        return 0 if layer <= 2 else 2 * (layer - 2) * self.base


def state_at(spec: ScheduleSpec, iteration: int) -> CurriculumState:
    """Curriculum state at an iteration: active regularizer layers and the
    deepest layer whose codes are actually sampled."""
    if iteration < 0:
        raise ValueError(f"iteration must be nonnegative, got {iteration}")
    active = frozenset(
        l for l in range(1, spec.depth + 1) if iteration >= spec.activation_iteration(l)
    )
    if spec.variant == "full":
        sampling = max(active)
    else:
        sampling = spec.depth
    return CurriculumState(
        iteration=iteration,
        active_regularizer_layers=active,
        sampling_active_layer=sampling,
    )


def ablate(spec: ScheduleSpec, variant: str) -> ScheduleSpec:
    """Return a copy of the schedule with the given curriculum variant."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return replace(spec, variant=variant)
