"""Schedule arithmetic: activation iterations and state transitions."""

import pytest

from dtlcgan.curriculum import (
    UNSUPERVISED,
    WEAKLY_SUPERVISED,
    ScheduleSpec,
    ablate,
    state_at,
)


def schedule(mode=UNSUPERVISED, depth=3, base=100, variant="full", total=1000):
    return ScheduleSpec(
        mode=mode, depth=depth, base=base, total_iterations=total, variant=variant
    )


class TestActivationIterations:
    def test_unsupervised_staggers_from_layer_two(self):
        s = schedule(depth=4)
        assert [s.activation_iteration(l) for l in (1, 2, 3, 4)] == [0, 200, 400, 600]

    def test_weakly_supervised_starts_two_layers_early(self):
        s = schedule(mode=WEAKLY_SUPERVISED, depth=4)
        assert [s.activation_iteration(l) for l in (1, 2, 3, 4)] == [0, 0, 200, 400]

    def test_none_variant_activates_everything_immediately(self):
        s = schedule(depth=4, variant="none")
        assert all(s.activation_iteration(l) == 0 for l in (1, 2, 3, 4))

    def test_layer_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            schedule(depth=3).activation_iteration(4)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError):
            schedule(mode="supervised")

    def test_bad_variant_rejected(self):
        with pytest.raises(ValueError):
            schedule(variant="half")


class TestStateAt:
    def test_layers_join_exactly_at_their_iteration(self):
        s = schedule(depth=3)
        assert state_at(s, 0).active_regularizer_layers == frozenset({1})
        assert state_at(s, 199).active_regularizer_layers == frozenset({1})
        assert state_at(s, 200).active_regularizer_layers == frozenset({1, 2})
        assert state_at(s, 400).active_regularizer_layers == frozenset({1, 2, 3})

    def test_sampling_layer_tracks_deepest_active_in_full_variant(self):
        s = schedule(depth=3)
        assert state_at(s, 0).sampling_active_layer == 1
        assert state_at(s, 250).sampling_active_layer == 2
        assert state_at(s, 999).sampling_active_layer == 3

    def test_regularizer_only_variant_samples_all_layers_from_start(self):
        s = schedule(depth=3, variant="regularizer_only")
        assert state_at(s, 0).sampling_active_layer == 3
        assert state_at(s, 0).active_regularizer_layers == frozenset({1})
        assert state_at(s, 200).active_regularizer_layers == frozenset({1, 2})

    def test_none_variant_has_no_gating_at_all(self):
        s = schedule(depth=3, variant="none")
        st = state_at(s, 0)
        assert st.active_regularizer_layers == frozenset({1, 2, 3})
        assert st.sampling_active_layer == 3

    def test_negative_iteration_rejected(self):
        with pytest.raises(ValueError):
            state_at(schedule(), -1)

    def test_state_snapshot_is_frozen(self):
        st = state_at(schedule(), 0)
        with pytest.raises(Exception):
            st.iteration = 5


class TestAblate:
    def test_ablate_swaps_variant_only(self):
        s = schedule(variant="full")
        n = ablate(s, "none")
        assert n.variant == "none"
        assert (n.mode, n.depth, n.base) == (s.mode, s.depth, s.base)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            ablate(schedule(), "off")
