"""Graph wiring: head routing, shared branches, gradient accumulation."""

import numpy as np
import pytest

from dtlcgan import layers as L
from dtlcgan.layers import StateError
from dtlcgan.network import Head, NetworkGraph


def tiny_graph(seed=0):
    r = np.random.default_rng(seed)
    heads = {
        "d": Head([L.Dense(6, 1, r, dtype=np.float64), L.Sigmoid()]),
        "qh": Head([L.Dense(6, 4, r, dtype=np.float64), L.ReLU()]),
        "q1": Head([L.Dense(4, 2, r, dtype=np.float64), L.Softmax()], parent="qh"),
        "q2": Head([L.Dense(4, 4, r, dtype=np.float64), L.Softmax(groups=2)], parent="qh"),
    }
    return NetworkGraph(
        [L.Dense(3, 6, r, dtype=np.float64), L.ReLU()], heads, name="disc", dtype=np.float64
    )


def x_batch(seed=1, n=5):
    return np.random.default_rng(seed).normal(size=(n, 3))


class TestForward:
    def test_headless_graph_returns_out(self):
        r = np.random.default_rng(0)
        g = NetworkGraph([L.Dense(3, 2, r)], name="gen")
        out = g.forward(x_batch(), True)
        assert set(out) == {"out"}
        assert out["out"].shape == (5, 2)

    def test_requested_heads_only(self):
        out = tiny_graph().forward(x_batch(), True, heads=["d"])
        assert set(out) == {"d"}

    def test_parent_heads_pulled_in_automatically(self):
        out = tiny_graph().forward(x_batch(), True, heads=["q2"])
        assert set(out) == {"qh", "q2"}

    def test_unknown_head_rejected(self):
        with pytest.raises(KeyError):
            tiny_graph().forward(x_batch(), True, heads=["q9"])

    def test_head_on_head_must_follow_parent(self):
        r = np.random.default_rng(0)
        with pytest.raises(ValueError):
            NetworkGraph(
                [L.Dense(3, 6, r)],
                {"q1": Head([L.Dense(4, 2, r)], parent="qh"),
                 "qh": Head([L.Dense(6, 4, r)])},
            )

    def test_input_cast_to_graph_dtype(self):
        out = tiny_graph().forward(x_batch().astype(np.float32), True, heads=["d"])
        assert out["d"].dtype == np.float64


class TestBackward:
    def test_backward_before_forward_raises(self):
        with pytest.raises(StateError):
            tiny_graph().backward({"d": np.zeros((5, 1))})

    def test_backward_for_unforwarded_head_raises(self):
        g = tiny_graph()
        g.forward(x_batch(), True, heads=["d"])
        with pytest.raises(StateError):
            g.backward({"q1": np.zeros((5, 2))})

    def test_shared_branch_sums_child_gradients(self):
        # backward through q1 and q2 together must equal the sum of the two
        # separate backward passes, both at the input and in the shared branch
        g = tiny_graph()
        x = x_batch()
        g.forward(x, True, heads=["q1", "q2"])
        g1 = np.random.default_rng(2).normal(size=(5, 2))
        g2 = np.random.default_rng(3).normal(size=(5, 4))

        g.zero_grad()
        both = g.backward({"q1": g1, "q2": g2})
        grads_both = {p.name: p.grad.copy() for p in g.parameters() if p.grad is not None}

        g.zero_grad()
        alone = g.backward({"q1": g1}) + g.backward({"q2": g2})
        grads_alone = {p.name: p.grad.copy() for p in g.parameters() if p.grad is not None}

        assert np.allclose(both, alone, atol=1e-12)
        assert grads_both.keys() == grads_alone.keys()
        for name in grads_both:
            assert np.allclose(grads_both[name], grads_alone[name], atol=1e-12), name

    def test_param_grads_false_leaves_parameters_untouched(self):
        g = tiny_graph()
        g.forward(x_batch(), True, heads=["d"])
        g.zero_grad()
        gin = g.backward({"d": np.ones((5, 1))}, param_grads=False)
        assert gin.shape == (5, 3)
        assert all(p.grad is None for p in g.parameters())

    def test_untouched_heads_get_no_gradient(self):
        g = tiny_graph()
        g.forward(x_batch(), True)
        g.zero_grad()
        g.backward({"d": np.ones((5, 1))})
        assert all(p.grad is None for p in g.head_parameters("q1"))
        assert all(p.grad is None for p in g.head_parameters("qh"))
        assert all(p.grad is not None for p in g.head_parameters("d"))
        assert all(p.grad is not None for p in g.parameters()[:2])  # trunk


class TestNaming:
    def test_layer_names_are_qualified(self):
        g = tiny_graph()
        assert g.trunk[0].name == "disc.trunk.0.dense"
        assert g.heads["q2"].layers[0].name == "disc.q2.0.dense"

    def test_parameter_names_extend_layer_names(self):
        names = {p.name for p in tiny_graph().parameters()}
        assert "disc.trunk.0.dense.W" in names
        assert "disc.q1.0.dense.b" in names

    def test_layer_table_lists_trunk_then_heads(self):
        table = tiny_graph().layer_table()
        assert table[0] == "trunk: dense 3 6"
        assert "d/trunk: dense 6 1" in table
        assert "q1/qh: dense 4 2" in table


class TestState:
    def test_state_round_trip_preserves_arrays(self):
        g = tiny_graph(seed=4)
        items = dict(g.state_items())
        h = tiny_graph(seed=5)
        h.load_state(items)
        for (na, a), (nb, b) in zip(g.state_items(), h.state_items()):
            assert na == nb
            assert np.array_equal(a, b)

    def test_load_state_rejects_shape_mismatch(self):
        g = tiny_graph()
        items = dict(g.state_items())
        items["disc.trunk.0.dense.W"] = np.zeros((2, 2))
        with pytest.raises(ValueError):
            g.load_state(items)

    def test_state_includes_batchnorm_buffers(self):
        r = np.random.default_rng(0)
        g = NetworkGraph([L.Dense(3, 4, r), L.BatchNorm(4)], name="n")
        names = [name for name, _ in g.state_items()]
        assert "n.trunk.1.batchnorm.running_mean" in names
        assert "n.trunk.1.batchnorm.running_var" in names

    def test_reseed_dropout_gives_unique_streams(self):
        r = np.random.default_rng(0)
        g = NetworkGraph([L.Dropout(0.5), L.Dropout(0.5)], name="n")
        g.reseed_dropout(11)
        x = np.ones((64, 64))
        a = g.trunk[0].forward(x, True)
        b = g.trunk[1].forward(x, True)
        assert not np.array_equal(a, b)
        g.reseed_dropout(11)
        assert np.array_equal(g.trunk[0].forward(x, True), a)
