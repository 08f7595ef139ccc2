import itertools

import numpy as np
import pytest

from dtlcgan.data import Sim2DSpec
from dtlcgan.retrieval import (
    CodeIndex,
    build_index,
    load_index_csv,
    predict_codes,
    retrieve,
    save_index_csv,
    save_results_csv,
)
from dtlcgan.training import TrainConfig, train
from dtlcgan.tree import TreeSpec


def sim_checkpoint(branching=(2, 2), seed=0):
    cfg = TrainConfig(
        tree=TreeSpec(branching=branching),
        arch="sim_mlp",
        dim_z=8,
        batch_size=4,
        iterations=0,
        dataset="sim2d",
        sim2d=Sim2DSpec(n_global=branching[0]),
        seed=seed,
    )
    ckpt, _ = train(cfg)
    return ckpt


def zero_head_logits(ckpt, layers=(1, 2)):
    """Zero the posterior heads' dense parameters so they emit exact
    uniform distributions for any input."""
    tags = tuple(f".q{l}." for l in layers)
    for p in ckpt.discriminator.parameters():
        if any(t in p.name for t in tags):
            p.data[...] = 0.0
    return ckpt


class TestPredictCodes:
    def test_uniform_heads_give_uniform_gated_codes(self):
        ckpt = zero_head_logits(sim_checkpoint())
        rng = np.random.default_rng(0)
        codes = predict_codes(ckpt, rng.normal(size=(3, 2)))
        assert len(codes) == 2
        np.testing.assert_allclose(codes[0], 0.5, rtol=0, atol=1e-15)
        np.testing.assert_allclose(codes[1], 0.25, rtol=0, atol=1e-15)

    def test_rows_sum_to_one_per_layer(self):
        ckpt = sim_checkpoint(branching=(3, 2))
        rng = np.random.default_rng(1)
        codes = predict_codes(ckpt, rng.normal(size=(5, 2)))
        for layer in codes:
            np.testing.assert_allclose(layer.sum(axis=1), 1.0, atol=1e-12)

    def test_soft_codes_match_enumerated_expectation_of_hard_gating(self):
        # Gating with soft probabilities must equal the expectation, over all
        # hard per-node choices weighted by those probabilities, of the hard
        # gated masks.
        ckpt = sim_checkpoint()
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 2))
        soft = predict_codes(ckpt, x)

        scale = float(ckpt.meta["input_scale"])
        # reference posteriors via the same one-row-at-a-time eval forwards
        # the codes use; the identity under test is the gating algebra
        rows = [
            ckpt.discriminator.forward(x[i : i + 1] * scale, train=False, heads=["q1", "q2"])
            for i in range(len(x))
        ]
        q1 = np.concatenate([r["q1"] for r in rows]).astype(np.float64)  # (b, 2)
        q2 = np.concatenate([r["q2"] for r in rows]).astype(np.float64).reshape(-1, 2, 2)
        # per-node choices are drawn from exact distributions, like the codes
        q1 = q1 / q1.sum(axis=1, keepdims=True)
        q2 = q2 / q2.sum(axis=2, keepdims=True)

        b = len(x)
        exp1 = np.zeros((b, 2))
        exp2 = np.zeros((b, 4))
        for root, c0, c1 in itertools.product(range(2), repeat=3):
            weight = q1[:, root] * q2[:, 0, c0] * q2[:, 1, c1]
            mask1 = np.zeros(2)
            mask1[root] = 1.0
            mask2 = np.zeros((2, 2))
            mask2[root, (c0, c1)[root]] = 1.0
            exp1 += weight[:, None] * mask1[None, :]
            exp2 += weight[:, None] * mask2.reshape(-1)[None, :]

        np.testing.assert_allclose(soft[0], exp1, atol=1e-9)
        np.testing.assert_allclose(soft[1], exp2, atol=1e-9)

    def test_hard_codes_are_valid_masks(self):
        ckpt = sim_checkpoint(branching=(3, 2))
        rng = np.random.default_rng(3)
        codes = predict_codes(ckpt, rng.normal(size=(6, 2)), hard=True)
        roots, children = codes
        assert set(np.unique(roots)) <= {0.0, 1.0}
        np.testing.assert_array_equal(roots.sum(axis=1), 1.0)
        blocks = children.reshape(-1, 3, 2)
        np.testing.assert_array_equal(blocks.sum(axis=(1, 2)), 1.0)
        # the single active child block must sit under the active root
        for row in range(6):
            root = int(roots[row].argmax())
            assert blocks[row, root].sum() == 1.0

    def test_depth_limits_layers(self):
        ckpt = sim_checkpoint()
        rng = np.random.default_rng(4)
        codes = predict_codes(ckpt, rng.normal(size=(2, 2)), depth=1)
        assert len(codes) == 1
        with pytest.raises(ValueError, match="depth must be in 1..2"):
            predict_codes(ckpt, rng.normal(size=(2, 2)), depth=3)
        with pytest.raises(ValueError, match="depth must be in 1..2"):
            predict_codes(ckpt, rng.normal(size=(2, 2)), depth=0)

    def test_single_input_round_trips_unbatched(self):
        ckpt = sim_checkpoint()
        point = np.array([0.3, -0.1])
        single = predict_codes(ckpt, point)
        batched = predict_codes(ckpt, point[None])
        for s, b in zip(single, batched):
            assert s.ndim == 1
            np.testing.assert_array_equal(s, b[0])


class TestCodeIndex:
    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="one row per item"):
            CodeIndex(ids=np.arange(3), layers=[np.zeros((2, 2))])

    def test_vectors_concatenate_layers(self):
        index = CodeIndex(ids=np.arange(2), layers=[np.ones((2, 2)), np.full((2, 4), 2.0)])
        assert index.vectors(1).shape == (2, 2)
        assert index.vectors(2).shape == (2, 6)
        with pytest.raises(ValueError):
            index.vectors(3)

    def test_build_index_defaults_ids(self):
        ckpt = sim_checkpoint()
        rng = np.random.default_rng(5)
        index = build_index(ckpt, rng.normal(size=(7, 2)))
        np.testing.assert_array_equal(index.ids, np.arange(7))
        assert len(index) == 7
        assert index.depth == 2


class TestRetrieve:
    def test_self_match_has_distance_zero_and_rank_one(self):
        ckpt = sim_checkpoint()
        rng = np.random.default_rng(6)
        data = rng.normal(size=(10, 2))
        index = build_index(ckpt, data)
        query = predict_codes(ckpt, data[4])
        results = retrieve(query, index, depth=2, top_n=3)
        rank, item, dist = results[0]
        assert (rank, item) == (1, 4)
        assert dist == 0.0

    def test_ties_break_by_ascending_id(self):
        layer = np.zeros((4, 2))
        index = CodeIndex(ids=np.array([9, 3, 7, 1]), layers=[layer])
        results = retrieve([np.zeros(2)], index, depth=1, top_n=4)
        assert [item for _, item, _ in results] == [1, 3, 7, 9]
        assert [rank for rank, _, _ in results] == [1, 2, 3, 4]

    def test_depth_one_ignores_deeper_codes(self):
        layers = [np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])]
        index = CodeIndex(ids=np.array([0, 1]), layers=layers)
        shallow = retrieve([np.array([1.0, 0.0])], index, depth=1, top_n=2)
        assert shallow[0][2] == shallow[1][2] == 0.0
        deep = retrieve([np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0])], index, depth=2, top_n=2)
        assert deep[0][1] == 0
        assert deep[0][2] == 0.0
        assert deep[1][2] > 0.0

    def test_distances_are_sorted_and_correct(self):
        rng = np.random.default_rng(7)
        base = rng.normal(size=(20, 6))
        index = CodeIndex(ids=np.arange(20), layers=[base[:, :2], base[:, 2:]])
        q = rng.normal(size=6)
        results = retrieve([q[:2], q[2:]], index, depth=2, top_n=20)
        dists = [d for _, _, d in results]
        assert dists == sorted(dists)
        expected = np.linalg.norm(base - q, axis=1)
        for _, item, d in results:
            assert d == pytest.approx(expected[item], abs=1e-12)

    def test_empty_index_rejected(self):
        index = CodeIndex(ids=np.zeros(0, dtype=np.int64), layers=[np.zeros((0, 2))])
        with pytest.raises(ValueError, match="empty index"):
            retrieve([np.zeros(2)], index, depth=1)

    def test_width_mismatch_rejected(self):
        index = CodeIndex(ids=np.arange(2), layers=[np.zeros((2, 2))])
        with pytest.raises(ValueError, match="does not match index width"):
            retrieve([np.zeros(3)], index, depth=1)

    def test_top_n_caps_results(self):
        index = CodeIndex(ids=np.arange(10), layers=[np.random.default_rng(8).normal(size=(10, 2))])
        results = retrieve([np.zeros(2)], index, depth=1, top_n=4)
        assert len(results) == 4


class TestCsv:
    def test_index_round_trip(self, tmp_path):
        ckpt = sim_checkpoint()
        rng = np.random.default_rng(9)
        index = build_index(ckpt, rng.normal(size=(5, 2)), ids=np.array([4, 8, 15, 16, 23]))
        path = tmp_path / "index.csv"
        save_index_csv(path, index)
        loaded = load_index_csv(path)
        np.testing.assert_array_equal(loaded.ids, index.ids)
        assert loaded.depth == index.depth
        for a, b in zip(loaded.layers, index.layers):
            np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_index_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(ValueError, match="unexpected index header"):
            load_index_csv(path)

    def test_results_csv_format(self, tmp_path):
        path = tmp_path / "results.csv"
        save_results_csv(path, [(1, 4, 0.0), (2, 7, 1.25)])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "rank,id,distance"
        assert lines[1] == "1,4,0"
        assert lines[2] == "2,7,1.25"
