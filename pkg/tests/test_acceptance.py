"""Acceptance gates.

One test per shipped guarantee; each prints a single pass/fail verdict
line (run with ``pytest tests/test_acceptance.py -v -s`` to watch them
live).  The two training-based gates share one session fixture that runs
the full 2D-simulation recipe for three seeds under both curriculum
variants, so expect roughly half an hour of compute for the whole module.
The MNIST gate is optional and off by default: point DTLC_MNIST_IMAGES and
DTLC_MNIST_LABELS at local IDX files to enable it.
"""

import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from dtlcgan.checkpoint import load_checkpoint, save_checkpoint
from dtlcgan.config import load_config, train_config
from dtlcgan.data import (
    IdxFormatError,
    Sim2DSpec,
    read_idx_images,
    write_idx_images,
)
from dtlcgan.gradcheck import run_all
from dtlcgan.losses import gan_loss, hcmi_loss, mi_loss
from dtlcgan.metrics import inter_category_diversity, mode_coverage, ssim
from dtlcgan.retrieval import build_index, predict_codes, retrieve
from dtlcgan.training import TrainConfig, generate_labeled_points, train
from dtlcgan.tree import TreeSpec, apply_mask, sample_raw

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
MNIST_IMAGES = os.environ.get("DTLC_MNIST_IMAGES", "")
MNIST_LABELS = os.environ.get("DTLC_MNIST_LABELS", "")


def _verdict(n: int, ok: bool, detail: str):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")


def _tiny_sim_checkpoint(seed=0):
    """Untrained k=[2,2] point-model checkpoint, built through the trainer."""
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(
        tree=TreeSpec(branching=(2, 2)),
        arch="sim_mlp",
        dim_z=8,
        batch_size=8,
        iterations=0,
        dataset="array",
        array_data=rng.normal(size=(16, 2)).astype(np.float32),
        seed=seed,
    )
    ckpt, _ = train(cfg)
    return ckpt


def test_criterion_01_masking_and_marginals():
    t0 = time.time()
    rng = np.random.default_rng(20260816)
    n = 10_000
    worst_sigma = 0.0
    for trial in range(200):
        depth = int(rng.integers(1, 5))
        branching = tuple(int(rng.integers(2, 5)) for _ in range(depth))
        discrete = trial % 3 != 2  # two thirds discrete, one third continuous
        spec = TreeSpec(branching=branching, leaf_kind="discrete" if discrete else "continuous")
        leaf = apply_mask(sample_raw(spec, n, rng=rng)).flattened_leaf
        blocks = leaf.reshape(n, spec.nodes_at(spec.depth), spec.branching[-1])
        active_blocks = (np.abs(blocks).sum(axis=2) > 0).sum(axis=1)
        assert np.all(active_blocks == 1), f"tree {branching}: multiple active leaf blocks"
        if discrete:
            assert np.all(leaf.sum(axis=1) == 1.0)
            p = 1.0 / spec.leaf_dim
            se = math.sqrt(p * (1.0 - p) / n)
            sigma = np.max(np.abs(leaf.mean(axis=0) - p)) / se
            worst_sigma = max(worst_sigma, sigma)
            assert sigma <= 4.0, f"tree {branching}: marginal off by {sigma:.2f} SE"
    dt = time.time() - t0
    _verdict(1, dt < 60, f"200 trees x 10^4 samples, worst marginal {worst_sigma:.2f} SE, {dt:.1f}s")
    assert dt < 60


def test_criterion_02_gradient_suite():
    t0 = time.time()
    rows = run_all(seed=0)
    names = " ".join(name for name, _ in rows)
    for required in (
        "dense.", "conv.", "convT.", "batchnorm", "relu.", "lrelu.", "sigmoid.",
        "tanh.", "softmax.", "dropout.", "reshape.", "flatten.",
        "gan.d_real", "gan.generator", "mi.", "ac.", "hcmi.discrete", "hcmi.continuous",
        "composite.",
    ):
        assert required in names, f"missing gradient check family {required!r}"
    worst = max(err for _, err in rows)
    dt = time.time() - t0
    ok = worst < 1e-4 and dt < 120
    _verdict(2, ok, f"{len(rows)} checks, max relative error {worst:.3e}, {dt:.1f}s")
    assert worst < 1e-4
    assert dt < 120


def test_criterion_03_closed_form_losses():
    half = np.full(64, 0.5)
    gan_err = abs(gan_loss(half, half) - 2.0 * math.log(0.5))

    mi_err = 0.0
    for k in (2, 3, 10):
        q = np.full((30 * k, k), 1.0 / k)
        labels = np.arange(30 * k) % k
        mi_err = max(mi_err, abs(mi_loss(q, labels) - (-math.log(k))))

    spec = TreeSpec(branching=(2, 2))
    asg = apply_mask(sample_raw(spec, 32, rng=np.random.default_rng(3)))
    q2 = np.full((32, spec.nodes_at(2), 2), 0.5)
    hcmi_err = abs(hcmi_loss(2, q2, asg) - (-math.log(2.0)))

    ok = gan_err < 1e-9 and mi_err < 1e-9 and hcmi_err < 1e-9
    _verdict(3, ok, f"gan off {gan_err:.1e}, mi off {mi_err:.1e}, hcmi off {hcmi_err:.1e}")
    assert gan_err < 1e-9
    assert mi_err < 1e-9
    assert hcmi_err < 1e-9


def test_criterion_04_curriculum_gating():
    from dtlcgan.architectures import build_graphs

    rng = np.random.default_rng(44)
    X = rng.normal(size=(200, 2)).astype(np.float32)
    y = (np.arange(200) % 2).astype(np.int64)
    cfg = TrainConfig(
        tree=TreeSpec(branching=(2, 2, 2, 2), supervised_root=True),
        arch="sim_mlp",
        dim_z=8,
        batch_size=20,
        iterations=500,
        curriculum_mode="weakly_supervised",
        curriculum_base=100,
        dataset="array",
        array_data=X,
        array_labels=y,
        seed=4,
    )

    # rebuild the trainer's exact initial graphs (same seed stream) so
    # "unchanged" means bit-identical to initialization, not to iteration 0
    r_init = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(5)[0])
    _, disc0 = build_graphs(cfg.arch, cfg.tree, cfg.dim_z, r_init)
    init = {
        head: [p.data.copy() for p in disc0.head_parameters(head)]
        for head in ("q3", "q4")
    }

    trace = []

    def watch(ctx):
        disc, asg = ctx["disc"], ctx["assignment"]
        same = {
            head: all(
                np.array_equal(p.data, d0)
                for p, d0 in zip(disc.head_parameters(head), init[head])
            )
            for head in ("q3", "q4")
        }
        trace.append(
            (
                ctx["iteration"],
                same["q3"],
                same["q4"],
                bool(np.all(asg.raw[2] == 0.5)),
                bool(np.all(asg.raw[3] == 0.5)),
            )
        )

    train(cfg, callback=watch)

    assert len(trace) == 500
    for it, q3_same, q4_same, fill3, fill4 in trace:
        if it < 200:
            assert q3_same, f"layer-3 head changed at iteration {it} (< 200)"
            assert fill3, f"layer-3 latents not average-filled at iteration {it}"
        if it < 400:
            assert q4_same, f"layer-4 head changed at iteration {it} (< 400)"
            assert fill4, f"layer-4 latents not average-filled at iteration {it}"
    by_it = {row[0]: row for row in trace}
    assert not by_it[200][1], "layer-3 head still at initialization after activation"
    assert not by_it[400][2], "layer-4 head still at initialization after activation"
    assert not by_it[200][3], "layer-3 latents still filled after activation"
    assert not by_it[400][4], "layer-4 latents still filled after activation"
    _verdict(4, True, "heads bit-identical until 200/400, exact 1/k fill before activation")


@pytest.fixture(scope="session")
def sim_grid():
    """Criterion-5 recipe for three seeds under both curriculum variants."""
    results = {}
    for variant in ("full", "none"):
        for seed in (0, 1, 2):
            cfg = train_config(load_config(CONFIG_DIR / "sim2d.cfg"))
            cfg.curriculum_variant = variant
            cfg.seed = seed
            t0 = time.time()
            ckpt, _ = train(cfg)
            minutes = (time.time() - t0) / 60.0
            spec = Sim2DSpec(**ckpt.meta["sim2d"])
            points, gids, lids = generate_labeled_points(
                ckpt, per_category=100, rng=np.random.default_rng(seed)
            )
            report = mode_coverage(points, gids, lids, spec, threshold=0.3)
            results[(variant, seed)] = (report, minutes)
    return results


def test_criterion_05_simulated_data_reproduction(sim_grid):
    attempts = []
    for seed in (0, 1, 2):
        report, minutes = sim_grid[("full", seed)]
        attempts.append(
            f"seed {seed}: covered {report.n_covered}/10 purity {report.purity:.3f} "
            f"split {report.n_split_consistent} in {minutes:.1f} min"
        )
        if report.n_covered >= 8 and report.purity >= 0.8 and report.n_split_consistent >= 6:
            _verdict(5, minutes <= 20, "; ".join(attempts))
            assert minutes <= 20
            return
    _verdict(5, False, "; ".join(attempts))
    pytest.fail("no seed reached covered>=8/10, purity>=0.8, split>=6: " + "; ".join(attempts))


def test_criterion_06_curriculum_ablation_contrast(sim_grid):
    wins = 0
    detail = []
    for seed in (0, 1, 2):
        full_cov = sim_grid[("full", seed)][0].n_covered
        none_cov = sim_grid[("none", seed)][0].n_covered
        wins += full_cov >= none_cov
        detail.append(f"seed {seed}: full {full_cov} vs none {none_cov}")
    _verdict(6, wins >= 2, f"full >= none on {wins}/3 seeds ({'; '.join(detail)})")
    assert wins >= 2


@pytest.mark.skipif(
    not (MNIST_IMAGES and MNIST_LABELS),
    reason="multi-hour MNIST run; set DTLC_MNIST_IMAGES and DTLC_MNIST_LABELS to enable",
)
def test_criterion_07_mnist_diversity_ordering():
    attempts = []
    for seed in (0, 1, 2):
        cfg = train_config(load_config(CONFIG_DIR / "mnist45.cfg"))
        cfg.mnist_images = MNIST_IMAGES
        cfg.mnist_labels = MNIST_LABELS
        cfg.seed = seed
        ckpt, _ = train(cfg)
        rng = np.random.default_rng(seed)
        d1 = inter_category_diversity(ckpt, layer=1, n_pairs=2000, rng=rng)
        d2 = inter_category_diversity(ckpt, layer=2, n_pairs=2000, rng=rng)
        attempts.append(f"seed {seed}: layer-1 {d1:.4f} vs layer-2 {d2:.4f}")
        if d1 < d2:
            _verdict(7, True, "; ".join(attempts))
            return
    _verdict(7, False, "; ".join(attempts))
    pytest.fail("diversity(layer 1) never below diversity(layer 2): " + "; ".join(attempts))


def test_criterion_08_ssim_correctness():
    rng = np.random.default_rng(88)
    identity_err = 0.0
    for _ in range(100):
        x = rng.uniform(0.0, 1.0, size=(28, 28))
        identity_err = max(identity_err, abs(ssim(x, x) - 1.0))

    symmetry_err = 0.0
    for _ in range(50):
        x = rng.uniform(0.0, 1.0, size=(16, 16))
        y = rng.uniform(0.0, 1.0, size=(16, 16))
        symmetry_err = max(symmetry_err, abs(ssim(x, y) - ssim(y, x)))

    # constant black vs constant white at data range 1: means contribute
    # C1/(1 + C1) with C1 = (0.01 * 1)^2, variances contribute exactly 1
    oracle = 1e-4 / (1.0 + 1e-4)
    const_err = abs(ssim(np.zeros((12, 12)), np.ones((12, 12))) - oracle)

    ok = identity_err < 1e-9 and symmetry_err < 1e-12 and const_err < 1e-9
    _verdict(
        8,
        ok,
        f"identity off {identity_err:.1e}, symmetry off {symmetry_err:.1e}, "
        f"constant-image off {const_err:.1e}",
    )
    assert identity_err < 1e-9
    assert symmetry_err < 1e-12
    assert const_err < 1e-9


def test_criterion_09_retrieval_and_soft_gating():
    ckpt = _tiny_sim_checkpoint(seed=9)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(20, 2)).astype(np.float32)

    index = build_index(ckpt, X)
    hits = retrieve(predict_codes(ckpt, X[3]), index, depth=2, top_n=1)
    rank, item, distance = hits[0]
    assert (rank, item) == (1, 3)
    assert distance == 0.0

    soft = predict_codes(ckpt, X)
    scale = float(ckpt.meta["input_scale"])
    x64 = np.asarray(X, dtype=np.float64) * scale  # the dtype predict_codes runs at
    # reference posteriors from the same one-row-at-a-time eval forwards the
    # codes use; batched matmul would reduce in a different order
    rows = [
        ckpt.discriminator.forward(x64[i : i + 1], train=False, heads=["q1", "q2"])
        for i in range(len(x64))
    ]
    q1 = np.concatenate([r["q1"] for r in rows]).astype(np.float64)
    q2 = np.concatenate([r["q2"] for r in rows]).astype(np.float64).reshape(-1, 2, 2)
    q1 = q1 / q1.sum(axis=1, keepdims=True)  # exact per-node distributions,
    q2 = q2 / q2.sum(axis=2, keepdims=True)  # matching the predicted codes

    expect1 = np.zeros_like(soft[0])
    expect2 = np.zeros_like(soft[1])
    for root, pick0, pick1 in itertools.product(range(2), repeat=3):
        weight = q1[:, root] * q2[:, 0, pick0] * q2[:, 1, pick1]
        hard1 = np.zeros((2,))
        hard1[root] = 1.0
        hard2 = np.zeros((2, 2))
        hard2[0, pick0] = 1.0
        hard2[1, pick1] = 1.0
        gated2 = hard2 * hard1[:, None]  # the root's one-hot gates its block
        expect1 += weight[:, None] * hard1
        expect2 += weight[:, None] * gated2.reshape(4)
    soft_err = max(
        np.max(np.abs(soft[0] - expect1)),
        np.max(np.abs(soft[1] - expect2)),
    )
    ok = soft_err < 1e-9
    _verdict(9, ok, f"self-match distance {distance}, soft vs hard expectation off {soft_err:.1e}")
    assert soft_err < 1e-9


def test_criterion_10_persistence(tmp_path):
    ckpt = _tiny_sim_checkpoint(seed=10)
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(ckpt, first)
    save_checkpoint(load_checkpoint(first), second)
    identical = first.read_bytes() == second.read_bytes()
    assert identical

    good = tmp_path / "images.idx"
    write_idx_images(good, np.arange(48, dtype=np.uint8).reshape(3, 4, 4))
    corrupted = bytearray(good.read_bytes())
    corrupted[0] ^= 0xFF
    bad_magic = tmp_path / "bad_magic.idx"
    bad_magic.write_bytes(bytes(corrupted))
    with pytest.raises(IdxFormatError, match="bad image magic"):
        read_idx_images(bad_magic)

    truncated = tmp_path / "truncated.idx"
    truncated.write_bytes(good.read_bytes()[:20])
    with pytest.raises(IdxFormatError, match="truncated IDX file"):
        read_idx_images(truncated)

    _verdict(10, True, "byte-identical round trip; corrupted magic and truncation rejected")
