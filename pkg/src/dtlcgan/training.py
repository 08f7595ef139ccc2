"""Adversarial training loop for the tree-controlled GAN.

Each iteration queries the curriculum, draws a curriculum-filled latent
batch, runs one discriminator/posterior update and one generator/posterior
update (1:1), and logs a loss report.  The posterior heads and the shared
trunk receive information-term gradients during both updates; inactive
layers' heads are never forwarded, so their parameters stay bit-identical to
initialization until their activation iteration.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .architectures import build_graphs
from .checkpoint import Checkpoint, save_checkpoint
from .curriculum import (
    MODES,
    UNSUPERVISED,
    WEAKLY_SUPERVISED,
    ScheduleSpec,
    state_at,
)
from .data import Sim2DSpec, load_mnist, sample_sim2d
from .losses import (
    csv_header,
    csv_row,
    full_objective,
    gan_loss,
    gan_loss_grads,
    generator_gan_loss,
    generator_gan_loss_grad,
    hcmi_loss,
    hcmi_loss_grad,
    mi_loss,
    mi_loss_grad,
)
from .optim import Adam
from .tree import CodeAssignment, TreeSpec, apply_mask, curriculum_fill, sample_raw


class TrainingDiverged(RuntimeError):
    pass


G_LOSSES = ("nonsaturating", "saturating")
NOISE_KINDS = ("uniform", "gaussian")
DATASETS = ("sim2d", "mnist", "array")


@dataclass
class TrainConfig:
    tree: TreeSpec
    arch: str = "sim_mlp"
    dim_z: int = 256
    batch_size: int = 512
    iterations: int = 30_000
    lr_d: float = 1e-4
    lr_g: float = 1e-4
    beta1: float = 0.5
    lambdas: tuple = ()
    seed: int = 0
    dataset: str = "sim2d"
    curriculum_mode: str = UNSUPERVISED
    curriculum_base: int = 10_000
    curriculum_variant: str = "full"
    g_loss: str = "nonsaturating"
    noise: str = "uniform"
    checkpoint_interval: int | None = None
    sim2d: Sim2DSpec = field(default_factory=Sim2DSpec)
    mnist_images: str | None = None
    mnist_labels: str | None = None
    keep_digits: tuple | None = None
    # programmatic path (the estimator API): train on a caller-provided array
    array_data: object = None
    array_labels: object = None

    def __post_init__(self):
        if not self.lambdas:
            self.lambdas = (1.0,) * self.tree.depth
        self.lambdas = tuple(float(v) for v in self.lambdas)

    def validate(self):
        if len(self.lambdas) != self.tree.depth:
            raise ValueError(
                f"need one lambda per layer: got {len(self.lambdas)} for depth {self.tree.depth}"
            )
        if any(v < 0 for v in self.lambdas):
            raise ValueError("lambda weights must be nonnegative")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be positive and iterations nonnegative")
        if min(self.lr_d, self.lr_g) <= 0 or not 0 <= self.beta1 < 1:
            raise ValueError("learning rates must be positive and beta1 in [0, 1)")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "array" and self.array_data is None:
            raise ValueError("array dataset needs array_data")
        if self.curriculum_mode not in MODES:
            raise ValueError(f"unknown curriculum mode {self.curriculum_mode!r}")
        if self.g_loss not in G_LOSSES:
            raise ValueError(f"g_loss must be nonsaturating or saturating, got {self.g_loss!r}")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be uniform or gaussian, got {self.noise!r}")
        if self.curriculum_mode == WEAKLY_SUPERVISED and not self.tree.supervised_root:
            raise ValueError("weakly supervised training needs tree.supervised_root = true")
        if self.dataset == "mnist" and not (self.mnist_images and self.mnist_labels):
            raise ValueError("mnist dataset needs mnist_images and mnist_labels paths")

    def schedule(self) -> ScheduleSpec:
        return ScheduleSpec(
            mode=self.curriculum_mode,
            depth=self.tree.depth,
            base=self.curriculum_base,
            total_iterations=self.iterations,
            variant=self.curriculum_variant,
        )

    def input_scale(self) -> float:
        if self.dataset in ("sim2d", "array") and self.arch == "sim_mlp":
            return self.sim2d.input_scale
        return 1.0


# -- data streams -------------------------------------------------------------


class _SimStream:
    """Fresh draws from the simulated distribution, pre-scaled for D."""

    def __init__(self, spec: Sim2DSpec, batch_size: int, rng):
        self.spec = spec
        self.batch_size = batch_size
        self.rng = rng

    def next_batch(self):
        points, g, _ = sample_sim2d(self.spec, self.batch_size, self.rng)
        return (points * self.spec.input_scale).astype(np.float32), g


class _ArrayStream:
    """Shuffled epochs over a fixed array dataset."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, batch_size: int, rng):
        self.images = images
        self.labels = labels
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(len(images))
        self._pos = 0

    def next_batch(self):
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(len(self.images))
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.images[idx], self.labels[idx]


def _make_stream(cfg: TrainConfig, rng):
    if cfg.dataset == "sim2d":
        return _SimStream(cfg.sim2d, cfg.batch_size, rng)
    if cfg.dataset == "array":
        data = np.asarray(cfg.array_data, dtype=np.float32) * cfg.input_scale()
        labels = (
            np.zeros(len(data), dtype=np.int64)
            if cfg.array_labels is None
            else np.asarray(cfg.array_labels, dtype=np.int64)
        )
    else:
        data, labels = load_mnist(cfg.mnist_images, cfg.mnist_labels, cfg.keep_digits)
    if len(data) < cfg.batch_size:
        raise ValueError(f"dataset smaller than one batch ({len(data)} < {cfg.batch_size})")
    return _ArrayStream(data, labels, cfg.batch_size, rng)


def _noise(cfg: TrainConfig, n: int, rng) -> np.ndarray:
    if cfg.noise == "gaussian":
        return rng.normal(0.0, 1.0, size=(n, cfg.dim_z)).astype(np.float32)
    return rng.uniform(-1.0, 1.0, size=(n, cfg.dim_z)).astype(np.float32)


def _latent_batch(cfg, state, r_codes, r_noise):
    asg = sample_raw(cfg.tree, cfg.batch_size, rng=r_codes)
    filled = curriculum_fill(cfg.tree, asg, state.sampling_active_layer)
    z = _noise(cfg, cfg.batch_size, r_noise)
    gen_in = np.concatenate([z, filled.flattened_leaf.astype(np.float32)], axis=1)
    return filled, gen_in


# -- the loop ------------------------------------------------------------------


def train(cfg: TrainConfig, out_dir=None, callback=None):
    """Run the full loop; returns (final Checkpoint, list of LossReport).

    When ``out_dir`` is given, writes ``metrics.csv``, periodic
    ``ckpt_<iter>.ckpt`` files, and ``final.ckpt``.  ``callback(context)``
    fires at the end of every iteration with the live graphs, the filled
    latent assignments, and the curriculum state (used by tests and by
    progress monitors).
    """
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    r_init, r_codes, r_noise, r_data, r_drop = (np.random.default_rng(s) for s in ss.spawn(5))

    gen, disc = build_graphs(cfg.arch, cfg.tree, cfg.dim_z, r_init)
    gen.reseed_dropout(int(r_drop.integers(2**31)))
    disc.reseed_dropout(int(r_drop.integers(2**31)))
    adam_g = Adam(gen.parameters(), lr=cfg.lr_g, beta1=cfg.beta1)
    adam_d = Adam(disc.parameters(), lr=cfg.lr_d, beta1=cfg.beta1)
    stream = _make_stream(cfg, r_data)
    schedule = cfg.schedule()
    weakly = cfg.curriculum_mode == WEAKLY_SUPERVISED

    interval = cfg.checkpoint_interval or max(1, cfg.iterations // 10)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_path / "metrics.csv", "w")
        metrics_fh.write(csv_header(cfg.tree.depth) + "\n")
    else:
        metrics_fh = None

    reports = []
    try:
        for it in range(cfg.iterations):
            state = state_at(schedule, it)
            try:
                report, ctx = _train_iteration(
                    cfg, state, gen, disc, adam_g, adam_d, stream, r_codes, r_noise, weakly
                )
            except FloatingPointError as err:
                if out_path is not None:
                    save_checkpoint(_checkpoint(cfg, gen, disc, it), out_path / "crash.ckpt")
                raise TrainingDiverged(f"aborted at iteration {it}: {err}") from err
            reports.append(report)
            if metrics_fh is not None:
                metrics_fh.write(csv_row(it, report, cfg.tree.depth) + "\n")
            if out_path is not None and (it + 1) % interval == 0 and (it + 1) < cfg.iterations:
                save_checkpoint(_checkpoint(cfg, gen, disc, it + 1), out_path / f"ckpt_{it + 1:06d}.ckpt")
            if (it + 1) % interval == 0:
                print(
                    f"iter {it + 1}/{cfg.iterations} gan={report.gan_term:+.4f} "
                    f"g_total={report.weighted_total_for_g:+.4f}",
                    file=sys.stderr,
                )
            if callback is not None:
                ctx.update(iteration=it, state=state, gen=gen, disc=disc)
                callback(ctx)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    final = _checkpoint(cfg, gen, disc, cfg.iterations)
    if out_path is not None:
        save_checkpoint(final, out_path / "final.ckpt")
    return final, reports


def _train_iteration(cfg, state, gen, disc, adam_g, adam_d, stream, r_codes, r_noise, weakly):
    lam = cfg.lambdas
    active = sorted(state.active_regularizer_layers)
    deep_heads = [f"q{l}" for l in active if l >= 2]

    # ---- D/Q step: maximize the adversarial term, raise the info terms ----
    x_real, labels = stream.next_batch()
    asg, gen_in = _latent_batch(cfg, state, r_codes, r_noise)
    x_fake = gen.forward(gen_in, train=True)["out"]

    disc.zero_grad()
    real_heads = ["d", "q1"] if weakly else ["d"]
    out_r = disc.forward(x_real, train=True, heads=real_heads)
    d_real = out_r["d"]

    fake_heads = (["d", "q1"] if 1 in active else ["d"]) + deep_heads
    # the real pass must be backwarded before the fake forward overwrites the
    # layer caches; the two halves of the adversarial gradient are independent
    grads_r = {}
    c1 = asg.raw[0][:, 0, :]
    if weakly:
        grads_r["q1"] = -lam[0] * mi_loss_grad(out_r["q1"], labels)
    g_real, _ = gan_loss_grads(d_real, np.full_like(d_real, 0.5))
    grads_r["d"] = -g_real
    disc.backward(grads_r)

    out_f = disc.forward(x_fake, train=True, heads=fake_heads)
    d_fake = out_f["d"]
    gan_value = gan_loss(d_real, d_fake)

    mi_value = None
    hcmi_values = {}
    grads_f = {}
    _, g_fake = gan_loss_grads(np.full_like(d_fake, 0.5), d_fake)
    grads_f["d"] = -g_fake
    if 1 in active:
        mi_fake = mi_loss(out_f["q1"], c1)
        if weakly:
            mi_value = mi_fake + mi_loss(out_r["q1"], labels)
        else:
            mi_value = mi_fake
        grads_f["q1"] = -lam[0] * mi_loss_grad(out_f["q1"], c1)
    for l in active:
        if l < 2:
            continue
        q_out = out_f[f"q{l}"]
        hcmi_values[l] = hcmi_loss(l, q_out, asg)
        grads_f[f"q{l}"] = -lam[l - 1] * hcmi_loss_grad(l, q_out, asg)
    disc.backward(grads_f)
    adam_d.step()

    # ---- G/Q step: lower the generator loss, raise the info terms ----
    asg2, gen_in2 = _latent_batch(cfg, state, r_codes, r_noise)
    x_fake2 = gen.forward(gen_in2, train=True)["out"]
    disc.zero_grad()
    out2 = disc.forward(x_fake2, train=True, heads=fake_heads)
    saturating = cfg.g_loss == "saturating"
    gan_for_g = generator_gan_loss(out2["d"], saturating=saturating)
    input_grad = disc.backward(
        {"d": generator_gan_loss_grad(out2["d"], saturating=saturating)}, param_grads=False
    )

    c1_2 = asg2.raw[0][:, 0, :]
    info_grads = {}
    if 1 in active:
        info_grads["q1"] = -lam[0] * mi_loss_grad(out2["q1"], c1_2)
    for l in active:
        if l >= 2:
            info_grads[f"q{l}"] = -lam[l - 1] * hcmi_loss_grad(l, out2[f"q{l}"], asg2)
    if info_grads:
        input_grad = input_grad + disc.backward(info_grads, param_grads=True)

    gen.zero_grad()
    gen.backward({"out": input_grad})
    adam_g.step()
    adam_d.step()

    report = full_objective(
        gan_value, mi_value, hcmi_values, lam, state, gan_term_for_g=gan_for_g
    )
    ctx = {"assignment": asg, "assignment_g": asg2}
    return report, ctx


def _checkpoint(cfg: TrainConfig, gen, disc, iteration: int) -> Checkpoint:
    meta = {
        "arch": cfg.arch,
        "dim_z": cfg.dim_z,
        "noise": cfg.noise,
        "dataset": cfg.dataset,
        "input_scale": cfg.input_scale(),
        "iteration": iteration,
    }
    if cfg.dataset == "sim2d":
        meta["sim2d"] = {
            "n_global": cfg.sim2d.n_global,
            "radius": cfg.sim2d.radius,
            "local_offset": cfg.sim2d.local_offset,
            "noise_std": cfg.sim2d.noise_std,
            "input_scale": cfg.sim2d.input_scale,
        }
    return Checkpoint(tree=cfg.tree, meta=meta, generator=gen, discriminator=disc)


# -- sampling from checkpoints ---------------------------------------------------


def code_grid(tree: TreeSpec) -> CodeAssignment:
    """Every root-to-leaf path once, ordered by flattened leaf index (the
    figure layout: the deepest layer varies fastest)."""
    if tree.leaf_kind != "discrete":
        raise ValueError("code_grid enumerates discrete trees only")
    total = tree.leaf_dim
    raw = [
        np.zeros((total, tree.nodes_at(l), tree.branching[l - 1]))
        for l in range(1, tree.depth + 1)
    ]
    for m in range(total):
        digits = []
        rest = m
        for k in reversed(tree.branching):
            digits.append(rest % k)
            rest //= k
        digits.reverse()
        node = 0
        for l, digit in enumerate(digits, start=1):
            raw[l - 1][m, node, digit] = 1.0
            node = node * tree.branching[l - 1] + digit
    return apply_mask(CodeAssignment(spec=tree, raw=raw))


def sample_outputs(ckpt: Checkpoint, assignment: CodeAssignment, z=None, rng=None) -> np.ndarray:
    """Deterministic generator outputs for masked assignments.

    ``z`` may be one noise vector (shared by the whole batch) or a full
    (batch, dim_z) array; when omitted it is drawn from ``rng``.
    """
    if assignment.spec.branching != ckpt.tree.branching:
        raise ValueError(
            f"assignment tree {assignment.spec.branching} does not match "
            f"checkpoint tree {ckpt.tree.branching}"
        )
    if assignment.flattened_leaf is None:
        assignment = apply_mask(assignment)
    n = assignment.batch_size
    dim_z = ckpt.dim_z
    if z is None:
        if rng is None:
            raise ValueError("need z or rng")
        if ckpt.meta.get("noise", "uniform") == "gaussian":
            z = rng.normal(0.0, 1.0, size=(n, dim_z))
        else:
            z = rng.uniform(-1.0, 1.0, size=(n, dim_z))
    z = np.asarray(z, dtype=np.float32)
    if z.ndim == 1:
        z = np.broadcast_to(z, (n, dim_z)).copy()
    gen_in = np.concatenate([z, assignment.flattened_leaf.astype(np.float32)], axis=1)
    return ckpt.generator.forward(gen_in, train=False)["out"]


def sample_images(ckpt: Checkpoint, assignment_grid: CodeAssignment, z=None, rng=None):
    """Alias of :func:`sample_outputs` for image checkpoints."""
    return sample_outputs(ckpt, assignment_grid, z=z, rng=rng)


def generate_labeled_points(ckpt: Checkpoint, per_category: int, rng) -> tuple:
    """Sample unscaled 2D points for every root category of a sim checkpoint.

    Returns (points (n, 2), global_id (n,), local_id (n,)) where the ids are
    the sampled root selection and layer-2 selection under the active node.
    """
    tree = ckpt.tree
    k1 = tree.branching[0]
    n = per_category * k1
    asg = sample_raw(tree, n, rng=rng)
    roots = np.repeat(np.arange(k1), per_category)
    asg.raw[0][:] = 0.0
    asg.raw[0][np.arange(n), 0, roots] = 1.0
    masked = apply_mask(asg)
    out = sample_outputs(ckpt, masked, rng=rng)
    points = out.astype(np.float64) / float(ckpt.meta.get("input_scale", 1.0))
    if tree.depth >= 2:
        local = np.argmax(masked.raw[1][np.arange(n), roots], axis=1)
    else:
        local = np.zeros(n, dtype=int)
    return points, roots, local
