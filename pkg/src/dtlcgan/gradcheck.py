"""Central finite-difference verification of every analytic gradient.

All checks run in float64 with h = 1e-4 and report the max relative error
|a - n| / max(|a|, |n|) over the checked entries (both magnitudes below
1e-10 count as zero error).  Three suites: per-layer-kind input and
parameter gradients, per-loss gradients driven through tiny nets, and the
full three-player objective through a small generator/discriminator pair
using the exact backward recipe of the training loop.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .losses import (
    ac_loss,
    ac_loss_grads,
    gan_loss,
    gan_loss_grads,
    generator_gan_loss,
    generator_gan_loss_grad,
    hcmi_loss,
    hcmi_loss_grad,
    mi_loss,
    mi_loss_grad,
)
from .network import Head, NetworkGraph
from .tree import TreeSpec, apply_mask, sample_raw

H = 1e-4
TINY = 1e-10


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    denom = np.maximum(np.abs(a), np.abs(n))
    err = np.where(denom < TINY, 0.0, np.abs(a - n) / np.maximum(denom, TINY))
    return float(err.max()) if err.size else 0.0


def central_diff(scalar_fn, array, h=H, indices=None) -> np.ndarray:
    """d scalar_fn / d array[i] by central differences, perturbing in place.

    ``indices`` restricts to a subset of flat positions (other entries of the
    returned array are left at the analytic value's shape with zeros and must
    be compared at the same subset).
    """
    flat = array.reshape(-1)
    out = np.zeros_like(flat)
    span = range(flat.size) if indices is None else indices
    for i in span:
        keep = flat[i]
        flat[i] = keep + h
        up = scalar_fn()
        flat[i] = keep - h
        down = scalar_fn()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(array.shape)


def _subset(rng, size, cap=12):
    if size <= cap:
        return list(range(size))
    return sorted(int(i) for i in rng.choice(size, size=cap, replace=False))


def _compare_at(analytic, numeric, indices) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)[indices]
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)[indices]
    return relative_error(a, n)


# -- layer suite ---------------------------------------------------------------


def check_layer(name, layer, x, rng, train=True, pre_forward=None) -> list:
    """FD the layer's input gradient and every parameter gradient against a
    random linear functional J = sum(R * forward(x))."""

    def run():
        if pre_forward is not None:
            pre_forward()
        return layer.forward(x, train)

    R = rng.normal(size=run().shape)

    def J():
        return float(np.sum(R * run()))

    J()  # leave the cache matching the unperturbed input
    for p in layer.params():
        p.grad = None
    input_grad = layer.backward(R)

    results = [(f"{name}.input", relative_error(input_grad, central_diff(J, x)))]
    for attr in ("W", "b", "gamma", "beta"):
        p = getattr(layer, attr, None)
        if p is None or not hasattr(p, "data"):
            continue
        idx = _subset(rng, p.data.size)
        results.append((f"{name}.{attr}", _compare_at(p.grad, central_diff(J, p.data, indices=idx), idx)))
    return results


def layer_suite(seed=0) -> list:
    rng = np.random.default_rng(seed)
    f8 = np.float64
    checks = []

    checks += check_layer("dense", L.Dense(5, 4, rng, dtype=f8), rng.normal(size=(3, 5)), rng)
    checks += check_layer(
        "dense_nobias", L.Dense(5, 4, rng, dtype=f8, bias=False), rng.normal(size=(3, 5)), rng
    )
    checks += check_layer(
        "conv", L.Conv2D(2, 3, 4, 2, rng, dtype=f8), rng.normal(size=(2, 2, 7, 7)), rng
    )
    checks += check_layer(
        "convT", L.ConvTranspose2D(3, 2, 4, 2, rng, dtype=f8), rng.normal(size=(2, 3, 4, 4)), rng
    )

    bn2 = L.BatchNorm(6, dtype=f8)
    bn2.gamma.data = rng.uniform(0.5, 1.5, size=6)
    bn2.beta.data = rng.normal(size=6)
    checks += check_layer("batchnorm2d.train", bn2, rng.normal(size=(8, 6)), rng)

    bn4 = L.BatchNorm(3, dtype=f8)
    bn4.gamma.data = rng.uniform(0.5, 1.5, size=3)
    checks += check_layer("batchnorm4d.train", bn4, rng.normal(size=(4, 3, 5, 5)), rng)

    bne = L.BatchNorm(6, dtype=f8)
    bne.set_buffer("running_mean", rng.normal(size=6))
    bne.set_buffer("running_var", rng.uniform(0.5, 2.0, size=6))
    checks += check_layer("batchnorm2d.eval", bne, rng.normal(size=(8, 6)), rng, train=False)

    def away_from_kink(shape):
        x = rng.uniform(0.05, 1.0, size=shape)
        return x * rng.choice([-1.0, 1.0], size=shape)

    checks += check_layer("relu", L.ReLU(), away_from_kink((4, 7)), rng)
    checks += check_layer("lrelu", L.LeakyReLU(0.2), away_from_kink((4, 7)), rng)
    checks += check_layer("sigmoid", L.Sigmoid(), rng.uniform(-2, 2, size=(4, 7)), rng)
    checks += check_layer("tanh", L.Tanh(), rng.uniform(-2, 2, size=(4, 7)), rng)
    checks += check_layer("softmax", L.Softmax(groups=2), rng.normal(size=(3, 6)), rng)

    drop = L.Dropout(0.5)
    checks += check_layer(
        "dropout", drop, rng.normal(size=(5, 8)), rng, pre_forward=lambda: drop.reseed(1234)
    )

    checks += check_layer("reshape", L.Reshape((3, 4)), rng.normal(size=(2, 12)), rng)
    checks += check_layer("flatten", L.Flatten(12), rng.normal(size=(2, 3, 4)), rng)
    return checks


# -- loss suite ----------------------------------------------------------------


def loss_suite(seed=0) -> list:
    rng = np.random.default_rng(seed)
    checks = []

    # adversarial terms: the sigmoid outputs are unconstrained in (0, 1)
    d_real = rng.uniform(0.1, 0.9, size=(6, 1))
    d_fake = rng.uniform(0.1, 0.9, size=(6, 1))
    a_real, a_fake = gan_loss_grads(d_real, d_fake)
    checks.append(
        ("gan.d_real", relative_error(a_real, central_diff(lambda: gan_loss(d_real, d_fake), d_real)))
    )
    checks.append(
        ("gan.d_fake", relative_error(a_fake, central_diff(lambda: gan_loss(d_real, d_fake), d_fake)))
    )
    for saturating, tag in ((False, "nonsat"), (True, "sat")):
        analytic = generator_gan_loss_grad(d_fake, saturating=saturating)
        numeric = central_diff(lambda: generator_gan_loss(d_fake, saturating=saturating), d_fake)
        checks.append((f"gan.generator.{tag}", relative_error(analytic, numeric)))

    # information terms, driven through a grouped softmax so the FD points
    # stay on the probability simplex
    def through_softmax(name, groups, logits, loss_fn, grad_fn):
        sm = L.Softmax(groups=groups)

        def J():
            return float(loss_fn(sm.forward(logits, True)))

        J()
        analytic = sm.backward(grad_fn(sm.forward(logits, True)))
        checks.append((name, relative_error(analytic, central_diff(J, logits))))

    c1 = np.zeros((6, 3))
    c1[np.arange(6), rng.integers(3, size=6)] = 1.0
    through_softmax(
        "mi.logits",
        1,
        rng.normal(size=(6, 3)),
        lambda q: mi_loss(q, c1),
        lambda q: mi_loss_grad(q, c1),
    )

    # auxiliary-classifier term: fake and real halves through separate nets
    labels = rng.integers(3, size=6)
    logits_f = rng.normal(size=(6, 3))
    logits_r = rng.normal(size=(6, 3))
    sm_f, sm_r = L.Softmax(groups=1), L.Softmax(groups=1)

    def J_ac():
        return ac_loss(sm_f.forward(logits_f, True), c1, sm_r.forward(logits_r, True), labels)

    J_ac()
    g_fake, g_real = ac_loss_grads(sm_f.forward(logits_f, True), c1, sm_r.forward(logits_r, True), labels)
    checks.append(("ac.fake_logits", relative_error(sm_f.backward(g_fake), central_diff(J_ac, logits_f))))
    checks.append(("ac.real_logits", relative_error(sm_r.backward(g_real), central_diff(J_ac, logits_r))))

    # hierarchical term, discrete: only the on-path node may receive gradient
    tree = TreeSpec(branching=(2, 2))
    asg = apply_mask(sample_raw(tree, 6, rng=rng))
    through_softmax(
        "hcmi.discrete.logits",
        2,
        rng.normal(size=(6, 4)),
        lambda q: hcmi_loss(2, q, asg),
        lambda q: hcmi_loss_grad(2, q, asg),
    )

    # hierarchical term, continuous leaf: raw mean predictions, unconstrained
    tree_c = TreeSpec(branching=(2, 2), leaf_kind="continuous")
    asg_c = apply_mask(sample_raw(tree_c, 6, rng=rng))
    mu = rng.normal(size=(6, 4))
    analytic = hcmi_loss_grad(2, mu, asg_c)
    numeric = central_diff(lambda: hcmi_loss(2, mu, asg_c), mu)
    checks.append(("hcmi.continuous.mu", relative_error(analytic, numeric)))
    return checks


# -- composite objective through small nets -------------------------------------


def _tiny_players(rng, tree, dim_z):
    # init_std is cranked up so every pre-activation sits O(1) away from the
    # ReLU kinks; h = 1e-4 steps must not flip activation patterns
    f8 = np.float64
    std = 0.6
    gen = NetworkGraph(
        [
            L.Dense(dim_z + tree.leaf_dim, 12, rng, dtype=f8, init_std=std),
            L.ReLU(),
            L.Dense(12, 2, rng, dtype=f8, init_std=std),
        ],
        name="generator",
        dtype=f8,
    )
    heads = {
        "d": Head([L.Dense(10, 1, rng, dtype=f8, init_std=std), L.Sigmoid()]),
        "qh": Head([L.Dense(10, 8, rng, dtype=f8, init_std=std), L.ReLU()]),
        "q1": Head(
            [L.Dense(8, tree.branching[0], rng, dtype=f8, init_std=std), L.Softmax(groups=1)],
            parent="qh",
        ),
        "q2": Head(
            [
                L.Dense(8, tree.nodes_at(2) * tree.branching[1], rng, dtype=f8, init_std=std),
                L.Softmax(groups=tree.nodes_at(2)),
            ],
            parent="qh",
        ),
    }
    disc = NetworkGraph(
        [L.Dense(2, 10, rng, dtype=f8, init_std=std), L.ReLU()], heads, name="discriminator", dtype=f8
    )
    return gen, disc


def composite_suite(seed=0) -> list:
    """FD the full minimax objective (adversarial minus weighted info terms)
    against the exact backward recipe the trainer uses."""
    rng = np.random.default_rng(seed)
    tree = TreeSpec(branching=(2, 2))
    dim_z = 4
    batch = 6
    lam = (1.0, 0.5)
    gen, disc = _tiny_players(rng, tree, dim_z)

    asg = apply_mask(sample_raw(tree, batch, rng=rng))
    c1 = asg.raw[0][:, 0, :]
    z = rng.normal(size=(batch, dim_z))
    gen_in = np.concatenate([z, asg.flattened_leaf], axis=1)
    x_real = rng.normal(size=(batch, 2))
    heads = ["d", "q1", "q2"]

    def info_terms(out):
        return lam[0] * mi_loss(out["q1"], c1) + lam[1] * hcmi_loss(2, out["q2"], asg)

    def info_grads(out):
        return {
            "q1": -lam[0] * mi_loss_grad(out["q1"], c1),
            "q2": -lam[1] * hcmi_loss_grad(2, out["q2"], asg),
        }

    def g_objective():
        out = disc.forward(gen.forward(gen_in, True)["out"], True, heads=heads)
        return generator_gan_loss(out["d"]) - info_terms(out)

    # analytic d objective / d theta_G via the two-pass recipe
    out = disc.forward(gen.forward(gen_in, True)["out"], True, heads=heads)
    input_grad = disc.backward({"d": generator_gan_loss_grad(out["d"])}, param_grads=False)
    input_grad = input_grad + disc.backward(info_grads(out), param_grads=False)
    gen.zero_grad()
    gen.backward({"out": input_grad})

    checks = []
    worst = 0.0
    for p in gen.parameters():
        idx = _subset(rng, p.data.size, cap=6)
        worst = max(worst, _compare_at(p.grad, central_diff(g_objective, p.data, indices=idx), idx))
    checks.append(("composite.generator", worst))

    x_fake = gen.forward(gen_in, True)["out"]

    def d_objective():
        out_r = disc.forward(x_real, True, heads=["d"])
        gr = float(np.mean(np.log(np.clip(out_r["d"], 1e-7, 1 - 1e-7))))
        out_f = disc.forward(x_fake, True, heads=heads)
        gf = float(np.mean(np.log(np.clip(1.0 - out_f["d"], 1e-7, 1 - 1e-7))))
        return -(gr + gf) - info_terms(out_f)

    # analytic d objective / d theta_DQ: real pass first, fake pass second
    disc.zero_grad()
    out_r = disc.forward(x_real, True, heads=["d"])
    g_real, _ = gan_loss_grads(out_r["d"], np.full_like(out_r["d"], 0.5))
    disc.backward({"d": -g_real})
    out_f = disc.forward(x_fake, True, heads=heads)
    _, g_fake = gan_loss_grads(np.full_like(out_f["d"], 0.5), out_f["d"])
    grads = info_grads(out_f)
    grads["d"] = -g_fake
    disc.backward(grads)

    analytic = {p.name: None if p.grad is None else p.grad.copy() for p in disc.parameters()}
    worst = 0.0
    for p in disc.parameters():
        idx = _subset(rng, p.data.size, cap=6)
        worst = max(worst, _compare_at(analytic[p.name], central_diff(d_objective, p.data, indices=idx), idx))
    checks.append(("composite.discriminator", worst))

    # the info terms alone, as routed into the posterior heads during the
    # generator update (second backward pass, param_grads=True)
    def info_objective():
        return -info_terms(disc.forward(x_fake, True, heads=heads))

    disc.zero_grad()
    out_f = disc.forward(x_fake, True, heads=heads)
    disc.backward(info_grads(out_f), param_grads=True)
    worst = 0.0
    for p in disc.parameters():
        if p.grad is None:  # the adversarial head takes no info gradient
            continue
        idx = _subset(rng, p.data.size, cap=6)
        worst = max(worst, _compare_at(p.grad, central_diff(info_objective, p.data, indices=idx), idx))
    checks.append(("composite.info_to_posteriors", worst))
    return checks


def arch_suite(arch: str, seed=0, entries_per_tensor=2) -> list:
    """FD both players' objectives through a real architecture build.

    Uses batch 8, a [2, 2] tree, and float64 graphs.  Unlike the single-layer
    checks, inputs here cannot be steered away from ReLU kinks (batchnorm
    zero-centers every pre-activation), so the step is shrunk to 1e-6: the
    error a kink crossing injects scales linearly with h while the float64
    roundoff floor stays far below the gradient magnitudes.  The batch is
    also kept well above 2 because batchnorm statistics over tiny batches
    are too sharply curved for finite differences.
    """
    from .architectures import build_graphs, data_shape

    h = 1e-6
    rng = np.random.default_rng(seed)
    tree = TreeSpec(branching=(2, 2))
    dim_z = 8
    batch = 8
    lam = (1.0, 1.0)
    gen, disc = build_graphs(arch, tree, dim_z, rng, dtype=np.float64)
    for p in gen.parameters() + disc.parameters():
        if p.data.ndim >= 2:
            p.data = p.data * 10.0

    asg = apply_mask(sample_raw(tree, batch, rng=rng))
    c1 = asg.raw[0][:, 0, :]
    z = rng.uniform(-1.0, 1.0, size=(batch, dim_z))
    gen_in = np.concatenate([z, asg.flattened_leaf], axis=1)
    x_real = rng.uniform(0.0, 1.0, size=(batch,) + data_shape(arch))
    heads = ["d", "q1", "q2"]

    def info_terms(out):
        return lam[0] * mi_loss(out["q1"], c1) + lam[1] * hcmi_loss(2, out["q2"], asg)

    def info_grads(out):
        return {
            "q1": -lam[0] * mi_loss_grad(out["q1"], c1),
            "q2": -lam[1] * hcmi_loss_grad(2, out["q2"], asg),
        }

    def g_objective():
        out = disc.forward(gen.forward(gen_in, True)["out"], True, heads=heads)
        return generator_gan_loss(out["d"]) - info_terms(out)

    out = disc.forward(gen.forward(gen_in, True)["out"], True, heads=heads)
    input_grad = disc.backward({"d": generator_gan_loss_grad(out["d"])}, param_grads=False)
    input_grad = input_grad + disc.backward(info_grads(out), param_grads=False)
    gen.zero_grad()
    gen.backward({"out": input_grad})

    checks = []
    worst = 0.0
    for p in gen.parameters():
        idx = _subset(rng, p.data.size, cap=entries_per_tensor)
        worst = max(worst, _compare_at(p.grad, central_diff(g_objective, p.data, h=h, indices=idx), idx))
    checks.append((f"{arch}.generator", worst))

    x_fake = gen.forward(gen_in, True)["out"]

    def d_objective():
        out_r = disc.forward(x_real, True, heads=["d"])
        gr = float(np.mean(np.log(np.clip(out_r["d"], 1e-7, 1 - 1e-7))))
        out_f = disc.forward(x_fake, True, heads=heads)
        gf = float(np.mean(np.log(np.clip(1.0 - out_f["d"], 1e-7, 1 - 1e-7))))
        return -(gr + gf) - info_terms(out_f)

    disc.zero_grad()
    out_r = disc.forward(x_real, True, heads=["d"])
    g_real, _ = gan_loss_grads(out_r["d"], np.full_like(out_r["d"], 0.5))
    disc.backward({"d": -g_real})
    out_f = disc.forward(x_fake, True, heads=heads)
    _, g_fake = gan_loss_grads(np.full_like(out_f["d"], 0.5), out_f["d"])
    grads = info_grads(out_f)
    grads["d"] = -g_fake
    disc.backward(grads)

    analytic = {p.name: None if p.grad is None else p.grad.copy() for p in disc.parameters()}
    worst = 0.0
    for p in disc.parameters():
        idx = _subset(rng, p.data.size, cap=entries_per_tensor)
        worst = max(worst, _compare_at(analytic[p.name], central_diff(d_objective, p.data, h=h, indices=idx), idx))
    checks.append((f"{arch}.discriminator", worst))
    return checks


def run_all(seed=0) -> list:
    """Every check in one list of (name, max relative error) rows."""
    return layer_suite(seed) + loss_suite(seed) + composite_suite(seed)
