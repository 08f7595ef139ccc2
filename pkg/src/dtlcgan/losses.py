"""Training objectives: adversarial loss, information regularizers, and the
gated combination the two players optimize.

Every value function has a ``*_grad`` companion returning the gradient with
respect to its probability (or Gaussian-mean) inputs, shaped like those
inputs, so the trainer can feed them straight into graph.backward.
Probabilities are clamped to [1e-7, 1 - 1e-7] before any log; gradients are
zeroed where the clamp is active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import CodeAssignment, active_nodes

CLAMP = 1e-7
_LOG_2PI = float(np.log(2.0 * np.pi))


def _clip(p):
    return np.clip(p, CLAMP, 1.0 - CLAMP)


def _active(p):
    """1 where the clamp passes p through, 0 where it saturates."""
    return ((p > CLAMP) & (p < 1.0 - CLAMP)).astype(np.float64)


def _flat(d):
    d = np.asarray(d)
    if d.ndim == 2 and d.shape[1] == 1:
        d = d[:, 0]
    if d.ndim != 1:
        raise ValueError(f"discriminator outputs must be (batch,) or (batch, 1), got {d.shape}")
    if d.size == 0:
        raise ValueError("empty batch")
    return d


# -- adversarial terms -------------------------------------------------------


def gan_loss(d_real, d_fake) -> float:
    """E[log D(x)] + E[log(1 - D(G(z)))]; the discriminator maximizes this."""
    d_real, d_fake = _flat(d_real), _flat(d_fake)
    return float(np.mean(np.log(_clip(d_real))) + np.mean(np.log(_clip(1.0 - d_fake))))


def gan_loss_grads(d_real, d_fake):
    r, f = _flat(d_real), _flat(d_fake)
    g_real = _active(r) / (len(r) * _clip(r))
    g_fake = -_active(1.0 - f) / (len(f) * _clip(1.0 - f))
    return g_real.reshape(np.shape(d_real)), g_fake.reshape(np.shape(d_fake))


def generator_gan_loss(d_fake, saturating: bool = False) -> float:
    """The generator's adversarial term, minimized.

    Default is the non-saturating form -E[log D(G(z))]; ``saturating``
    restores the min-max form E[log(1 - D(G(z)))].
    """
    f = _flat(d_fake)
    if saturating:
        return float(np.mean(np.log(_clip(1.0 - f))))
    return float(-np.mean(np.log(_clip(f))))


def generator_gan_loss_grad(d_fake, saturating: bool = False):
    f = _flat(d_fake)
    if saturating:
        g = -_active(1.0 - f) / (len(f) * _clip(1.0 - f))
    else:
        g = -_active(f) / (len(f) * _clip(f))
    return g.reshape(np.shape(d_fake))


# -- information terms -------------------------------------------------------


def _check_rows(q, name):
    q = np.asarray(q)
    if q.ndim != 2 or q.size == 0:
        raise ValueError(f"{name} must be a non-empty (batch, k) array, got {q.shape}")
    if np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-5:
        raise ValueError(f"{name} rows must sum to 1 within 1e-5")
    return q


def _as_one_hot(labels, k):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels.astype(int)] = 1.0
    return out


def mi_loss(q1_output, c1) -> float:
    """E[log Q_1(c_1 | x)]: batch-mean log-probability at the sampled
    category (the conditional-entropy constant is dropped)."""
    q = _check_rows(q1_output, "q1_output")
    c = _as_one_hot(c1, q.shape[1])
    picked = (q * c).sum(axis=1)
    return float(np.mean(np.log(_clip(picked))))


def mi_loss_grad(q1_output, c1):
    q = _check_rows(q1_output, "q1_output")
    c = _as_one_hot(c1, q.shape[1])
    picked = (q * c).sum(axis=1)
    per = _active(picked) / (len(picked) * _clip(picked))
    return (c * per[:, None]).reshape(np.shape(q1_output))


def ac_loss(q1_fake, c1_fake, q1_real, c1_real_labels) -> float:
    """Auxiliary-classifier term: the MI term on generated samples plus the
    same log-likelihood on real samples with their dataset labels."""
    if c1_real_labels is None:
        raise ValueError("ac_loss requires real labels (weakly supervised mode)")
    return mi_loss(q1_fake, c1_fake) + mi_loss(q1_real, c1_real_labels)


def ac_loss_grads(q1_fake, c1_fake, q1_real, c1_real_labels):
    if c1_real_labels is None:
        raise ValueError("ac_loss requires real labels (weakly supervised mode)")
    return mi_loss_grad(q1_fake, c1_fake), mi_loss_grad(q1_real, c1_real_labels)


def _node_view(q_heads, n_nodes, k):
    q = np.asarray(q_heads)
    if q.ndim == 2:
        q = q.reshape(q.shape[0], n_nodes, k)
    if q.shape[1:] != (n_nodes, k):
        raise ValueError(f"q_heads shape {np.shape(q_heads)} incompatible with ({n_nodes}, {k})")
    return q


def hcmi_loss(layer: int, q_heads, assignment: CodeAssignment) -> float:
    """E[log Q_l^m(c | x, p)] where only each sample's on-path node m
    contributes; off-path nodes contribute zero.

    ``q_heads`` holds every node's output for the layer: categorical
    probabilities for discrete layers, Gaussian means (unit variance) for a
    continuous leaf layer.
    """
    value, _ = _hcmi_core(layer, q_heads, assignment)
    return value


def hcmi_loss_grad(layer: int, q_heads, assignment: CodeAssignment):
    _, grad = _hcmi_core(layer, q_heads, assignment)
    return grad.reshape(np.shape(q_heads))


def _hcmi_core(layer, q_heads, assignment):
    spec = assignment.spec
    if layer < 2:
        raise ValueError("hcmi_loss applies to layers 2..L; use mi_loss for the root")
    n_nodes = spec.nodes_at(layer)
    k = spec.branching[layer - 1]
    q = _node_view(q_heads, n_nodes, k)
    b = q.shape[0]
    nodes = active_nodes(assignment, layer)
    codes = assignment.raw[layer - 1][np.arange(b), nodes]
    grad = np.zeros(q.shape, dtype=np.float64)

    if spec.layer_is_discrete(layer):
        if not np.all(np.isin(codes, (0.0, 1.0))) or not np.all(codes.sum(axis=1) == 1.0):
            raise ValueError(
                f"layer {layer} codes are not one-hot; the curriculum has not "
                "activated this layer yet (gate before calling)"
            )
        sel = np.argmax(codes, axis=1)
        picked = q[np.arange(b), nodes, sel]
        value = float(np.mean(np.log(_clip(picked))))
        grad[np.arange(b), nodes, sel] = _active(picked) / (b * _clip(picked))
    else:
        mu = q[np.arange(b), nodes]
        sq = codes - mu
        value = float(np.mean(-0.5 * (sq**2).sum(axis=1) - 0.5 * k * _LOG_2PI))
        grad[np.arange(b), nodes] = sq / b
    return value, grad


# -- combined objective ------------------------------------------------------


@dataclass
class LossReport:
    """Per-iteration loss summary: raw terms plus the two players' totals."""

    gan_term: float
    mi_or_ac: float | None
    hcmi: dict
    weighted_total_for_g: float
    weighted_total_for_d: float
    lambdas: tuple

    def term(self, layer: int) -> float:
        if layer == 1:
            return 0.0 if self.mi_or_ac is None else self.mi_or_ac
        return self.hcmi.get(layer, 0.0)


def full_objective(
    gan_term: float,
    mi_or_ac: float | None,
    hcmi_terms: dict,
    lambdas,
    state,
    gan_term_for_g: float | None = None,
) -> LossReport:
    """Combine the adversarial and information terms under curriculum gating.

    Terms for layers outside ``state.active_regularizer_layers`` are excluded
    entirely.  The G total is the quantity the generator (and Q) minimize;
    the D total is the quantity the discriminator/Q step minimizes (the
    adversarial part enters negated because D maximizes it).
    """
    lambdas = tuple(float(v) for v in lambdas)
    if any(v < 0 for v in lambdas):
        raise ValueError(f"lambda weights must be nonnegative, got {lambdas}")
    active = set(state.active_regularizer_layers)
    info_sum = 0.0
    hcmi_kept = {}
    mi_kept = None
    if 1 in active and mi_or_ac is not None:
        mi_kept = float(mi_or_ac)
        info_sum += lambdas[0] * mi_kept
    for layer, value in sorted(hcmi_terms.items()):
        if layer in active:
            hcmi_kept[layer] = float(value)
            info_sum += lambdas[layer - 1] * float(value)
    gan_g = gan_term if gan_term_for_g is None else gan_term_for_g
    report = LossReport(
        gan_term=float(gan_term),
        mi_or_ac=mi_kept,
        hcmi=hcmi_kept,
        weighted_total_for_g=float(gan_g) - info_sum,
        weighted_total_for_d=-float(gan_term) - info_sum,
        lambdas=lambdas,
    )
    values = [report.gan_term, report.weighted_total_for_g, report.weighted_total_for_d]
    values += list(report.hcmi.values())
    if report.mi_or_ac is not None:
        values.append(report.mi_or_ac)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite loss report: {report}")
    return report


def csv_header(depth: int) -> str:
    cols = ["iteration", "gan", "mi_or_ac"]
    cols += [f"hcmi_{l}" for l in range(2, depth + 1)]
    cols += ["g_total", "d_total"]
    return ",".join(cols)


def csv_row(iteration: int, report: LossReport, depth: int) -> str:
    vals = [report.gan_term, report.mi_or_ac if report.mi_or_ac is not None else 0.0]
    vals += [report.hcmi.get(l, 0.0) for l in range(2, depth + 1)]
    vals += [report.weighted_total_for_g, report.weighted_total_for_d]
    return ",".join([str(iteration)] + [f"{v:.6f}" for v in vals])
