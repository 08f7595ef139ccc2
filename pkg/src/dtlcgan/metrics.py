"""Evaluation: SSIM, categorical diversity of a generator, and 2D mode scores.

SSIM follows the standard local-window formulation with population
statistics; all arithmetic runs in float64 so identical inputs give exactly
1.0.  Diversity draws pairs that share noise and the code layers above the
probe layer, resampling the probe layer and everything below it.  Mode
coverage compares per-root-category centroids of generated 2D points with
the true circle of cluster means.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import Sim2DSpec, cell_means, global_angles, global_means
from .tree import apply_mask, sample_raw
from .training import sample_outputs

WEIGHTINGS = ("uniform", "gaussian")


@dataclass(frozen=True)
class SsimParams:
    window: int = 8
    weighting: str = "uniform"
    data_range: float = 1.0
    gaussian_sigma: float = 1.5

    def __post_init__(self):
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.data_range <= 0:
            raise ValueError(f"data_range must be positive, got {self.data_range}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")

    @property
    def c1(self) -> float:
        return (0.01 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.data_range) ** 2


def _window_weights(params: SsimParams) -> np.ndarray:
    w = params.window
    if params.weighting == "uniform":
        return np.full((w, w), 1.0 / (w * w))
    ax = np.arange(w) - (w - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * params.gaussian_sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_single(a, b, params: SsimParams) -> float:
    w = params.window
    if a.shape[0] < w or a.shape[1] < w:
        raise ValueError(f"window {w} exceeds image extent {a.shape}")
    weights = _window_weights(params)
    wa = sliding_window_view(a, (w, w))
    wb = sliding_window_view(b, (w, w))

    def wmean(win):
        return np.tensordot(win, weights, axes=([-2, -1], [-2, -1]))

    mu_a, mu_b = wmean(wa), wmean(wb)
    ea2, eb2, eab = wmean(wa * wa), wmean(wb * wb), wmean(wa * wb)
    var_a = ea2 - mu_a * mu_a
    var_b = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def ssim(a, b, params: SsimParams | None = None) -> float:
    """Mean local structural similarity; 1.0 exactly for identical images.

    Accepts (h, w) or (channels, h, w) arrays; channels are averaged.
    """
    params = params or SsimParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return _ssim_single(a, b, params)
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a[c], b[c], params) for c in range(a.shape[0])]))
    raise ValueError(f"expected (h, w) or (channels, h, w), got {a.shape}")


# -- generator diversity -------------------------------------------------------


def inter_category_diversity(
    ckpt,
    layer: int,
    n_pairs: int = 2000,
    rng=None,
    params: SsimParams | None = None,
    threads: int = 1,
) -> float:
    """Mean SSIM over image pairs sharing z and the layers above ``layer``.

    Layers ``layer``..L are drawn independently for the two pair members, so
    a smaller mean means the probed layers change the image more.  ``layer``
    may be depth+1 as a degenerate control: the pairs are then identical and
    the result is exactly 1.0.  ``threads`` bounds parallel SSIM scoring;
    the result does not depend on it (scores are reduced in pair order).
    """
    tree = ckpt.tree
    if not 1 <= layer <= tree.depth + 1:
        raise ValueError(f"layer must be in 1..{tree.depth + 1}, got {layer}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    rng = rng if rng is not None else np.random.default_rng()

    total = 0.0
    done = 0
    while done < n_pairs:
        chunk = min(256, n_pairs - done)
        a = sample_raw(tree, chunk, rng=rng)
        b = sample_raw(tree, chunk, rng=rng)
        for l in range(1, min(layer, tree.depth + 1)):
            b.raw[l - 1][:] = a.raw[l - 1]
        masked_a, masked_b = apply_mask(a), apply_mask(b)
        if ckpt.meta.get("noise", "uniform") == "gaussian":
            z = rng.normal(0.0, 1.0, size=(chunk, ckpt.dim_z))
        else:
            z = rng.uniform(-1.0, 1.0, size=(chunk, ckpt.dim_z))
        img_a = sample_outputs(ckpt, masked_a, z=z)
        img_b = sample_outputs(ckpt, masked_b, z=z)
        if img_a.ndim != 4:
            raise ValueError(
                "checkpoint does not generate images; diversity needs an image architecture"
            )
        pairs = list(zip(img_a, img_b))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scores = list(pool.map(lambda p: ssim(p[0], p[1], params), pairs))
        else:
            scores = [ssim(x, y, params) for x, y in pairs]
        total += sum(scores)
        done += chunk
    return total / n_pairs


# -- 2D mode coverage ----------------------------------------------------------


@dataclass
class CategoryRow:
    category: int
    n_points: int
    centroid: tuple | None
    matched_mode: int | None
    distance: float | None
    covered: bool
    split_consistent: bool | None


@dataclass
class CoverageReport:
    n_modes: int
    threshold: float
    purity: float = 0.0
    rows: list = field(default_factory=list)

    @property
    def n_covered(self) -> int:
        return sum(r.covered for r in self.rows)

    @property
    def n_split_consistent(self) -> int:
        return sum(bool(r.split_consistent) for r in self.rows if r.covered)


def _greedy_match(centroids: dict, means: np.ndarray) -> dict:
    """One-to-one category-to-mode assignment, closest pairs first."""
    pairs = sorted(
        (float(np.linalg.norm(c - means[m])), cat, m)
        for cat, c in centroids.items()
        for m in range(len(means))
    )
    taken_cat, taken_mode, match = set(), set(), {}
    for dist, cat, mode in pairs:
        if cat in taken_cat or mode in taken_mode:
            continue
        match[cat] = (mode, dist)
        taken_cat.add(cat)
        taken_mode.add(mode)
    return match


def mode_coverage(
    points, global_ids, local_ids, spec: Sim2DSpec, threshold: float = 0.3
) -> CoverageReport:
    """Score generated, category-labeled 2D points against the true modes.

    Coverage counts matched categories whose centroid lies within
    ``threshold`` (unscaled units) of its mode; purity is the fraction of all
    points whose nearest true mean is their category's matched mode; split
    consistency asks whether a category's two local sub-centroids separate
    along the tangential (rotation) direction of its mode.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    global_ids = np.asarray(global_ids)
    local_ids = np.asarray(local_ids)
    if not (len(points) == len(global_ids) == len(local_ids)):
        raise ValueError("points, global_ids, and local_ids must align")

    means = global_means(spec)
    angles = global_angles(spec)
    categories = sorted(int(c) for c in np.unique(global_ids)) if len(points) else []
    centroids = {
        c: points[global_ids == c].mean(axis=0) for c in categories if np.any(global_ids == c)
    }
    match = _greedy_match(centroids, means)

    nearest = (
        np.argmin(np.linalg.norm(points[:, None, :] - means[None, :, :], axis=2), axis=1)
        if len(points)
        else np.zeros(0, dtype=int)
    )

    report = CoverageReport(n_modes=spec.n_global, threshold=threshold)
    pure = 0
    for cat in categories:
        sel = global_ids == cat
        n_points = int(sel.sum())
        if cat not in match:
            report.rows.append(CategoryRow(cat, n_points, None, None, None, False, None))
            continue
        mode, dist = match[cat]
        covered = dist <= threshold
        pure += int(np.sum(nearest[sel] == mode))
        split_ok = None
        if covered:
            tangent = np.array([-np.sin(angles[mode]), np.cos(angles[mode])])
            projections = []
            for side in (0, 1):
                sub = points[sel & (local_ids == side)]
                if len(sub):
                    projections.append(float((sub.mean(axis=0) - means[mode]) @ tangent))
            split_ok = len(projections) == 2 and min(projections) < 0 < max(projections)
        report.rows.append(
            CategoryRow(
                cat,
                n_points,
                (float(centroids[cat][0]), float(centroids[cat][1])),
                mode,
                dist,
                covered,
                split_ok,
            )
        )
    report.purity = pure / len(points) if len(points) else 0.0
    return report


# -- report artifacts ----------------------------------------------------------

COVERAGE_HEADER = "category,n_points,centroid_x,centroid_y,matched_mode,distance,covered,split_consistent"


def save_coverage_csv(path, report: CoverageReport):
    with open(path, "w") as fh:
        fh.write(COVERAGE_HEADER + "\n")
        for r in report.rows:
            cx = f"{r.centroid[0]:.6f}" if r.centroid else ""
            cy = f"{r.centroid[1]:.6f}" if r.centroid else ""
            mode = "" if r.matched_mode is None else str(r.matched_mode)
            dist = "" if r.distance is None else f"{r.distance:.6f}"
            split = "" if r.split_consistent is None else str(int(r.split_consistent))
            fh.write(
                f"{r.category},{r.n_points},{cx},{cy},{mode},{dist},{int(r.covered)},{split}\n"
            )
        fh.write(
            f"# covered {report.n_covered}/{report.n_modes} "
            f"purity {report.purity:.4f} split {report.n_split_consistent}\n"
        )


_PALETTE = (
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
    "#46f0f0", "#f032e6", "#bcf60c", "#008080", "#9a6324",
    "#800000", "#808000",
)


def render_scatter_svg(points, global_ids, spec: Sim2DSpec, report: CoverageReport | None = None) -> str:
    """Deterministic SVG scatter: points colored by category, true means as
    crosses, matched centroids as stroked circles."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    global_ids = np.asarray(global_ids)
    size = 480
    span = spec.radius + 3.0 * spec.noise_std + 0.5

    def px(xy):
        return (
            (xy[0] + span) / (2 * span) * size,
            size - (xy[1] + span) / (2 * span) * size,
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for p, g in zip(points, global_ids):
        x, y = px(p)
        color = _PALETTE[int(g) % len(_PALETTE)]
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2" fill="{color}" fill-opacity="0.5"/>')
    for mean in global_means(spec):
        x, y = px(mean)
        parts.append(
            f'<path d="M {x - 6:.2f} {y:.2f} H {x + 6:.2f} M {x:.2f} {y - 6:.2f} V {y + 6:.2f}" '
            'stroke="black" stroke-width="2" fill="none"/>'
        )
    if report is not None:
        for r in report.rows:
            if r.centroid is None:
                continue
            x, y = px(r.centroid)
            color = _PALETTE[r.category % len(_PALETTE)]
            parts.append(
                f'<circle cx="{x:.2f}" cy="{y:.2f}" r="7" fill="none" '
                f'stroke="{color}" stroke-width="2.5"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def save_scatter_svg(path, points, global_ids, spec, report=None):
    with open(path, "w") as fh:
        fh.write(render_scatter_svg(points, global_ids, spec, report))
