"""Command-line entry point binding every module.

Subcommands: ``gen-data`` (simulated 2D dataset), ``train`` (config-driven
run), ``sample`` (images or labeled points from a checkpoint), ``eval``
(diversity / mode coverage), ``retrieve`` (code index build and query), and
``grad-check`` (finite-difference self-verification).  All commands are
deterministic for fixed seeds, and exit 0 only when every requested
artifact was written.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import (
    ConfigError,
    apply_env_seed,
    load_config,
    sim2d_spec,
    train_config,
)
from .data import (
    IdxFormatError,
    Sim2DSpec,
    load_points_csv,
    read_idx_images,
    sample_sim2d,
    save_points_csv,
    write_pgm,
)
from .gradcheck import arch_suite, run_all
from .metrics import (
    inter_category_diversity,
    mode_coverage,
    save_coverage_csv,
    save_scatter_svg,
)
from .retrieval import (
    build_index,
    load_index_csv,
    predict_codes,
    retrieve,
    save_index_csv,
    save_results_csv,
)
from .training import (
    TrainingDiverged,
    code_grid,
    generate_labeled_points,
    sample_outputs,
    train,
)

FD_LIMIT = 1e-4


class CommandError(ValueError):
    """A command cannot proceed; the message is shown to the user."""


def cmd_gen_data(args) -> int:
    cfg = load_config(args.spec)
    spec = sim2d_spec(cfg)
    rng = np.random.default_rng(args.seed)
    points, gids, lids = sample_sim2d(spec, args.n, rng)
    save_points_csv(args.out, points, gids, lids)
    counts = Counter(zip(gids.tolist(), lids.tolist()))
    cells = " ".join(
        f"{g}/{l}={counts.get((g, l), 0)}" for g in range(spec.n_global) for l in (0, 1)
    )
    print(f"wrote {args.out} ({args.n} rows); cell counts: {cells}")
    return 0


def cmd_train(args) -> int:
    cfg_dict = apply_env_seed(load_config(args.config))
    cfg = train_config(cfg_dict)
    final, _ = train(cfg, out_dir=args.out_dir)
    print(f"trained {cfg.iterations} iterations; final checkpoint: {Path(args.out_dir) / 'final.ckpt'}")
    return 0


def _noise_rows(meta: dict, n: int, dim_z: int, rng) -> np.ndarray:
    if meta.get("noise", "uniform") == "gaussian":
        return rng.normal(0.0, 1.0, size=(n, dim_z))
    return rng.uniform(-1.0, 1.0, size=(n, dim_z))


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    if ckpt.meta.get("arch") == "sim_mlp":
        points, gids, lids = generate_labeled_points(ckpt, per_category=args.grid, rng=rng)
        csv_path, svg_path = out_dir / "samples.csv", out_dir / "samples.svg"
        save_points_csv(csv_path, points, gids, lids)
        spec = (
            Sim2DSpec(**ckpt.meta["sim2d"])
            if "sim2d" in ckpt.meta
            else Sim2DSpec(n_global=ckpt.tree.branching[0])
        )
        save_scatter_svg(svg_path, points, gids, spec)
        print(f"wrote {csv_path} and {svg_path}")
        return 0

    grid = code_grid(ckpt.tree)
    cols = ckpt.tree.leaf_dim
    rows = []
    for _ in range(args.grid):
        z = _noise_rows(ckpt.meta, 1, ckpt.dim_z, rng)[0]  # one z shared across the row
        images = sample_outputs(ckpt, grid, z=z)
        rows.append(np.concatenate([images[j, 0] for j in range(cols)], axis=1))
    pgm_path = out_dir / "samples.pgm"
    write_pgm(pgm_path, np.concatenate(rows, axis=0))
    print(f"wrote {pgm_path} ({args.grid} noise rows x {cols} leaf categories)")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.metric == "diversity":
        value = inter_category_diversity(
            ckpt, layer=args.layer, n_pairs=args.pairs, rng=rng, threads=args.threads
        )
        path = out_dir / "diversity.csv"
        with open(path, "w") as fh:
            fh.write("metric,layer,pairs,value\n")
            fh.write(f"diversity,{args.layer},{args.pairs},{value:.9f}\n")
        print(f"diversity at layer {args.layer}: {value:.6f} (wrote {path})")
        return 0

    if "sim2d" not in ckpt.meta:
        raise CommandError("coverage needs a checkpoint trained on the 2D simulation")
    spec = Sim2DSpec(**ckpt.meta["sim2d"])
    points, gids, lids = generate_labeled_points(ckpt, per_category=args.points, rng=rng)
    report = mode_coverage(points, gids, lids, spec, threshold=args.threshold)
    csv_path, svg_path = out_dir / "coverage.csv", out_dir / "coverage.svg"
    save_coverage_csv(csv_path, report)
    save_scatter_svg(svg_path, points, gids, spec, report)
    print(
        f"covered {report.n_covered}/{report.n_modes} purity {report.purity:.4f} "
        f"split {report.n_split_consistent} (wrote {csv_path} and {svg_path})"
    )
    return 0


def _load_inputs(ckpt, path) -> np.ndarray:
    """Read retrieval inputs in the checkpoint's native data format."""
    if ckpt.meta.get("arch") == "sim_mlp":
        points, _, _ = load_points_csv(path)
        return points
    images = read_idx_images(path)
    return images.astype(np.float32)[:, None] / 255.0


def cmd_retrieve(args) -> int:
    if bool(args.data) == bool(args.query):
        raise CommandError("pass exactly one of --data (build the index) or --query (search it)")
    ckpt = load_checkpoint(args.checkpoint)

    if args.data:
        inputs = _load_inputs(ckpt, args.data)
        index = build_index(ckpt, inputs, hard=args.hard)
        save_index_csv(args.index, index)
        print(f"indexed {len(index)} items -> {args.index}")
        return 0

    index = load_index_csv(args.index)
    inputs = _load_inputs(ckpt, args.query)
    if len(inputs) != 1:
        raise CommandError(f"query file must contain exactly one item, got {len(inputs)}")
    depth = args.depth if args.depth is not None else index.depth
    codes = predict_codes(ckpt, inputs[0], depth=depth, hard=args.hard)
    results = retrieve(codes, index, depth=depth, top_n=args.top)
    for rank, item, dist in results:
        print(f"{rank:4d}  id {item:8d}  distance {dist:.6f}")
    if args.out:
        save_results_csv(args.out, results)
        print(f"wrote {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    rows = list(run_all(args.seed))
    archs = ("sim_mlp", "mnist_conv") if args.arch == "all" else (args.arch,)
    for arch in archs:
        rows += arch_suite(arch, seed=args.seed)
    worst = max(err for _, err in rows)
    for name, err in rows:
        print(f"{name:34s} {err:.3e}")
    ok = worst < FD_LIMIT
    print(f"max relative error {worst:.3e} ({'OK' if ok else 'FAIL'} at {FD_LIMIT:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtlcgan",
        description="Tree-structured latent GAN: train, sample, evaluate, retrieve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a simulated 2D dataset as CSV")
    p.add_argument("--spec", default=None, help="config file whose [data] section shapes the distribution")
    p.add_argument("--n", type=int, default=10_000, help="number of points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True, help="directory for metrics.csv and checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a trained generator over the code grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", type=int, default=10, help="noise rows (images) or points per category (2D)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None, help="defaults to the checkpoint's directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=("diversity", "coverage"), required=True)
    p.add_argument("--layer", type=int, default=1, help="diversity probe layer")
    p.add_argument("--pairs", type=int, default=2000, help="diversity pair count")
    p.add_argument("--points", type=int, default=100, help="coverage points per category")
    p.add_argument("--threshold", type=float, default=0.3, help="coverage distance threshold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="parallel metric evaluation bound")
    p.add_argument("--out-dir", default=None, help="defaults to the checkpoint's directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="build or query a hierarchical code index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True, help="index CSV (written with --data, read with --query)")
    p.add_argument("--data", default=None, help="dataset to index (points CSV or IDX images)")
    p.add_argument("--query", default=None, help="single-item query file")
    p.add_argument("--depth", type=int, default=None, help="code layers to compare (default: all)")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--hard", action="store_true", help="snap codes to one-hot before gating")
    p.add_argument("--out", default=None, help="results CSV path")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("grad-check", help="finite-difference verification of all gradients")
    p.add_argument("--arch", choices=("sim_mlp", "mnist_conv", "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error:\n{err}", file=sys.stderr)
        return 2
    except (CommandError, CheckpointError, IdxFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except TrainingDiverged as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
