"""Plain-text run configuration: sections, typed keys, strict validation.

Files use ``[section]`` headers and ``key = value`` lines with ``#``
comments.  Unknown sections or keys are all collected and rejected in one
error; missing keys fall back to their defaults with a logged notice per
key.  Defaults reproduce the 2D-simulation recipe, so a config file only
has to state what differs from it.
"""

from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass

from .curriculum import MODES, VARIANTS
from .data import Sim2DSpec
from .metrics import WEIGHTINGS, SsimParams
from .training import G_LOSSES, NOISE_KINDS, TrainConfig
from .tree import LEAF_KINDS, TreeSpec

log = logging.getLogger("dtlcgan.config")

ENV_SEED = "DTLC_SEED"


class ConfigError(ValueError):
    """Raised with every offending key listed, one per line."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    items = [t for t in (p.strip() for p in text.split(",")) if t]
    return tuple(int(t) for t in items)


def _parse_float_list(text: str) -> tuple:
    items = [t for t in (p.strip() for p in text.split(",")) if t]
    return tuple(float(t) for t in items)


def _choice(options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return t

    return parse


def _path(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default).  A None default marks a key whose
# default is computed after parsing (tree.depth follows tree.k).
SCHEMA = {
    "tree": {
        "k": (_parse_int_list, (10, 2)),
        "depth": (int, None),
        "leaf_kind": (_choice(LEAF_KINDS), "discrete"),
        "supervised_root": (_parse_bool, False),
    },
    "net": {
        "arch": (_choice(("sim_mlp", "mnist_conv")), "sim_mlp"),
        "dim_z": (int, 256),
        "noise": (_choice(NOISE_KINDS), "uniform"),
    },
    "train": {
        "batch_size": (int, 512),
        "iterations": (int, 30_000),
        "lr_d": (float, 1e-4),
        "lr_g": (float, 1e-4),
        "beta1": (float, 0.5),
        "lambda": (_parse_float_list, (1.0,)),
        "seed": (int, 0),
        "g_loss": (_choice(G_LOSSES), "nonsaturating"),
        "checkpoint_interval": (int, 0),
    },
    "curriculum": {
        "mode": (_choice(MODES), "unsupervised"),
        "base": (int, 10_000),
        "variant": (_choice(VARIANTS), "full"),
    },
    "data": {
        "dataset": (_choice(("sim2d", "mnist")), "sim2d"),
        "n_global": (int, 10),
        "radius": (float, 2.0),
        "local_offset": (float, 0.05),
        "noise_std": (float, 0.1),
        "input_scale": (float, 0.25),
        "mnist_images": (_path, ""),
        "mnist_labels": (_path, ""),
        "keep_digits": (_parse_int_list, ()),
    },
    "metrics": {
        "ssim_window": (int, 8),
        "ssim_weighting": (_choice(WEIGHTINGS), "uniform"),
        "data_range": (float, 1.0),
        "diversity_pairs": (int, 2000),
        "coverage_threshold": (float, 0.3),
        "eval_points": (int, 100),
    },
}


@dataclass(frozen=True)
class MetricsSettings:
    ssim: SsimParams
    diversity_pairs: int
    coverage_threshold: float
    eval_points: int


def load_config(path=None) -> dict:
    """Parse and validate a config file into {section: {key: value}}.

    With no path, returns pure defaults.  Every problem found (unknown
    section/key, unparsable or inconsistent value) is reported in a single
    ConfigError; missing keys are defaulted and logged.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if path is not None:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))

    errors = []
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in SCHEMA[section]:
                errors.append(f"unknown key {section}.{key}")

    resolved: dict = {}
    for section, keys in SCHEMA.items():
        resolved[section] = {}
        for key, (parse, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    resolved[section][key] = parse(raw)
                except ValueError as exc:
                    errors.append(f"bad value for {section}.{key}: {exc}")
            else:
                resolved[section][key] = default
                # None marks a computed default (tree.depth), resolved below
                if path is not None and default is not None:
                    log.info("config %s: %s.%s defaulted to %r", path, section, key, default)

    k = resolved["tree"].get("k")
    if resolved["tree"].get("depth") is None:
        resolved["tree"]["depth"] = len(k) if k else 0
    elif k is not None and resolved["tree"]["depth"] != len(k):
        errors.append(
            f"tree.depth = {resolved['tree']['depth']} does not match "
            f"len(tree.k) = {len(k)}"
        )
    lam = resolved["train"].get("lambda")
    if lam is not None and k is not None and len(lam) not in (1, len(k)):
        errors.append(
            f"train.lambda needs 1 or {len(k)} values, got {len(lam)}"
        )
    if errors:
        raise ConfigError("\n".join(errors))
    return resolved


def apply_env_seed(cfg: dict, environ=os.environ) -> dict:
    """Override train.seed from the DTLC_SEED environment variable."""
    if ENV_SEED in environ:
        seed = int(environ[ENV_SEED])
        log.info("seed %d taken from %s (config said %d)", seed, ENV_SEED, cfg["train"]["seed"])
        cfg["train"]["seed"] = seed
    return cfg


def tree_spec(cfg: dict) -> TreeSpec:
    t = cfg["tree"]
    return TreeSpec(
        branching=tuple(t["k"]),
        leaf_kind=t["leaf_kind"],
        supervised_root=t["supervised_root"],
    )


def sim2d_spec(cfg: dict) -> Sim2DSpec:
    d = cfg["data"]
    return Sim2DSpec(
        n_global=d["n_global"],
        radius=d["radius"],
        local_offset=d["local_offset"],
        noise_std=d["noise_std"],
        input_scale=d["input_scale"],
    )


def train_config(cfg: dict) -> TrainConfig:
    tree = tree_spec(cfg)
    t, n, c, d = cfg["train"], cfg["net"], cfg["curriculum"], cfg["data"]
    lam = t["lambda"]
    if len(lam) == 1:
        lam = lam * tree.depth
    interval = t["checkpoint_interval"] or None
    return TrainConfig(
        tree=tree,
        arch=n["arch"],
        dim_z=n["dim_z"],
        noise=n["noise"],
        batch_size=t["batch_size"],
        iterations=t["iterations"],
        lr_d=t["lr_d"],
        lr_g=t["lr_g"],
        beta1=t["beta1"],
        lambdas=lam,
        seed=t["seed"],
        g_loss=t["g_loss"],
        checkpoint_interval=interval,
        curriculum_mode=c["mode"],
        curriculum_base=c["base"],
        curriculum_variant=c["variant"],
        dataset=d["dataset"],
        sim2d=sim2d_spec(cfg),
        mnist_images=d["mnist_images"] or None,
        mnist_labels=d["mnist_labels"] or None,
        keep_digits=tuple(d["keep_digits"]) or None,
    )


def metrics_settings(cfg: dict) -> MetricsSettings:
    m = cfg["metrics"]
    return MetricsSettings(
        ssim=SsimParams(
            window=m["ssim_window"],
            weighting=m["ssim_weighting"],
            data_range=m["data_range"],
        ),
        diversity_pairs=m["diversity_pairs"],
        coverage_threshold=m["coverage_threshold"],
        eval_points=m["eval_points"],
    )
