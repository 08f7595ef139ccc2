"""Array-in, array-out wrapper exposing the scikit-learn estimator protocol.

``DTLCGAN`` trains the adversarial model on a raw numpy dataset (``fit``),
maps inputs to their gated per-layer code vectors (``transform``), assigns
root categories (``predict``), and draws new data (``sample``).  All
constructor arguments are stored verbatim so ``get_params`` / ``clone``
behave the way scikit-learn expects.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .data import Sim2DSpec
from .retrieval import predict_codes
from .training import TrainConfig, sample_outputs, train
from .tree import TreeSpec, apply_mask, sample_raw

IMAGE_SHAPE = (1, 28, 28)


def _validate_inputs(X) -> np.ndarray:
    """Accept (n, 2) point arrays or (n, 1, 28, 28) image arrays."""
    X = check_array(X, allow_nd=True, dtype=np.float32)
    if X.ndim == 2:
        return X
    if X.ndim == 4 and X.shape[1:] == IMAGE_SHAPE:
        return X
    raise ValueError(
        f"expected a 2D feature array or images of shape {IMAGE_SHAPE}, got {X.shape}"
    )


class DTLCGAN(TransformerMixin, BaseEstimator):
    """Generative model whose latent code is a decision tree.

    Parameters mirror the trainer configuration; ``arch`` is inferred from
    the training data when left as None (2D features use the MLP pair,
    images the convolutional pair).  ``lambda_info`` is the information-term
    weight, either one float for every layer or one per layer.
    """

    def __init__(
        self,
        branching=(10, 2),
        leaf_kind="discrete",
        supervised_root=False,
        arch=None,
        dim_z=256,
        noise="uniform",
        batch_size=512,
        iterations=30_000,
        lr_d=1e-4,
        lr_g=1e-4,
        beta1=0.5,
        lambda_info=1.0,
        curriculum_mode="unsupervised",
        curriculum_base=10_000,
        curriculum_variant="full",
        g_loss="nonsaturating",
        input_scale=1.0,
        random_state=0,
    ):
        self.branching = branching
        self.leaf_kind = leaf_kind
        self.supervised_root = supervised_root
        self.arch = arch
        self.dim_z = dim_z
        self.noise = noise
        self.batch_size = batch_size
        self.iterations = iterations
        self.lr_d = lr_d
        self.lr_g = lr_g
        self.beta1 = beta1
        self.lambda_info = lambda_info
        self.curriculum_mode = curriculum_mode
        self.curriculum_base = curriculum_base
        self.curriculum_variant = curriculum_variant
        self.g_loss = g_loss
        self.input_scale = input_scale
        self.random_state = random_state

    def _config(self, X, y) -> TrainConfig:
        tree = TreeSpec(
            branching=tuple(self.branching),
            leaf_kind=self.leaf_kind,
            supervised_root=self.supervised_root,
        )
        lam = self.lambda_info
        if np.isscalar(lam):
            lam = (float(lam),) * tree.depth
        arch = self.arch or ("sim_mlp" if X.ndim == 2 else "mnist_conv")
        return TrainConfig(
            tree=tree,
            arch=arch,
            dim_z=self.dim_z,
            noise=self.noise,
            batch_size=self.batch_size,
            iterations=self.iterations,
            lr_d=self.lr_d,
            lr_g=self.lr_g,
            beta1=self.beta1,
            lambdas=tuple(lam),
            seed=0 if self.random_state is None else int(self.random_state),
            dataset="array",
            curriculum_mode=self.curriculum_mode,
            curriculum_base=self.curriculum_base,
            curriculum_variant=self.curriculum_variant,
            g_loss=self.g_loss,
            sim2d=Sim2DSpec(input_scale=self.input_scale),
            array_data=X,
            array_labels=y,
        )

    def fit(self, X, y=None):
        """Train on raw arrays; ``y`` supplies root labels when the root is
        supervised, and is otherwise ignored."""
        X = _validate_inputs(X)
        if y is not None:
            y = column_or_1d(y).astype(np.int64)
            if len(y) != len(X):
                raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
        cfg = self._config(X, y)
        cfg.validate()
        self.checkpoint_, self.reports_ = train(cfg)
        self.tree_ = cfg.tree
        self.n_features_in_ = X[0].size
        self._input_shape = X.shape[1:]
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = _validate_inputs(X)
        if X.shape[1:] != self._input_shape:
            raise ValueError(
                f"expected items of shape {self._input_shape}, got {X.shape[1:]}"
            )
        return X

    def transform(self, X) -> np.ndarray:
        """Gated posterior code vectors, all layers concatenated."""
        X = self._check_X(X)
        return np.concatenate(predict_codes(self.checkpoint_, X), axis=1)

    def predict(self, X) -> np.ndarray:
        """Most probable root category for each input."""
        X = self._check_X(X)
        root = predict_codes(self.checkpoint_, X, depth=1)[0]
        return np.argmax(root, axis=1)

    def sample(self, n_samples=16, random_state=None):
        """Draw ``n_samples`` outputs; returns (outputs, root categories)."""
        check_is_fitted(self)
        seed = self.random_state if random_state is None else random_state
        rng = np.random.default_rng(seed)
        assignment = apply_mask(sample_raw(self.tree_, n_samples, rng=rng))
        out = sample_outputs(self.checkpoint_, assignment, rng=rng)
        scale = float(self.checkpoint_.meta.get("input_scale", 1.0))
        outputs = out.astype(np.float64) / scale
        roots = np.argmax(assignment.raw[0][:, 0], axis=1)
        return outputs, roots
