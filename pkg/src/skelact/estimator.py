"""Scikit-learn style classifier wrapping the full training pipeline.

X is a (n_samples, frames, joints, channels) float array; y holds class
labels (any hashable values, mapped to indices internally).  The
estimator follows the usual conventions: constructor arguments are stored
verbatim, fitted state carries a trailing underscore, and
`get_params`/`set_params`/`clone` work out of the box.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .datasets import Dataset, MotionSequence, apply_modality, center_dataset
from .model import EncoderSpec, feature_bundle
from .skeleton import SkeletonGraph, chain_graph
from .training import TrainConfig, fit, predict_scores
from .validation import check_motion_array


class SkeletonActionClassifier(ClassifierMixin, BaseEstimator):
    """Dependency-refined graph-convolution classifier with an HSIC objective.

    Parameters mirror `TrainConfig` and `EncoderSpec`; `graph` may be a
    `SkeletonGraph` or None for a default chain skeleton over the joints
    seen at fit time.
    """

    def __init__(self, *, delta=1.0, hidden_channels=(16, 32), aux_hidden_channels=None,
                 temporal_pool="mean", use_refinement=True, use_hsic=True,
                 use_distill=True, use_aux=True, hsic_sign=-1, hsic_weight=1.0,
                 matern_order=1.5, matern_amplitude=1.0, matern_length_scale=1.0,
                 temperature=1.0, epochs=120, warmup_epochs=5, base_lr=0.1,
                 lr_decay=0.1, decay_every=50, momentum=0.9, batch_size=128,
                 modality="joint", center=True, graph=None, random_state=0):
        self.delta = delta
        self.hidden_channels = hidden_channels
        self.aux_hidden_channels = aux_hidden_channels
        self.temporal_pool = temporal_pool
        self.use_refinement = use_refinement
        self.use_hsic = use_hsic
        self.use_distill = use_distill
        self.use_aux = use_aux
        self.hsic_sign = hsic_sign
        self.hsic_weight = hsic_weight
        self.matern_order = matern_order
        self.matern_amplitude = matern_amplitude
        self.matern_length_scale = matern_length_scale
        self.temperature = temperature
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.base_lr = base_lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.momentum = momentum
        self.batch_size = batch_size
        self.modality = modality
        self.center = center
        self.graph = graph
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, warmup_epochs=self.warmup_epochs, base_lr=self.base_lr,
            lr_decay=self.lr_decay, decay_every=self.decay_every, momentum=self.momentum,
            batch_size=self.batch_size, temperature=self.temperature, delta=self.delta,
            hsic_sign=self.hsic_sign, hsic_weight=self.hsic_weight,
            use_hsic=self.use_hsic, use_distill=self.use_distill, use_aux=self.use_aux,
            matern_order=self.matern_order, matern_amplitude=self.matern_amplitude,
            matern_length_scale=self.matern_length_scale, seed=self.random_state,
        )

    def _specs(self) -> tuple[EncoderSpec, EncoderSpec | None]:
        base = EncoderSpec(
            num_blocks=len(self.hidden_channels),
            hidden_channels=tuple(self.hidden_channels),
            temporal_pool=self.temporal_pool,
            delta=self.delta,
            use_refinement=self.use_refinement,
        )
        aux = None
        if self.aux_hidden_channels is not None:
            aux = EncoderSpec(
                num_blocks=len(self.aux_hidden_channels),
                hidden_channels=tuple(self.aux_hidden_channels),
                temporal_pool=self.temporal_pool,
                delta=self.delta,
                use_refinement=self.use_refinement,
            )
        return base, aux

    def _preprocess(self, x: np.ndarray, labels=None) -> Dataset:
        n = x.shape[0]
        labels = np.zeros(n, dtype=np.int64) if labels is None else labels
        num_classes = max(2, int(labels.max()) + 1) if n else 2
        dataset = Dataset(
            sequences=tuple(
                MotionSequence(data=x[i], label=int(labels[i])) for i in range(n)
            ),
            num_classes=num_classes,
        )
        dataset = apply_modality(dataset, self.graph_, self.modality)
        if self.center:
            dataset = center_dataset(dataset, self.graph_)
        return dataset

    def fit(self, X, y):
        x = check_motion_array(X)
        y = np.asarray(y)
        if y.shape[0] != x.shape[0]:
            raise ValueError(f"X has {x.shape[0]} samples but y has {y.shape[0]}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("fit needs at least two classes")
        if self.graph is not None and not isinstance(self.graph, SkeletonGraph):
            raise ValueError("graph must be a SkeletonGraph or None")
        self.graph_ = self.graph or chain_graph(x.shape[2])
        base_spec, aux_spec = self._specs()
        train = self._preprocess(x, encoded)
        self.framework_, self.metrics_ = fit(
            train, self._config(), graph=self.graph_,
            base_spec=base_spec, aux_spec=aux_spec,
        )
        self.n_features_in_ = x.shape[1] * x.shape[2] * x.shape[3]
        return self

    def _check_fitted(self):
        if not hasattr(self, "framework_"):
            raise NotFittedError("this SkeletonActionClassifier instance is not fitted yet")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        dataset = self._preprocess(check_motion_array(X))
        return predict_scores(self.framework_, dataset.stack())

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def embeddings(self, X) -> np.ndarray:
        """Augmented features z_hat, e.g. for external 2-D projection plots."""
        self._check_fitted()
        dataset = self._preprocess(check_motion_array(X))
        return feature_bundle(dataset.stack(), self.framework_).z_hat
