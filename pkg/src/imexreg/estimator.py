"""Scikit-learn style front end for the continual learner.

``ContinualClassifier`` holds hyperparameters in its constructor (so
``get_params``/``set_params``/``clone`` behave as usual), learns with
``fit`` and predicts over everything seen so far. ``fit`` accepts either a
:class:`~imexreg.streams.TaskStream` (the continual setting) or a plain
``(X, y)`` pair, which is treated as a single-task stream evaluated on its
own training data.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .losses import LossWeights
from .metrics import AccuracyMatrix
from .nets import ModelConfig
from .presets import resolve_preset
from .streams import AugmentConfig, Dataset, TaskStream, make_class_il_stream
from .trainer import TrainConfig, evaluate, predict_logits, train_stream
from .validation import check_labels, check_matrix


class ContinualClassifier(ClassifierMixin, BaseEstimator):
    """Continual classifier with rehearsal and implicit/explicit regularization.

    Parameters mirror the training configuration; ``preset`` (when given)
    overrides the optimization and regularization settings with a named
    bundle at fit time. ``method`` selects the full method ('imex-reg') or a
    baseline ('er', 'sgd', 'joint').
    """

    def __init__(self, method: str = "imex-reg", preset: Optional[str] = None,
                 lr: float = 0.03, epochs: int = 5, batch_size: int = 32,
                 buffer_batch_size: int = 32, buffer_size: int = 200,
                 alpha: float = 0.1, beta: float = 0.3, lam: float = 0.15,
                 tau: float = 0.5, ema_decay: float = 0.999,
                 ema_update_rate: float = 0.08,
                 encoder_widths: Tuple[int, ...] = (64, 32),
                 proj_head_widths: Tuple[int, ...] = (64, 64, 32),
                 clf_proj_widths: Tuple[int, ...] = (32, 16),
                 noise_std: float = 0.1, mask_rate: float = 0.05,
                 jitter_scale: float = 0.1, standard_noise_std: float = 0.02,
                 teacher_targets: str = "logits", precision: str = "float64",
                 eval_every_epoch: bool = True, random_state: int = 0):
        self.method = method
        self.preset = preset
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.buffer_batch_size = buffer_batch_size
        self.buffer_size = buffer_size
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.tau = tau
        self.ema_decay = ema_decay
        self.ema_update_rate = ema_update_rate
        self.encoder_widths = encoder_widths
        self.proj_head_widths = proj_head_widths
        self.clf_proj_widths = clf_proj_widths
        self.noise_std = noise_std
        self.mask_rate = mask_rate
        self.jitter_scale = jitter_scale
        self.standard_noise_std = standard_noise_std
        self.teacher_targets = teacher_targets
        self.precision = precision
        self.eval_every_epoch = eval_every_epoch
        self.random_state = random_state

    # -- configuration --------------------------------------------------------

    def build_config(self, stream: TaskStream) -> TrainConfig:
        """Resolve estimator params (plus any preset) into a TrainConfig."""
        values = dict(lr=self.lr, epochs=self.epochs, ema_update_rate=self.ema_update_rate,
                      ema_decay=self.ema_decay, alpha=self.alpha, beta=self.beta,
                      lam=self.lam, buffer_size=self.buffer_size)
        if self.preset is not None:
            values.update(resolve_preset(self.preset))
        model = ModelConfig(input_dim=stream.input_dim, num_classes=stream.num_classes,
                            encoder_widths=tuple(self.encoder_widths),
                            proj_head_widths=tuple(self.proj_head_widths),
                            clf_proj_widths=tuple(self.clf_proj_widths))
        return TrainConfig(
            method=self.method, lr=values["lr"], epochs=values["epochs"],
            batch_size=self.batch_size, buffer_batch_size=self.buffer_batch_size,
            buffer_size=values["buffer_size"],
            weights=LossWeights(alpha=values["alpha"], beta=values["beta"],
                                lam=values["lam"], tau=self.tau),
            ema_decay=values["ema_decay"], ema_update_rate=values["ema_update_rate"],
            model=model,
            augment=AugmentConfig(noise_std=self.noise_std, mask_rate=self.mask_rate,
                                  jitter_scale=self.jitter_scale,
                                  standard_noise_std=self.standard_noise_std),
            seed=self.random_state, precision=self.precision,
            teacher_targets=self.teacher_targets,
            eval_every_epoch=self.eval_every_epoch)

    def _as_stream(self, x, y) -> TaskStream:
        if isinstance(x, TaskStream):
            return x
        x = check_matrix(x, "X")
        y = check_labels(y, x.shape[0])
        num_classes = int(y.max()) + 1
        dataset = Dataset(x, y, x, y, num_classes)
        return make_class_il_stream(dataset, num_tasks=1, classes_per_task=num_classes)

    # -- estimator API ---------------------------------------------------------

    def fit(self, X, y=None):
        """Train over a TaskStream, or over (X, y) as a single task."""
        stream = self._as_stream(X, y)
        config = self.build_config(stream)
        state, values = train_stream(stream, config)
        trace = np.array([state.max_acc.get(j, np.nan) for j in range(stream.num_tasks)])
        self.state_ = state
        self.config_ = config
        self.stream_ = stream
        self.accuracy_matrix_ = AccuracyMatrix(values, max_trace=trace)
        self.classes_ = np.arange(stream.num_classes)
        self.task_classes_ = stream.task_classes()
        self.n_features_in_ = stream.input_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise RuntimeError("this ContinualClassifier is not fitted yet; call fit first")

    def _inference_logits(self, x) -> np.ndarray:
        self._check_fitted()
        x = check_matrix(x, "X", expected_dim=self.n_features_in_)
        params = (self.state_.ema.params if self.state_.eval_with_ema
                  else self.state_.model.params)
        return predict_logits(params, self.state_.model.config, x,
                              dtype=self.state_.model.dtype)

    def predict(self, X, task_id: Optional[int] = None) -> np.ndarray:
        """Predicted classes; restrict to one task's class set by ``task_id``."""
        logits = self._inference_logits(X)
        if task_id is not None:
            mask = np.full(logits.shape[1], -np.inf)
            mask[list(self.task_classes_[task_id])] = 0.0
            logits = logits + mask
        return self.classes_[logits.argmax(axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        logits = self._inference_logits(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def evaluate_stream(self, scenario: str = "class-il") -> np.ndarray:
        """Per-task accuracy on the fitted stream's test sets."""
        self._check_fitted()
        return evaluate(self.state_, self.stream_, scenario)
