"""Desk-scale continual-learning laboratory.

Rehearsal with implicit (supervised-contrastive multitask) and explicit
(EMA consistency + Gram-matrix hypersphere alignment) regularization,
baselines, and the full evaluation-metric suite, on a small numpy autodiff
core. See the README for the CLI and config format.
"""

from .estimator import ContinualClassifier
from .losses import (LossBreakdown, LossWeights, consistency_losses, ecr_loss,
                     er_loss, gram, supcon_loss, total_loss)
from .memory import EmptyBufferError, ReplayBuffer
from .metrics import (AccuracyMatrix, CalibrationDump, JLDistortionReport, ece,
                      forgetting, gaussian_projection, jl_distortion, jl_min_dim,
                      make_calibration_dump, recency_bias, stability_plasticity,
                      task_probability_mass)
from .nets import (ContinualModel, EmaState, ModelConfig, ema_forward, ema_update,
                   encode_project, forward_all)
from .presets import PRESETS, resolve_preset
from .streams import (AugmentConfig, Dataset, Sample, Task, TaskStream, augment,
                      load_csv_dataset, make_class_il_stream, make_gaussian_dataset,
                      make_gcil_stream, save_csv_dataset)
from .tensor import (DeterminismError, GradCheckReport, NumericError, ShapeError,
                     Tensor, backward, grad_check, zero_grad)
from .trainer import (DivergenceError, RunState, TrainConfig, evaluate, init_state,
                      load_checkpoint, method_profile, predict_logits,
                      save_checkpoint, train_step, train_stream)

__version__ = "0.1.0"
