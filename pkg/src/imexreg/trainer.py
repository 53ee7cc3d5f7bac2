"""Training loop: per-step loss assembly, SGD updates, buffer and EMA
maintenance, per-epoch evaluation with running-max tracking, baselines, and
mid-stream checkpointing.

Method tags select which machinery is active:

* ``imex-reg`` - rehearsal + contrastive multitask + EMA consistency + Gram
  alignment; the EMA is the inference model.
* ``er``       - rehearsal with plain cross-entropy (no EMA, no auxiliaries).
* ``sgd``      - lower bound: cross-entropy on the current task only.
* ``joint``    - upper bound: one training phase over the pooled tasks, with
  the same total gradient-step budget (epochs x num_tasks).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import serialize
from .losses import LossBreakdown, LossWeights, consistency_losses, ecr_loss, er_loss, \
    supcon_loss, total_loss
from .memory import ReplayBuffer
from .nets import ContinualModel, EmaState, ModelConfig, _forward, ema_forward, ema_update, \
    encode_project, forward_all
from .streams import AugmentConfig, TaskStream, augment
from .tensor import DTYPES, NumericError, Tensor, backward

METHODS = ("imex-reg", "er", "sgd", "joint")

# Implementation choices embedded in every run report.
RUN_NOTES = {
    "projection_head_norm": "projection head uses plain affine+ReLU layers (no batch statistics)",
    "supcon_temperature": "dataset presets do not pin tau; default 0.5 unless set explicitly",
    "consistency_targets": "consistency compares raw logits; set teacher_targets='probs' to "
                           "compare softmax outputs instead",
}


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss; carries run context."""

    def __init__(self, message: str, context: Optional[dict] = None):
        super().__init__(message)
        self.context = context or {}


@dataclass(frozen=True)
class TrainConfig:
    method: str = "imex-reg"
    lr: float = 0.03
    epochs: int = 5
    batch_size: int = 32
    buffer_batch_size: int = 32
    buffer_size: int = 200
    weights: LossWeights = field(default_factory=LossWeights)
    ema_decay: float = 0.999
    ema_update_rate: float = 0.08
    model: Optional[ModelConfig] = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    precision: str = "float64"
    teacher_targets: str = "logits"  # or "probs"
    divergence_threshold: float = 1e6
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.buffer_batch_size < 1:
            raise ValueError("lr, epochs and batch sizes must be positive")
        if self.buffer_size < 0:
            raise ValueError(f"buffer_size must be >= 0, got {self.buffer_size}")
        if self.method == "er" and self.buffer_size == 0:
            raise ValueError("method 'er' needs a non-empty buffer (buffer_size > 0)")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {tuple(DTYPES)}, got {self.precision!r}")
        if self.teacher_targets not in ("logits", "probs"):
            raise ValueError("teacher_targets must be 'logits' or 'probs'")


@dataclass(frozen=True)
class MethodProfile:
    uses_buffer: bool
    uses_ema: bool
    weights: LossWeights
    pooled: bool


def method_profile(config: TrainConfig) -> MethodProfile:
    w = config.weights
    off = LossWeights(alpha=0.0, beta=0.0, lam=0.0, tau=w.tau)
    if config.method == "imex-reg":
        return MethodProfile(config.buffer_size > 0, True, w, False)
    if config.method == "er":
        return MethodProfile(True, False, off, False)
    if config.method == "sgd":
        return MethodProfile(False, False, off, False)
    return MethodProfile(False, False, off, True)  # joint


@dataclass
class RunState:
    model: ContinualModel
    ema: EmaState
    buffer: ReplayBuffer
    method: str
    rng_data: np.random.Generator
    rng_aug: np.random.Generator
    max_acc: Dict[int, float] = field(default_factory=dict)
    epoch_log: List[dict] = field(default_factory=list)
    task_cursor: int = 0
    epoch_cursor: int = 0
    steps: int = 0

    @property
    def eval_with_ema(self) -> bool:
        return self.method == "imex-reg"


def init_state(stream: TaskStream, config: TrainConfig) -> RunState:
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    rng_init, rng_data, rng_aug, rng_ema, rng_buffer = (np.random.default_rng(s) for s in seeds)
    model_cfg = config.model or ModelConfig(input_dim=stream.input_dim,
                                            num_classes=stream.num_classes)
    if model_cfg.input_dim != stream.input_dim:
        raise ValueError(f"model input_dim {model_cfg.input_dim} != stream dim {stream.input_dim}")
    if model_cfg.num_classes < stream.num_classes:
        raise ValueError(f"model num_classes {model_cfg.num_classes} < stream classes "
                         f"{stream.num_classes}")
    profile = method_profile(config)
    model = ContinualModel.build(model_cfg, rng_init, precision=config.precision)
    ema = EmaState.from_model(model, config.ema_decay, config.ema_update_rate, rng_ema)
    capacity = config.buffer_size if profile.uses_buffer else 0
    buffer = ReplayBuffer(capacity, rng_buffer)
    return RunState(model=model, ema=ema, buffer=buffer, method=config.method,
                    rng_data=rng_data, rng_aug=rng_aug)


def _apply_sgd_update(model: ContinualModel, lr: float) -> None:
    for p in model.params.values():
        if p.grad is not None:
            p.data = p.data - lr * p.grad
            p.grad = None


def train_step(state: RunState, x: np.ndarray, y: np.ndarray, task_id: int,
               config: TrainConfig, hook: Optional[Callable] = None) -> LossBreakdown:
    """One optimization step on a current-task batch.

    Builds the views, mixes in a buffer minibatch when available, assembles
    the composite loss, applies one plain gradient-descent update, inserts the
    raw batch into the reservoir, and fires the stochastic EMA update.
    """
    profile = method_profile(config)
    weights = profile.weights
    dtype = DTYPES[config.precision]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)

    # Views: standard for the supervised/consistency passes, two contrastive
    # views for the auxiliary contrastive pass (only when it is active).
    x_std = augment(x, config.augment, "standard", state.rng_aug)
    if weights.alpha > 0:
        v1 = augment(x, config.augment, "contrastive", state.rng_aug)
        v2 = augment(x, config.augment, "contrastive", state.rng_aug)

    xm = ym = None
    if profile.uses_buffer and len(state.buffer) > 0:
        xm, ym, _ = state.buffer.sample(config.buffer_batch_size)
        xm_std = augment(xm, config.augment, "standard", state.rng_aug)
        if weights.alpha > 0:
            vm1 = augment(xm, config.augment, "contrastive", state.rng_aug)
            vm2 = augment(xm, config.augment, "contrastive", state.rng_aug)

    if xm is not None:
        x_comb = np.concatenate([x_std, xm_std])
        y_comb = np.concatenate([y, ym])
    else:
        x_comb, y_comb = x_std, y

    try:
        _, logits, z_std, c_std = forward_all(state.model, Tensor(x_comb.astype(dtype)))
        er = er_loss(logits, y_comb)

        rep = None
        if weights.alpha > 0:
            if xm is not None:
                view_a = np.concatenate([v1, vm1])
                view_b = np.concatenate([v2, vm2])
            else:
                view_a, view_b = v1, v2
            z_views = encode_project(state.model,
                                     Tensor(np.concatenate([view_a, view_b]).astype(dtype)))
            rep = supcon_loss(z_views, np.concatenate([y_comb, y_comb]), weights.tau)

        ecr = ecr_loss(z_std, c_std) if weights.beta > 0 else None

        cr_g = cr_h = None
        if weights.lam > 0 and xm is not None:
            xm_t = Tensor(xm_std.astype(dtype))
            _, logits_m, z_m, _ = forward_all(state.model, xm_t)
            _, logits_e, z_e, _ = ema_forward(state.ema, state.model.config, xm_t)
            if config.teacher_targets == "probs":
                logits_m = logits_m.softmax_rows()
                logits_e = logits_e.softmax_rows()
            cr_g, cr_h = consistency_losses(logits_m, z_m, logits_e, z_e)

        total, parts = total_loss(er, rep, ecr, cr_g, cr_h, weights,
                                  buffer_nonempty=xm is not None)
    except NumericError as exc:
        raise DivergenceError(
            f"non-finite loss at task {task_id}, step {state.steps}: {exc}",
            context={"task": task_id, "step": state.steps}) from exc

    if not np.isfinite(parts.total) or abs(parts.total) > config.divergence_threshold:
        raise DivergenceError(
            f"loss diverged at task {task_id}, step {state.steps}: total={parts.total!r}, "
            f"parts=(er={parts.er:.4g}, rep={parts.rep:.4g}, ecr={parts.ecr:.4g}, "
            f"cr_g={parts.cr_g:.4g}, cr_h={parts.cr_h:.4g})",
            context={"task": task_id, "step": state.steps, "breakdown": parts})

    if hook is not None:
        hook({"task": task_id, "step": state.steps, "breakdown": parts,
              "batch": (x_comb, y_comb), "current": (x_std, y),
              "buffer_batch": (xm_std, ym) if xm is not None else None})

    backward(total)
    _apply_sgd_update(state.model, config.lr)

    if profile.uses_buffer:
        for i in range(x.shape[0]):
            state.buffer.insert(x[i], int(y[i]), task_id)
    if profile.uses_ema:
        ema_update(state.ema, state.model)
    state.steps += 1
    return parts


def predict_logits(params, config: ModelConfig, x: np.ndarray,
                   dtype=np.float64) -> np.ndarray:
    _, logits, _, _ = _forward(params, config, Tensor(np.asarray(x, dtype=dtype)))
    return logits.data


def evaluate(state: RunState, stream: TaskStream, scenario: str = "class-il",
             upto: Optional[int] = None) -> np.ndarray:
    """Accuracy (percent) on each task's test set, using the inference model
    (the EMA mirror when the method maintains one, the online model otherwise).

    ``class-il`` predicts over all classes; ``task-il`` restricts the argmax
    to the evaluated task's class set.
    """
    if scenario not in ("class-il", "task-il"):
        raise ValueError(f"scenario must be 'class-il' or 'task-il', got {scenario!r}")
    params = state.ema.params if state.eval_with_ema else state.model.params
    config = state.model.config
    dtype = state.model.dtype
    n_tasks = stream.num_tasks if upto is None else upto + 1
    accs = np.zeros(n_tasks)
    for t in range(n_tasks):
        task = stream.tasks[t]
        logits = predict_logits(params, config, task.x_test, dtype=dtype)
        if scenario == "task-il":
            mask = np.full(config.num_classes, -np.inf)
            mask[list(task.classes)] = 0.0
            logits = logits + mask
        pred = logits.argmax(axis=1)
        accs[t] = 100.0 * float((pred == task.y_test).mean())
    return accs


def _iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _record_epoch(state: RunState, stream: TaskStream, task_idx: int, epoch: int) -> np.ndarray:
    accs = evaluate(state, stream, "class-il", upto=task_idx)
    for j, a in enumerate(accs):
        if a > state.max_acc.get(j, -np.inf):
            state.max_acc[j] = float(a)
    state.epoch_log.append({"task": task_idx, "epoch": epoch,
                            "acc": [float(a) for a in accs]})
    return accs


def train_stream(stream: TaskStream, config: TrainConfig,
                 hook: Optional[Callable] = None,
                 on_epoch_end: Optional[Callable] = None,
                 state: Optional[RunState] = None,
                 acc_values: Optional[np.ndarray] = None):
    """Run the full stream; returns (state, accuracy matrix).

    The accuracy matrix rows are recorded at task boundaries: row i holds the
    class-incremental accuracy on every task j <= i. The running per-task
    maximum over per-epoch evaluations is kept in ``state.max_acc``.
    ``on_epoch_end(state, acc_values)`` may return False to stop early
    (checkpoint + resume path); pass the loaded state/matrix to continue.
    """
    profile = method_profile(config)
    if state is None:
        state = init_state(stream, config)
    if profile.pooled:
        return _train_joint(stream, config, state, hook, on_epoch_end)

    n_tasks = stream.num_tasks
    if acc_values is None:
        acc_values = np.full((n_tasks, n_tasks), np.nan)

    while state.task_cursor < n_tasks:
        t = state.task_cursor
        task = stream.tasks[t]
        accs = None
        for epoch in range(state.epoch_cursor, config.epochs):
            for idx in _iter_batches(task.n_train, config.batch_size, state.rng_data):
                train_step(state, task.x_train[idx], task.y_train[idx], t, config, hook=hook)
            last_epoch = epoch == config.epochs - 1
            if config.eval_every_epoch or last_epoch:
                accs = _record_epoch(state, stream, t, epoch)
            state.epoch_cursor = epoch + 1
            if on_epoch_end is not None and on_epoch_end(state, acc_values) is False:
                return state, acc_values
        acc_values[t, :t + 1] = accs
        state.task_cursor += 1
        state.epoch_cursor = 0
    return state, acc_values


def _train_joint(stream: TaskStream, config: TrainConfig, state: RunState,
                 hook, on_epoch_end):
    x_all = np.concatenate([t.x_train for t in stream.tasks])
    y_all = np.concatenate([t.y_train for t in stream.tasks])
    total_epochs = config.epochs * stream.num_tasks
    acc_values = np.full((1, stream.num_tasks), np.nan)
    accs = None
    for epoch in range(state.epoch_cursor, total_epochs):
        for idx in _iter_batches(x_all.shape[0], config.batch_size, state.rng_data):
            train_step(state, x_all[idx], y_all[idx], 0, config, hook=hook)
        last = epoch == total_epochs - 1
        if config.eval_every_epoch or last:
            accs = _record_epoch(state, stream, stream.num_tasks - 1, epoch)
        state.epoch_cursor = epoch + 1
        if on_epoch_end is not None and on_epoch_end(state, acc_values) is False:
            return state, acc_values
    acc_values[0, :] = accs
    state.task_cursor = stream.num_tasks
    return state, acc_values


# -- checkpointing -------------------------------------------------------------


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(saved: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = saved
    return rng


def save_checkpoint(path, state: RunState, config: TrainConfig,
                    acc_values: np.ndarray) -> None:
    """Model + EMA + buffer snapshots in the binary container, with rng
    states, cursors, traces and the partial accuracy matrix in the trailer."""
    tensors = {}
    for name, p in state.model.params.items():
        tensors[f"model.{name}"] = p.data
    for name, p in state.ema.params.items():
        tensors[f"ema.{name}"] = p.data
    for name, arr in state.buffer.state_arrays().items():
        tensors[f"buffer.{name}"] = arr.astype(state.model.dtype)
    # the checkpoint must carry the resolved model config, not the None default
    resolved = replace(config, model=state.model.config)
    meta = {
        "config": _config_to_dict(resolved),
        "rng": {
            "data": _rng_state(state.rng_data),
            "aug": _rng_state(state.rng_aug),
            "ema": _rng_state(state.ema.rng),
            "buffer": _rng_state(state.buffer.rng),
        },
        "cursors": {"task": state.task_cursor, "epoch": state.epoch_cursor,
                    "steps": state.steps},
        "max_acc": {str(k): v for k, v in state.max_acc.items()},
        "epoch_log": state.epoch_log,
        "acc_values": [[None if np.isnan(v) else float(v) for v in row] for row in acc_values],
        "method": state.method,
    }
    cfg_hash = serialize.config_hash(meta["config"])
    blob = serialize.pack_with_trailer(tensors, meta, cfg_hash)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> Tuple[RunState, TrainConfig, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    tensors, _, meta = serialize.unpack_with_trailer(blob)
    config = _config_from_dict(meta["config"])
    model_cfg = config.model
    model_params = {k[len("model."):]: Tensor(v.copy(), requires_grad=True)
                    for k, v in tensors.items() if k.startswith("model.")}
    ema_params = {k[len("ema."):]: Tensor(v.copy())
                  for k, v in tensors.items() if k.startswith("ema.")}
    buffer_arrays = {k[len("buffer."):]: v.astype(np.float64)
                     for k, v in tensors.items() if k.startswith("buffer.")}
    model = ContinualModel(model_cfg, model_params)
    ema = EmaState(params=ema_params, decay=config.ema_decay,
                   update_rate=config.ema_update_rate,
                   rng=_restore_rng(meta["rng"]["ema"]))
    buffer = ReplayBuffer.restore(buffer_arrays, _restore_rng(meta["rng"]["buffer"]))
    state = RunState(
        model=model, ema=ema, buffer=buffer, method=meta["method"],
        rng_data=_restore_rng(meta["rng"]["data"]),
        rng_aug=_restore_rng(meta["rng"]["aug"]),
        max_acc={int(k): v for k, v in meta["max_acc"].items()},
        epoch_log=meta["epoch_log"],
        task_cursor=meta["cursors"]["task"],
        epoch_cursor=meta["cursors"]["epoch"],
        steps=meta["cursors"]["steps"],
    )
    rows = meta["acc_values"]
    acc_values = np.array([[np.nan if v is None else v for v in row] for row in rows])
    return state, config, acc_values


def _config_to_dict(config: TrainConfig) -> dict:
    d = {
        "method": config.method, "lr": config.lr, "epochs": config.epochs,
        "batch_size": config.batch_size, "buffer_batch_size": config.buffer_batch_size,
        "buffer_size": config.buffer_size,
        "weights": {"alpha": config.weights.alpha, "beta": config.weights.beta,
                    "lam": config.weights.lam, "tau": config.weights.tau},
        "ema_decay": config.ema_decay, "ema_update_rate": config.ema_update_rate,
        "model": None,
        "augment": {"noise_std": config.augment.noise_std,
                    "mask_rate": config.augment.mask_rate,
                    "jitter_scale": config.augment.jitter_scale,
                    "standard_noise_std": config.augment.standard_noise_std},
        "seed": config.seed, "precision": config.precision,
        "teacher_targets": config.teacher_targets,
        "divergence_threshold": config.divergence_threshold,
        "eval_every_epoch": config.eval_every_epoch,
    }
    if config.model is not None:
        m = config.model
        d["model"] = {"input_dim": m.input_dim, "num_classes": m.num_classes,
                      "encoder_widths": list(m.encoder_widths),
                      "proj_head_widths": list(m.proj_head_widths),
                      "clf_proj_widths": list(m.clf_proj_widths)}
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    model = None
    if d.get("model"):
        m = d["model"]
        model = ModelConfig(input_dim=m["input_dim"], num_classes=m["num_classes"],
                            encoder_widths=tuple(m["encoder_widths"]),
                            proj_head_widths=tuple(m["proj_head_widths"]),
                            clf_proj_widths=tuple(m["clf_proj_widths"]))
    w = d["weights"]
    a = d["augment"]
    return TrainConfig(
        method=d["method"], lr=d["lr"], epochs=d["epochs"], batch_size=d["batch_size"],
        buffer_batch_size=d["buffer_batch_size"], buffer_size=d["buffer_size"],
        weights=LossWeights(alpha=w["alpha"], beta=w["beta"], lam=w["lam"], tau=w["tau"]),
        ema_decay=d["ema_decay"], ema_update_rate=d["ema_update_rate"], model=model,
        augment=AugmentConfig(noise_std=a["noise_std"], mask_rate=a["mask_rate"],
                              jitter_scale=a["jitter_scale"],
                              standard_noise_std=a["standard_noise_std"]),
        seed=d["seed"], precision=d["precision"], teacher_targets=d["teacher_targets"],
        divergence_threshold=d["divergence_threshold"],
        eval_every_epoch=d["eval_every_epoch"],
    )
