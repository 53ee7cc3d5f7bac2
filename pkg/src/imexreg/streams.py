"""Task-stream construction and the stochastic view-augmentation module.

Streams come in two families. Class-incremental splits partition a dataset's
classes into disjoint, equally sized task class-sets. Generalized
class-incremental (GCIL) streams draw a class subset per task and split a
fixed per-task sample budget across it, equally ("uniform") or by a
decreasing power-law profile ("longtail"); classes may reappear in later
tasks. Both are pure functions of (dataset, parameters, seed).

The built-in dataset is a seeded Gaussian mixture; external feature files
load from a small CSV format (see ``load_csv_dataset``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int
    task_id: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise ValueError("Sample features must be finite")


@dataclass
class Task:
    task_id: int
    classes: Tuple[int, ...]
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    def sample_at(self, i: int) -> Sample:
        return Sample(self.x_train[i], int(self.y_train[i]), self.task_id)


@dataclass
class TaskStream:
    tasks: List[Task]
    scenario: str  # class-il | gcil-uniform | gcil-longtail
    seed: int
    num_classes: int
    input_dim: int

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def task_classes(self) -> List[Tuple[int, ...]]:
        return [t.classes for t in self.tasks]


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]


def make_gaussian_dataset(num_classes: int, dim: int, train_per_class: int,
                          test_per_class: int, separation: float = 3.0,
                          noise: float = 1.0, seed: int = 0) -> Dataset:
    """Mixture of ``num_classes`` spherical Gaussians with unit-direction
    means scaled to ``separation``."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(per_class):
        xs, ys = [], []
        for c in range(num_classes):
            xs.append(means[c] + noise * rng.normal(size=(per_class, dim)))
            ys.append(np.full(per_class, c, dtype=np.int64))
        return np.concatenate(xs), np.concatenate(ys)

    x_tr, y_tr = draw(train_per_class)
    x_te, y_te = draw(test_per_class)
    return Dataset(x_tr, y_tr, x_te, y_te, num_classes)


def save_csv_dataset(train_path, test_path, dataset: Dataset) -> None:
    for path, x, y in ((train_path, dataset.x_train, dataset.y_train),
                       (test_path, dataset.x_test, dataset.y_test)):
        with open(path, "w") as fh:
            fh.write(f"{x.shape[0]},{x.shape[1]},{dataset.num_classes}\n")
            for row, label in zip(x, y):
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def _read_csv_split(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'num_samples,dim,num_classes'")
        n, dim, num_classes = (int(v) for v in header)
        x = np.zeros((n, dim))
        y = np.zeros(n, dtype=np.int64)
        for i in range(n):
            fields = fh.readline().strip().split(",")
            if len(fields) != dim + 1:
                raise ValueError(f"{path}: row {i} has {len(fields)} fields, expected {dim + 1}")
            x[i] = [float(v) for v in fields[:dim]]
            y[i] = int(fields[dim])
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: features must be finite")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"{path}: labels must lie in [0, {num_classes})")
    return x, y, num_classes


def load_csv_dataset(train_path, test_path) -> Dataset:
    """Text format: header 'num_samples,dim,num_classes', then rows of dim
    floats plus an integer label; one file per split."""
    x_tr, y_tr, k_tr = _read_csv_split(train_path)
    x_te, y_te, k_te = _read_csv_split(test_path)
    if k_tr != k_te or x_tr.shape[1] != x_te.shape[1]:
        raise ValueError("train/test splits disagree on dim or num_classes")
    return Dataset(x_tr, y_tr, x_te, y_te, k_tr)


def make_class_il_stream(dataset: Dataset, num_tasks: int, classes_per_task: int,
                         seed: int = 0, shuffle_classes: bool = False) -> TaskStream:
    """Disjoint class split: task t gets the next ``classes_per_task`` classes
    in identity order, or in a seeded permutation when ``shuffle_classes``."""
    needed = num_tasks * classes_per_task
    if needed > dataset.num_classes:
        raise ValueError(f"need {needed} classes for {num_tasks} tasks x "
                         f"{classes_per_task}, dataset has {dataset.num_classes}")
    order = np.arange(dataset.num_classes)
    if shuffle_classes:
        order = np.random.default_rng(seed).permutation(dataset.num_classes)
    tasks = []
    for t in range(num_tasks):
        classes = tuple(int(c) for c in order[t * classes_per_task:(t + 1) * classes_per_task])
        tr = np.isin(dataset.y_train, classes)
        te = np.isin(dataset.y_test, classes)
        tasks.append(Task(t, classes,
                          dataset.x_train[tr], dataset.y_train[tr],
                          dataset.x_test[te], dataset.y_test[te]))
    return TaskStream(tasks, "class-il", seed, dataset.num_classes, dataset.dim)


def _apportion(weights: np.ndarray, budget: int) -> np.ndarray:
    """Largest-remainder split of ``budget`` proportional to ``weights``."""
    shares = weights / weights.sum() * budget
    counts = np.floor(shares).astype(np.int64)
    remainder = budget - counts.sum()
    if remainder > 0:
        # ties broken toward lower index via stable sort on -fraction
        order = np.argsort(-(shares - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def make_gcil_stream(dataset: Dataset, num_tasks: int, samples_per_task: int,
                     max_classes: int, distribution: str = "uniform",
                     seed: int = 0, longtail_power: float = 1.0) -> TaskStream:
    """Probabilistic stream: each task draws a class subset of size uniform on
    [min(2, max_classes), max_classes] and splits the sample budget across it."""
    if distribution not in ("uniform", "longtail"):
        raise ValueError(f"distribution must be 'uniform' or 'longtail', got {distribution!r}")
    if not 1 <= max_classes <= dataset.num_classes:
        raise ValueError(f"max_classes must lie in [1, {dataset.num_classes}]")
    rng = np.random.default_rng(seed)
    class_pools = {c: np.flatnonzero(dataset.y_train == c) for c in range(dataset.num_classes)}
    lo = min(2, max_classes)
    tasks = []
    for t in range(num_tasks):
        k = int(rng.integers(lo, max_classes + 1))
        classes = rng.choice(dataset.num_classes, size=k, replace=False)
        if distribution == "uniform":
            weights = np.ones(k)
        else:
            weights = (np.arange(k) + 1.0) ** (-longtail_power)
        counts = _apportion(weights, samples_per_task)
        xs, ys = [], []
        for c, cnt in zip(classes, counts):
            pool = class_pools[int(c)]
            if cnt > pool.size:
                raise ValueError(f"task {t}: class {int(c)} has {pool.size} train "
                                 f"samples, needs {int(cnt)}")
            take = rng.choice(pool, size=int(cnt), replace=False)
            xs.append(dataset.x_train[take])
            ys.append(dataset.y_train[take])
        x_tr = np.concatenate(xs)
        y_tr = np.concatenate(ys)
        present = tuple(int(c) for c, cnt in zip(classes, counts) if cnt > 0)
        te = np.isin(dataset.y_test, present)
        tasks.append(Task(t, present, x_tr, y_tr, dataset.x_test[te], dataset.y_test[te]))
    return TaskStream(tasks, f"gcil-{distribution}", seed, dataset.num_classes, dataset.dim)


@dataclass(frozen=True)
class AugmentConfig:
    """Feature-space stand-in for image view augmentation: multiplicative
    jitter, random feature masking, and additive Gaussian noise for the
    contrastive views; weak noise only for the standard view."""

    noise_std: float = 0.1
    mask_rate: float = 0.05
    jitter_scale: float = 0.1
    standard_noise_std: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError(f"mask_rate must be in [0, 1], got {self.mask_rate}")
        if not 0.0 <= self.jitter_scale <= 1.0:
            raise ValueError(f"jitter_scale must be in [0, 1], got {self.jitter_scale}")
        if self.noise_std < 0 or self.standard_noise_std < 0:
            raise ValueError("noise stds must be >= 0")


def augment(x: np.ndarray, config: AugmentConfig, mode: str,
            rng: np.random.Generator) -> np.ndarray:
    """Label-preserving stochastic view of ``x`` (any shape, applied per entry).

    Contrastive mode applies jitter, masking, then noise; standard mode only
    weak noise. Zero-valued rates/stds skip their draw entirely, so an
    all-zero config is the identity.
    """
    if mode not in ("contrastive", "standard"):
        raise ValueError(f"mode must be 'contrastive' or 'standard', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    if mode == "standard":
        if config.standard_noise_std > 0:
            out = out + rng.normal(0.0, config.standard_noise_std, size=out.shape)
        return out
    if config.jitter_scale > 0:
        out = out * rng.uniform(1.0 - config.jitter_scale, 1.0 + config.jitter_scale,
                                size=out.shape)
    if config.mask_rate > 0:
        out = out * (rng.random(out.shape) >= config.mask_rate)
    if config.noise_std > 0:
        out = out + rng.normal(0.0, config.noise_std, size=out.shape)
    return out
