"""Evaluation metrics over accuracy matrices and prediction dumps:
forgetting, stability/plasticity trade-off, expected calibration error,
task-recency bias, and the random-projection distortion diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


@dataclass
class AccuracyMatrix:
    """Lower-triangular task accuracies: values[i, j] is the accuracy on task
    j (percent) after training task i. ``max_trace[j]`` optionally carries the
    running maximum over per-epoch evaluations of task j."""

    values: np.ndarray
    max_trace: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        defined = self.values[~np.isnan(self.values)]
        if defined.size and (defined.min() < 0 or defined.max() > 100):
            raise ValueError("accuracies must lie in [0, 100]")
        if self.max_trace is not None:
            self.max_trace = np.asarray(self.max_trace, dtype=np.float64)

    @property
    def num_tasks(self) -> int:
        return self.values.shape[1]

    def final_row(self) -> np.ndarray:
        return self.values[-1]


def forgetting(acc: AccuracyMatrix, use_max_trace: bool = False) -> Tuple[np.ndarray, float]:
    """Per-task forgetting and its mean over the T-1 previous tasks.

    Forgetting of task j is the peak past accuracy on j minus the final
    accuracy on j. The peak is read from the per-epoch running-max trace when
    ``use_max_trace`` (the protocol matching a stochastically updated
    inference model), otherwise from the task-boundary rows.
    """
    a = acc.values
    t = a.shape[0]
    if t < 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"forgetting needs a square matrix with T >= 2, got {a.shape}")
    if use_max_trace and acc.max_trace is None:
        raise ValueError("use_max_trace requested but the matrix carries no trace")
    final = a[-1]
    per_task = np.zeros(t - 1)
    for j in range(t - 1):
        if use_max_trace:
            peak = acc.max_trace[j]
        else:
            peak = np.nanmax(a[j:t - 1, j])
        per_task[j] = peak - final[j]
    return per_task, float(per_task.mean())


def stability_plasticity(acc: AccuracyMatrix, mode: str = "mean") -> Tuple[float, float, float]:
    """(stability, plasticity, trade-off).

    Stability aggregates the final-row accuracy over the T-1 previous tasks,
    plasticity the diagonal (each task right after first exposure); the
    trade-off is their harmonic mean 2SP/(S+P), 0 when S+P is 0. ``mode``
    'mean' keeps both on the accuracy scale; 'sum' leaves them as raw sums
    (changes the trade-off only by the common factor).
    """
    a = acc.values
    t = a.shape[0]
    if t < 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"stability_plasticity needs a square matrix with T >= 2, got {a.shape}")
    if mode not in ("mean", "sum"):
        raise ValueError(f"mode must be 'mean' or 'sum', got {mode!r}")
    agg = np.mean if mode == "mean" else np.sum
    s = float(agg(a[-1, :t - 1]))
    p = float(agg(np.diagonal(a)))
    tradeoff = 0.0 if s + p == 0 else 2.0 * s * p / (s + p)
    return s, p, tradeoff


def task_probability_mass(probs: np.ndarray, task_classes: Sequence[Sequence[int]]) -> np.ndarray:
    """Per-sample softmax mass summed within each task's class set."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1]
    owner = np.full(k, -1, dtype=np.int64)
    for t, classes in enumerate(task_classes):
        for c in classes:
            owner[c] = t  # recurring classes belong to their latest task
    missing = np.flatnonzero(owner == -1)
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} are outside the task class-map")
    n_tasks = len(task_classes)
    mass = np.zeros((probs.shape[0], n_tasks))
    for t in range(n_tasks):
        mass[:, t] = probs[:, owner == t].sum(axis=1)
    return mass


@dataclass
class CalibrationDump:
    """Per-sample prediction summary: top softmax probability, correctness,
    the sample's true task, and the per-task probability mass."""

    confidence: np.ndarray
    correct: np.ndarray
    true_task: np.ndarray
    task_mass: np.ndarray

    def __post_init__(self):
        if self.confidence.min() <= 0 or self.confidence.max() > 1:
            raise ValueError("confidences must lie in (0, 1]")
        sums = self.task_mass.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("per-sample task probability mass must sum to 1")


def make_calibration_dump(probs: np.ndarray, y_true: np.ndarray,
                          task_classes: Sequence[Sequence[int]],
                          true_task: Optional[np.ndarray] = None) -> CalibrationDump:
    probs = np.asarray(probs, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    mass = task_probability_mass(probs, task_classes)
    if true_task is None:
        class_owner: Dict[int, int] = {}
        for t, classes in enumerate(task_classes):
            for c in classes:
                class_owner[int(c)] = t
        try:
            true_task = np.array([class_owner[int(c)] for c in y_true], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc} is outside the task class-map") from exc
    pred = probs.argmax(axis=1)
    return CalibrationDump(confidence=probs.max(axis=1), correct=pred == y_true,
                           true_task=np.asarray(true_task), task_mass=mass)


def ece(dump: CalibrationDump, bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins on (0, 1]."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    conf = dump.confidence
    if conf.size == 0:
        raise ValueError("ece needs a non-empty dump")
    correct = dump.correct.astype(np.float64)
    idx = np.clip(np.ceil(conf * bins).astype(np.int64) - 1, 0, bins - 1)
    total = conf.size
    out = 0.0
    for b in range(bins):
        in_bin = idx == b
        n_b = int(in_bin.sum())
        if n_b == 0:
            continue
        out += (n_b / total) * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return float(out)


def recency_bias(dump: CalibrationDump) -> np.ndarray:
    """Mean per-task softmax mass over all samples; a probability vector whose
    skew toward late tasks measures recency bias."""
    return dump.task_mass.mean(axis=0)


@dataclass
class JLDistortionReport:
    source_dim: int
    target_dim: int
    epsilon: float
    n_points: int
    n_pairs: int
    n_coincident: int
    min_ratio: float
    max_ratio: float
    violations: int

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.n_pairs if self.n_pairs else 0.0


def jl_min_dim(n: int, epsilon: float) -> int:
    """Smallest target dimension for which the distance-preservation
    guarantee holds for n points at distortion epsilon."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return math.ceil(4.0 / (epsilon ** 2 / 2.0 - epsilon ** 3 / 3.0) * math.log(n))


def gaussian_projection(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    """Random map with entries N(0, 1/d_out); preserves expected squared norms."""
    return rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(d_in, d_out))


def jl_distortion(points: np.ndarray, projection: np.ndarray,
                  epsilon: float) -> JLDistortionReport:
    """Summarize pairwise squared-distance ratios after/before projecting.

    Coincident input pairs are excluded from the ratios and counted apart.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("jl_distortion needs at least two points")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    mapped = points @ projection
    iu = np.triu_indices(points.shape[0], k=1)

    def pair_sq_dists(x):
        diff = x[:, None, :] - x[None, :, :]
        return (diff ** 2).sum(axis=2)[iu]

    before = pair_sq_dists(points)
    after = pair_sq_dists(mapped)
    coincident = before == 0
    ratios = after[~coincident] / before[~coincident]
    violations = int(((ratios < 1.0 - epsilon) | (ratios > 1.0 + epsilon)).sum())
    return JLDistortionReport(
        source_dim=points.shape[1], target_dim=projection.shape[1], epsilon=epsilon,
        n_points=points.shape[0], n_pairs=int(ratios.size),
        n_coincident=int(coincident.sum()),
        min_ratio=float(ratios.min()) if ratios.size else 1.0,
        max_ratio=float(ratios.max()) if ratios.size else 1.0,
        violations=violations)
