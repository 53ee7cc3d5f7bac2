"""Fixed-capacity replay buffer maintained by reservoir sampling.

Every sample offered to the stream ends up in a full buffer with equal
probability capacity/seen: while there is room, items are appended at index
``seen``; afterwards an index is drawn uniformly from {0, ..., seen}
(inclusive, seen+1 outcomes) and the item replaces the occupant only when the
draw lands inside the buffer. Stored features are raw; augmentation happens
at retrieval time in the trainer.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from . import serialize


class EmptyBufferError(RuntimeError):
    """Raised when sampling from a buffer that holds nothing; callers must guard."""


class ReplayBuffer:
    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = int(capacity)
        self.rng = rng
        self.seen = 0
        self._features: list = []
        self._labels: list = []
        self._tasks: list = []

    def __len__(self) -> int:
        return len(self._features)

    def insert(self, features: np.ndarray, label: int, task_id: int = -1) -> None:
        """Offer one sample to the reservoir; the seen-count always advances."""
        features = np.asarray(features, dtype=np.float64)
        if not np.all(np.isfinite(features)):
            raise ValueError("insert: features must be finite")
        if self.capacity > self.seen:
            self._features.append(features)
            self._labels.append(int(label))
            self._tasks.append(int(task_id))
        else:
            i = int(self.rng.integers(0, self.seen + 1))
            if i < self.capacity:
                self._features[i] = features
                self._labels[i] = int(label)
                self._tasks[i] = int(task_id)
        self.seen += 1

    def sample(self, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Uniform draw of min(k, len) stored items without replacement."""
        n = len(self._features)
        if n == 0:
            raise EmptyBufferError("sample: buffer is empty")
        if k < 1:
            raise ValueError(f"sample: k must be >= 1, got {k}")
        idx = self.rng.choice(n, size=min(k, n), replace=False)
        x = np.stack([self._features[i] for i in idx])
        y = np.array([self._labels[i] for i in idx], dtype=np.int64)
        t = np.array([self._tasks[i] for i in idx], dtype=np.int64)
        return x, y, t

    def labels(self) -> np.ndarray:
        return np.array(self._labels, dtype=np.int64)

    # -- snapshot ------------------------------------------------------------

    def state_arrays(self) -> dict:
        n = len(self._features)
        feats = np.stack(self._features) if n else np.zeros((0, 0))
        return {
            "features": feats.astype(np.float64),
            "labels": np.array(self._labels, dtype=np.float64),
            "task_ids": np.array(self._tasks, dtype=np.float64),
            "seen": np.array([float(self.seen)]),
            "capacity": np.array([float(self.capacity)]),
        }

    def save(self, path) -> None:
        serialize.save_tensors(path, self.state_arrays())

    @classmethod
    def restore(cls, arrays: dict, rng: np.random.Generator) -> "ReplayBuffer":
        buf = cls(capacity=int(arrays["capacity"][0]), rng=rng)
        buf.seen = int(arrays["seen"][0])
        feats = arrays["features"]
        buf._features = [feats[i].copy() for i in range(feats.shape[0])]
        buf._labels = [int(v) for v in arrays["labels"]]
        buf._tasks = [int(v) for v in arrays["task_ids"]]
        return buf

    @classmethod
    def load(cls, path, rng: np.random.Generator) -> "ReplayBuffer":
        arrays, _ = serialize.load_tensors(path)
        return cls.restore(arrays, rng)
