"""Loss terms: rehearsal cross-entropy, supervised contrastive, EMA
consistency, Gram-matrix alignment, and their weighted composite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .tensor import ShapeError, Tensor

_UNIT_ROW_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    """Composite weights: alpha (contrastive), beta (Gram alignment),
    lam (consistency), tau (contrastive temperature)."""

    alpha: float = 0.1
    beta: float = 0.3
    lam: float = 0.15
    tau: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta", "lam", "tau"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            if v < 0:
                raise ValueError(f"{name} must be non-negative, got {v}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass
class LossBreakdown:
    er: float = 0.0
    rep: float = 0.0
    ecr: float = 0.0
    cr_g: float = 0.0
    cr_h: float = 0.0
    total: float = 0.0


def _check_unit_rows(m: Tensor, op: str):
    norms = np.sqrt((m.data ** 2).sum(axis=1))
    worst = float(np.abs(norms - 1.0).max()) if norms.size else 0.0
    if worst > _UNIT_ROW_TOL:
        raise ValueError(f"{op}: rows must be unit-norm (max deviation {worst:.3g})")


def er_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels."""
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        raise ValueError(f"er_loss: labels must be integers, got dtype {labels.dtype}")
    if logits.data.ndim != 2:
        raise ShapeError(f"er_loss: logits must be 2-d, got shape {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"er_loss: expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"er_loss: labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    onehot = np.zeros((b, k), dtype=logits.dtype)
    onehot[np.arange(b), labels] = 1.0
    log_probs = logits.softmax_rows().log()
    return -((log_probs * Tensor(onehot)).sum_rows().mean())


def supcon_loss(z: Tensor, labels, tau: float) -> Tensor:
    """Supervised contrastive loss over unit-norm rows.

    Per anchor i, pulls same-class rows together and pushes the rest of the
    batch away at temperature tau; anchors without positives contribute 0.
    The result is the sum over anchors (no batch normalization factor).
    """
    if tau <= 0:
        raise ValueError(f"supcon_loss: tau must be positive, got {tau}")
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("supcon_loss: need at least two rows (the negative set is empty)")
    if labels.shape != (n,):
        raise ShapeError(f"supcon_loss: expected {n} labels, got shape {labels.shape}")
    _check_unit_rows(z, "supcon_loss")

    dtype = z.dtype
    same = (labels[:, None] == labels[None, :])
    not_self = ~np.eye(n, dtype=bool)
    pos_mask = (same & not_self).astype(dtype)
    neg_mask = not_self.astype(dtype)
    pos_counts = pos_mask.sum(axis=1)
    has_pos = (pos_counts > 0).astype(dtype)
    inv_counts = np.divide(1.0, pos_counts, out=np.zeros_like(pos_counts),
                           where=pos_counts > 0)

    sims = (z @ z.transpose()).scale(1.0 / tau)
    log_denom = (sims.exp() * Tensor(neg_mask)).sum_rows().log()
    pos_mean = (sims * Tensor(pos_mask)).sum_rows() * Tensor(inv_counts)
    per_anchor = pos_mean - log_denom * Tensor(has_pos)
    return -per_anchor.sum()


def consistency_losses(logits: Tensor, proj: Tensor, logits_teacher: Tensor,
                       proj_teacher: Tensor) -> Tuple[Tensor, Tensor]:
    """Batch-mean squared distance between student and teacher responses.

    Teachers are detached defensively; gradients never reach them.
    """
    if logits.shape != logits_teacher.shape:
        raise ShapeError(f"consistency_losses: logit shapes {logits.shape} vs "
                         f"{logits_teacher.shape}")
    if proj.shape != proj_teacher.shape:
        raise ShapeError(f"consistency_losses: projection shapes {proj.shape} vs "
                         f"{proj_teacher.shape}")
    b = logits.shape[0]
    cr_g = (logits - logits_teacher.detach()).sq_norm().scale(1.0 / b)
    cr_h = (proj - proj_teacher.detach()).sq_norm().scale(1.0 / b)
    return cr_g, cr_h


def gram(m: Tensor) -> Tensor:
    """Pairwise inner products of unit rows: m @ m.T."""
    _check_unit_rows(m, "gram")
    return m @ m.transpose()


def ecr_loss(z: Tensor, c: Tensor) -> Tensor:
    """Mean squared difference between the two Gram matrices, with the
    projection-head Gram stop-gradiented so only the classifier path learns."""
    if z.shape[0] != c.shape[0]:
        raise ShapeError(f"ecr_loss: row counts differ, {z.shape[0]} vs {c.shape[0]}")
    b = z.shape[0]
    target = gram(z).detach()
    return (target - gram(c)).sq_norm().scale(1.0 / (b * b))


def total_loss(er: Tensor, rep: Optional[Tensor], ecr: Optional[Tensor],
               cr_g: Optional[Tensor], cr_h: Optional[Tensor],
               weights: LossWeights, buffer_nonempty: bool) -> Tuple[Tensor, LossBreakdown]:
    """Weighted composite; consistency terms contribute 0 when the buffer is
    empty. Inactive terms may be passed as None."""
    total = er
    if rep is not None and weights.alpha > 0:
        total = total + rep.scale(weights.alpha)
    if ecr is not None and weights.beta > 0:
        total = total + ecr.scale(weights.beta)
    use_cr = buffer_nonempty and cr_g is not None and cr_h is not None
    if use_cr and weights.lam > 0:
        total = total + (cr_g + cr_h).scale(weights.lam)
    parts = LossBreakdown(
        er=float(er.data),
        rep=float(rep.data) if rep is not None else 0.0,
        ecr=float(ecr.data) if ecr is not None else 0.0,
        cr_g=float(cr_g.data) if use_cr else 0.0,
        cr_h=float(cr_h.data) if use_cr else 0.0,
        total=float(total.data),
    )
    return total, parts
