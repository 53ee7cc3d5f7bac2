"""Model components: encoder, linear classifier, projection heads, EMA mirror.

The learner is four MLP blocks sharing one parameter store:

* ``f`` encoder: input -> feature space (ReLU after every affine layer)
* ``g_lin`` classifier: single affine map, features -> logits
* ``h`` projection head: features -> l2-normalized contrastive embedding
* ``g_mlp`` classifier projection: logits -> l2-normalized embedding

The EMA mirror holds a same-shaped parameter copy updated stochastically:
with probability equal to the update rate, blend decay*ema + (1-decay)*model.
EMA parameters never require gradients, so anything computed from them is a
detached teacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .tensor import DTYPES, ShapeError, Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Widths of the four components. Each tuple ends at that block's output dim."""

    input_dim: int
    num_classes: int
    encoder_widths: Tuple[int, ...] = (64, 32)
    proj_head_widths: Tuple[int, ...] = (128, 128, 128)
    clf_proj_widths: Tuple[int, ...] = (64, 32)

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        for name in ("encoder_widths", "proj_head_widths", "clf_proj_widths"):
            widths = getattr(self, name)
            if len(widths) == 0 or any(w < 1 for w in widths):
                raise ValueError(f"{name} must be a non-empty tuple of positive widths")
            object.__setattr__(self, name, tuple(int(w) for w in widths))

    @property
    def feature_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def proj_dim(self) -> int:
        return self.proj_head_widths[-1]

    @property
    def clf_proj_dim(self) -> int:
        return self.clf_proj_widths[-1]


def _layer_plan(config: ModelConfig):
    """(name, fan_in, fan_out) for every affine layer, in a fixed order."""
    plan = []
    prev = config.input_dim
    for i, w in enumerate(config.encoder_widths):
        plan.append((f"f.{i}", prev, w))
        prev = w
    plan.append(("g_lin", config.feature_dim, config.num_classes))
    prev = config.feature_dim
    for i, w in enumerate(config.proj_head_widths):
        plan.append((f"h.{i}", prev, w))
        prev = w
    prev = config.num_classes
    for i, w in enumerate(config.clf_proj_widths):
        plan.append((f"g_mlp.{i}", prev, w))
        prev = w
    return plan


class ContinualModel:
    """Named parameter store for the four learnable components."""

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def build(cls, config: ModelConfig, rng: np.random.Generator,
              precision: str = "float64") -> "ContinualModel":
        """Fresh model with symmetric uniform fan-in init, drawn from ``rng``."""
        dtype = DTYPES[precision]
        params: Dict[str, Tensor] = {}
        for name, fan_in, fan_out in _layer_plan(config):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=(1, fan_out))
            params[f"{name}.W"] = Tensor(w.astype(dtype), requires_grad=True)
            params[f"{name}.b"] = Tensor(b.astype(dtype), requires_grad=True)
        return cls(config, params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def component_params(self, component: str) -> Dict[str, Tensor]:
        """Parameters of one component ('f', 'g_lin', 'h', 'g_mlp')."""
        prefix = component + "."
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}


def _affine(x: Tensor, params: Dict[str, Tensor], name: str) -> Tensor:
    w = params[f"{name}.W"]
    b = params[f"{name}.b"]
    ones = Tensor(np.ones((x.shape[0], 1), dtype=x.dtype))
    return x @ w + ones @ b


def _mlp(x: Tensor, params: Dict[str, Tensor], prefix: str, n_layers: int,
         relu_last: bool) -> Tensor:
    for i in range(n_layers):
        x = _affine(x, params, f"{prefix}.{i}")
        if relu_last or i < n_layers - 1:
            x = x.relu()
    return x


def _forward(params: Dict[str, Tensor], config: ModelConfig,
             x: Tensor) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    if x.data.ndim != 2 or x.shape[1] != config.input_dim:
        raise ShapeError(
            f"forward: expected input of shape (b, {config.input_dim}), got {x.shape}")
    feats = _mlp(x, params, "f", len(config.encoder_widths), relu_last=True)
    logits = _affine(feats, params, "g_lin")
    z = _mlp(feats, params, "h", len(config.proj_head_widths), relu_last=False).normalize_rows()
    c = _mlp(logits, params, "g_mlp", len(config.clf_proj_widths), relu_last=False).normalize_rows()
    return feats, logits, z, c


def forward_all(model: ContinualModel, x: Tensor) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """Full forward pass: (features, logits, unit projection, unit classifier projection)."""
    return _forward(model.params, model.config, x)


def encode_project(model: ContinualModel, x: Tensor) -> Tensor:
    """Contrastive branch only: l2-normalized projection-head output."""
    if x.data.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"forward: expected input of shape (b, {model.config.input_dim}), got {x.shape}")
    feats = _mlp(x, model.params, "f", len(model.config.encoder_widths), relu_last=True)
    return _mlp(feats, model.params, "h", len(model.config.proj_head_widths),
                relu_last=False).normalize_rows()


@dataclass
class EmaState:
    """Exponential-moving-average mirror of a model's parameters.

    ``params`` never require gradients; outputs computed from them are
    detached teachers. The random source is dedicated to the firing draw.
    """

    params: Dict[str, Tensor]
    decay: float
    update_rate: float
    rng: np.random.Generator = field(repr=False, default_factory=np.random.default_rng)

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must be in [0, 1], got {self.decay}")
        if not 0.0 <= self.update_rate <= 1.0:
            raise ValueError(f"update_rate must be in [0, 1], got {self.update_rate}")

    @classmethod
    def from_model(cls, model: ContinualModel, decay: float, update_rate: float,
                   rng: np.random.Generator) -> "EmaState":
        params = {name: Tensor(p.data.copy()) for name, p in model.params.items()}
        return cls(params=params, decay=decay, update_rate=update_rate, rng=rng)


def ema_update(ema: EmaState, model: ContinualModel) -> bool:
    """One stochastic blend step; returns whether the update fired.

    The uniform draw is taken from (0, 1], so update_rate 0 never fires and
    update_rate 1 always fires, exactly.
    """
    if ema.params.keys() != model.params.keys():
        raise ShapeError("ema_update: parameter names differ between EMA and model")
    u = 1.0 - ema.rng.random()
    if ema.update_rate < u:
        return False
    eta = ema.decay
    for name, p in model.params.items():
        mirror = ema.params[name]
        if mirror.data.shape != p.data.shape:
            raise ShapeError(f"ema_update: shape mismatch for '{name}': "
                             f"{mirror.data.shape} vs {p.data.shape}")
        mirror.data = eta * mirror.data + (1.0 - eta) * p.data
    return True


def ema_forward(ema: EmaState, config: ModelConfig,
                x: Tensor) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    """Forward pass through the EMA parameters; outputs carry no gradients."""
    return _forward(ema.params, config, x)
