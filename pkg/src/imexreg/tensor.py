"""Dense tensors with reverse-mode automatic differentiation.

Arrays are numpy, double precision by default (single selectable per run).
Every operation validates shapes up front, checks the committed result for
NaN/Inf, and records a tape node only when some input requires gradients.
Broadcasting is deliberately not supported beyond scalar-times-tensor, so
shape bugs surface as errors instead of silent expansion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DTYPES = {"float64": np.float64, "float32": np.float32}

# Rows with l2 norm below this get the epsilon added to the denominator
# instead of dividing by ~0 (normalize_rows).
_NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform to the requested operation."""


class NumericError(ArithmeticError):
    """An operation committed a NaN or Inf value."""


class DeterminismError(RuntimeError):
    """A graph constructor produced different values on identical inputs."""


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=DTYPES.get(dtype, dtype))
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A dense value plus the bookkeeping needed by :func:`backward`.

    ``data`` is treated as immutable once committed: every op allocates a
    fresh array and parameter updates rebind ``data`` rather than writing in
    place (backward closures capture the arrays they need at record time).
    ``grad`` is the one mutable slot; it accumulates across backward() calls
    until cleared.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("non-finite values in tensor construction")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._vjp = None

    # -- tape plumbing ----------------------------------------------------

    @classmethod
    def _result(cls, data: np.ndarray, op: str, parents, vjp) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite result in op '{op}'")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- elementwise / scalar ops ------------------------------------------

    def _check_same_shape(self, other: "Tensor", op: str):
        if self.data.shape != other.data.shape:
            raise ShapeError(f"{op}: shapes {self.data.shape} and {other.data.shape} do not conform")

    def __add__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(other, "add")
            return Tensor._result(self.data + other.data, "add", (self, other), lambda g: (g, g))
        c = float(other)
        return Tensor._result(self.data + c, "add", (self,), lambda g: (g,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(other, "sub")
            return Tensor._result(self.data - other.data, "sub", (self, other), lambda g: (g, -g))
        c = float(other)
        return Tensor._result(self.data - c, "sub", (self,), lambda g: (g,))

    def __rsub__(self, other):
        c = float(other)
        return Tensor._result(c - self.data, "sub", (self,), lambda g: (-g,))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            self._check_same_shape(other, "mul")
            a, b = self.data, other.data
            return Tensor._result(a * b, "mul", (self, other), lambda g: (g * b, g * a))
        return self.scale(float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c: float) -> "Tensor":
        c = float(c)
        return Tensor._result(self.data * c, "scale", (self,), lambda g: (g * c,))

    # -- linear algebra ----------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            other = Tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(
                f"matmul: operands must be 2-d, got {self.data.shape} and {other.data.shape}")
        if self.data.shape[1] != other.data.shape[0]:
            raise ShapeError(
                f"matmul: inner extents differ, {self.data.shape} @ {other.data.shape}")
        a, b = self.data, other.data
        return Tensor._result(a @ b, "matmul", (self, other),
                              lambda g: (g @ b.T, a.T @ g))

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose: expected 2-d, got shape {self.data.shape}")
        return Tensor._result(np.ascontiguousarray(self.data.T), "transpose", (self,),
                              lambda g: (g.T,))

    # -- nonlinearities ------------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._result(self.data * mask, "relu", (self,), lambda g: (g * mask,))

    def log(self) -> "Tensor":
        x = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(x)
        return Tensor._result(out, "log", (self,), lambda g: (g / x,))

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return Tensor._result(out, "exp", (self,), lambda g: (g * out,))

    def softmax_rows(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"softmax_rows: expected 2-d, got shape {self.data.shape}")
        shifted = self.data - self.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

        return Tensor._result(p, "softmax_rows", (self,), vjp)

    def normalize_rows(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"normalize_rows: expected 2-d, got shape {self.data.shape}")
        norms = np.sqrt((self.data ** 2).sum(axis=1, keepdims=True))
        denom = np.where(norms < _NORM_EPS, norms + _NORM_EPS, norms)
        out = self.data / denom

        def vjp(g):
            return ((g - out * (g * out).sum(axis=1, keepdims=True)) / denom,)

        return Tensor._result(out, "normalize_rows", (self,), vjp)

    # -- reductions ----------------------------------------------------------

    def sum(self) -> "Tensor":
        shape = self.data.shape
        return Tensor._result(np.asarray(self.data.sum()), "sum", (self,),
                              lambda g: (np.full(shape, g, dtype=self.data.dtype),))

    def mean(self) -> "Tensor":
        shape = self.data.shape
        size = self.data.size
        return Tensor._result(np.asarray(self.data.mean()), "mean", (self,),
                              lambda g: (np.full(shape, g / size, dtype=self.data.dtype),))

    def sum_rows(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"sum_rows: expected 2-d, got shape {self.data.shape}")
        cols = self.data.shape[1]
        dtype = self.data.dtype
        return Tensor._result(self.data.sum(axis=1), "sum_rows", (self,),
                              lambda g: (g[:, None] * np.ones((1, cols), dtype=dtype),))

    def mean_rows(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"mean_rows: expected 2-d, got shape {self.data.shape}")
        cols = self.data.shape[1]
        dtype = self.data.dtype
        return Tensor._result(self.data.mean(axis=1), "mean_rows", (self,),
                              lambda g: (g[:, None] * np.full((1, cols), 1.0 / cols, dtype=dtype),))

    def sq_norm(self) -> "Tensor":
        """Squared Frobenius norm (sum of squared entries) as a scalar."""
        x = self.data
        return Tensor._result(np.asarray((x ** 2).sum()), "sq_norm", (self,),
                              lambda g: (2.0 * x * g,))

    # -- gradient control ------------------------------------------------------

    def detach(self) -> "Tensor":
        """Stop-gradient: same value, severed from the tape."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.op = "stop_gradient"
        out._parents = ()
        out._vjp = None
        return out

    def backward(self):
        return backward(self)


def _topo_from(root: Tensor):
    """Reverse-topological order (root first) over recorded tape nodes."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def backward(root: Tensor) -> dict:
    """Accumulate d(root)/d(leaf) into every reachable grad-requiring leaf.

    Intermediate gradients live in a local map, so calling backward twice on
    fresh graphs accumulates correctly in the leaves. Returns the map of
    leaves reached by this call; leaves untouched by the graph simply do not
    appear (their gradient is zero).
    """
    if root.data.shape != ():
        raise ShapeError(f"backward: root must be a scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return {}
    grads = {id(root): np.asarray(1.0, dtype=root.data.dtype)}
    leaf_grads = {}
    for node in _topo_from(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg
        else:
            node.grad = np.array(g, dtype=node.data.dtype) if node.grad is None else node.grad + g
            leaf_grads[node] = node.grad
    return leaf_grads


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


@dataclass
class GradCheckReport:
    """Per-leaf comparison of analytic gradients against central differences."""

    h: float
    tol: float
    max_error: float = 0.0
    errors: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flagged


def grad_check(build, leaves, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients with central finite differences.

    ``build`` must construct a scalar Tensor from the current contents of
    ``leaves`` (a sequence or name->Tensor mapping) and be deterministic;
    it is invoked twice to verify that. Leaves must be double precision.
    Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator so
    near-zero entries are compared on an absolute footing.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    named = leaves if isinstance(leaves, dict) else {f"leaf{i}": t for i, t in enumerate(leaves)}
    for name, t in named.items():
        if t.data.dtype != np.float64:
            raise ValueError(f"grad_check: leaf '{name}' must be float64")
        if not t.requires_grad:
            raise ValueError(f"grad_check: leaf '{name}' does not require grad")

    first = build()
    second = build()
    if first.data.shape != ():
        raise ShapeError(f"grad_check: build must return a scalar, got shape {first.data.shape}")
    if first.data.tobytes() != second.data.tobytes():
        raise DeterminismError("grad_check: build() returned different values on two calls")

    zero_grad(named.values())
    backward(first)
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in named.items()}

    report = GradCheckReport(h=h, tol=tol)
    # Finite differences run with the tape off: rebind leaf data, never mutate.
    for t in named.values():
        t.requires_grad = False
    try:
        for name, t in named.items():
            base = t.data
            worst = 0.0
            for idx in np.ndindex(base.shape):
                bumped = base.copy()
                bumped[idx] = base[idx] + h
                t.data = bumped
                f_plus = float(build().data)
                bumped = base.copy()
                bumped[idx] = base[idx] - h
                t.data = bumped
                f_minus = float(build().data)
                t.data = base
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = float(analytic[name][idx])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                if err > worst:
                    worst = err
                if err > tol:
                    report.flagged.append((name, idx, a, numeric, err))
            report.errors[name] = worst
            report.max_error = max(report.max_error, worst)
    finally:
        for t in named.values():
            t.requires_grad = True
    return report
