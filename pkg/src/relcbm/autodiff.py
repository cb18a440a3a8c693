"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Forward values live in numpy arrays; every operation on tensors that
require gradients records a graph node, and `backward` on a scalar root
accumulates d(root)/d(tensor) into `.grad` for every reachable tensor.

Max/min reductions route the gradient to the winning element only, with
ties broken by the lowest flat index; an exact tie additionally marks
the node as sitting on a non-differentiable point so numerical checks
can exclude it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(Exception):
    def __init__(self, op: str, shapes):
        super().__init__(f"{op}: incompatible shapes {list(shapes)}")


class NotScalar(Exception):
    pass


class MissingGrad(Exception):
    pass


class InvalidTarget(Exception):
    pass


class _Node:
    __slots__ = ("op", "inputs", "backward_fn", "tie")

    def __init__(self, op: str, inputs: list["Tensor"],
                 backward_fn: Callable[[np.ndarray], list[np.ndarray | None]]):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.tie = False  # set when a max/min hit an exact tie


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: _Node | None = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; constants are lifted to plain tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(op: str, data: np.ndarray, inputs: list[Tensor],
          backward_fn: Callable[[np.ndarray], list[np.ndarray | None]]) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _Node(op, list(inputs), backward_fn)
    return out


def _reduce_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    # undo the row/column/scalar broadcasting allowed in elementwise ops
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    if g.ndim == 2 and shape == (g.shape[1],):
        return g.sum(axis=0)
    if g.ndim == 2 and shape == (g.shape[0], 1):
        return g.sum(axis=1, keepdims=True)
    raise ShapeMismatch("reduce_grad", [g.shape, shape])


def _check_elementwise(op: str, a: Tensor, b: Tensor):
    # allowed: equal shapes, scalar vs anything, row or column vector vs 2-d matrix
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    for m, v in ((sa, sb), (sb, sa)):
        if len(m) == 2 and (v == (m[1],) or v == (m[0], 1)):
            return
    raise ShapeMismatch(op, [sa, sb])


# --- elementwise primitives --------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("add", a, b)
    return _make("add", a.data + b.data, [a, b],
                 lambda g: [_reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("sub", a, b)
    return _make("sub", a.data - b.data, [a, b],
                 lambda g: [_reduce_to_shape(g, a.shape), _reduce_to_shape(-g, b.shape)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("mul", a, b)
    return _make("mul", a.data * b.data, [a, b],
                 lambda g: [_reduce_to_shape(g * b.data, a.shape),
                            _reduce_to_shape(g * a.data, b.shape)])


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise("div", a, b)
    return _make("div", a.data / b.data, [a, b],
                 lambda g: [_reduce_to_shape(g / b.data, a.shape),
                            _reduce_to_shape(-g * a.data / (b.data ** 2), b.shape)])


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first input."""
    if a.shape != b.shape:
        raise ShapeMismatch("maximum", [a.shape, b.shape])
    take_a = a.data >= b.data
    return _make("maximum", np.maximum(a.data, b.data), [a, b],
                 lambda g: [g * take_a, g * ~take_a])


def log(a: Tensor) -> Tensor:
    return _make("log", np.log(a.data), [a], lambda g: [g / a.data])


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    return _make("clamp", np.clip(a.data, lo, hi), [a], lambda g: [g * inside])


def sigmoid(a: Tensor) -> Tensor:
    # stable in both tails; pinched into the open interval so downstream
    # logs and rule semantics never see an exact 0 or 1
    e = np.exp(-np.abs(a.data))
    y = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    y = np.clip(y, 1e-15, 1.0 - 1e-15)
    return _make("sigmoid", y, [a], lambda g: [g * y * (1.0 - y)])


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make("tanh", y, [a], lambda g: [g * (1.0 - y ** 2)])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", a.data * mask, [a], lambda g: [g * mask])


def hard_threshold(a: Tensor, threshold: float = 0.5) -> Tensor:
    """Forward: 1 where a > threshold else 0. Backward: identity
    (straight-through estimator)."""
    return _make("hard_threshold", (a.data > threshold).astype(np.float64), [a],
                 lambda g: [g])


# --- structural primitives ---------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", [a.shape, b.shape])
    return _make("matmul", a.data @ b.data, [a, b],
                 lambda g: [g @ b.data.T, a.data.T @ g])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    shapes = [t.shape for t in tensors]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(s[i] != base[i] for i in range(len(base)) if i != axis):
            raise ShapeMismatch("concat", shapes)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return list(np.split(g, splits, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis),
                 list(tensors), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make("reshape", a.data.reshape(shape), [a], lambda g: [g.reshape(old)])


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows (axis 0) of `a` by an integer index array."""
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise ShapeMismatch("gather", [a.shape, idx.dtype])

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return [out]

    return _make("gather", a.data[idx], [a], backward)


# --- reductions ---------------------------------------------------------------

def _extreme_reduce(op: str, a: Tensor, axis: int | None, is_max: bool) -> Tensor:
    fn = np.max if is_max else np.min
    arg = np.argmax if is_max else np.argmin
    val = fn(a.data, axis=axis)
    if axis is None:
        flat_idx = int(arg(a.data))  # argmax/argmin take the lowest flat index on ties
        tie = int(np.sum(a.data == a.data.flat[flat_idx])) > 1

        def backward(g):
            out = np.zeros_like(a.data)
            out.flat[flat_idx] = g
            return [out]
    else:
        idx = arg(a.data, axis=axis)
        picked = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
        tie = int(np.sum(a.data == picked)) > a.data.size // a.data.shape[axis]

        def backward(g):
            out = np.zeros_like(a.data)
            np.put_along_axis(out, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis=axis)
            return [out]

    t = _make(op, val, [a], backward)
    if t.node is not None:
        t.node.tie = tie
    return t


def max_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    return _extreme_reduce("max_reduce", a, axis, is_max=True)


def min_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    return _extreme_reduce("min_reduce", a, axis, is_max=False)


def sum_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    def backward(g):
        if axis is None:
            return [np.full_like(a.data, g)]
        return [np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()]

    return _make("sum_reduce", a.data.sum(axis=axis), [a], backward)


def mean_reduce(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is None:
            return [np.full_like(a.data, g / n)]
        return [np.broadcast_to(np.expand_dims(g, axis), a.shape).copy() / n]

    return _make("mean_reduce", a.data.mean(axis=axis), [a], backward)


def softmax(a: Tensor) -> Tensor:
    """Row softmax of a 2-d tensor; rows sum to 1."""
    if a.data.ndim != 2:
        raise ShapeMismatch("softmax", [a.shape])
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return [(g - dot) * y]

    return _make("softmax", y, [a], backward)


def segment_reduce(a: Tensor, starts: np.ndarray, kind: str) -> Tensor:
    """Per-segment max/min of a 1-d tensor.

    Segments are contiguous, non-empty, and cover `a`: segment i spans
    [starts[i], starts[i+1]).  Gradient routes to the first extreme
    element of each segment.
    """
    if a.data.ndim != 1:
        raise ShapeMismatch("segment_reduce", [a.shape])
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size == 0 or starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] >= a.data.size:
        raise ShapeMismatch("segment_reduce", [a.shape, starts.shape])
    ufunc = np.maximum if kind == "max" else np.minimum
    val = ufunc.reduceat(a.data, starts)

    n = a.data.shape[0]
    seg_of = np.zeros(n, dtype=np.int64)
    seg_of[starts[1:]] = 1
    seg_of = np.cumsum(seg_of)
    hit = a.data == val[seg_of]
    order = np.arange(n)
    first_hit = np.minimum.reduceat(np.where(hit, order, n), starts)
    tie = int(hit.sum()) > len(starts)

    def backward(g):
        out = np.zeros_like(a.data)
        out[first_hit] = g
        return [out]

    t = _make(f"segment_{kind}", val, [a], backward)
    if t.node is not None:
        t.node.tie = tie
    return t


# --- generic dispatch ---------------------------------------------------------

PRIMITIVES: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "maximum": maximum,
    "matmul": matmul,
    "concat": concat,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "log": log,
    "clamp": clamp,
    "gather": gather,
    "reshape": reshape,
    "max_reduce": max_reduce,
    "min_reduce": min_reduce,
    "sum_reduce": sum_reduce,
    "mean_reduce": mean_reduce,
    "segment_reduce": segment_reduce,
    "hard_threshold": hard_threshold,
}


def apply_primitive(op: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    if op not in PRIMITIVES:
        raise KeyError(f"unknown primitive '{op}'")
    fn = PRIMITIVES[op]
    if op == "concat":
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


# --- backward pass -------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Populate `.grad` on every reachable requires_grad tensor.

    Gradients accumulate; callers zero them between steps.
    """
    if root.data.size != 1:
        raise NotScalar(f"backward root must be scalar, got shape {root.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, processed = stack.pop()
        if processed:
            topo.append(t)
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(topo):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        if t.node is None:
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            pg = np.asarray(pg, dtype=np.float64)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def graph_has_tie(root: Tensor) -> bool:
    """True if any max/min reduction under `root` hit an exact tie."""
    stack = [root]
    seen = set()
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            if t.node.tie:
                return True
            stack.extend(t.node.inputs)
    return False


# --- losses --------------------------------------------------------------------

LOG_EPS = 1e-7


def loss_eval(kind: str, prediction: Tensor, target: Tensor | np.ndarray) -> Tensor:
    """Mean binary cross-entropy or categorical cross-entropy.

    bce: prediction and target share a shape, target in {0,1}.
    ce: prediction rows are distributions, target holds class indices.
    Predictions are clamped to [1e-7, 1-1e-7] before the log.
    """
    if kind == "bce":
        target = _lift(target)
        if prediction.shape != target.shape:
            raise ShapeMismatch("bce", [prediction.shape, target.shape])
        tv = target.data
        if not np.all((tv == 0.0) | (tv == 1.0)):
            raise InvalidTarget("bce targets must be 0 or 1")
        p = clamp(prediction, LOG_EPS, 1.0 - LOG_EPS)
        one = Tensor(np.ones_like(p.data))
        ll = target * log(p) + (one - target) * log(one - p)
        return Tensor(0.0) - mean_reduce(ll)
    if kind == "ce":
        idx = np.asarray(target)
        if prediction.data.ndim != 2:
            raise ShapeMismatch("ce", [prediction.shape])
        if idx.shape != (prediction.shape[0],) or idx.dtype.kind not in "iu":
            raise InvalidTarget("ce targets must be one class index per row")
        if idx.min() < 0 or idx.max() >= prediction.shape[1]:
            raise InvalidTarget("ce class index out of range")
        onehot = np.zeros(prediction.shape)
        onehot[np.arange(len(idx)), idx] = 1.0
        p = clamp(prediction, LOG_EPS, 1.0 - LOG_EPS)
        picked = sum_reduce(mul(log(p), Tensor(onehot)), axis=1)
        return Tensor(0.0) - mean_reduce(picked)
    raise ValueError(f"unknown loss kind '{kind}'")


# --- parameters and optimizers ---------------------------------------------------

@dataclass
class Parameter:
    name: str
    tensor: Tensor

    def __post_init__(self):
        self.tensor.requires_grad = True


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    moments: dict = field(default_factory=dict)  # name -> (m, v)


def optimizer_step(state: OptimizerState, params: Sequence[Parameter]) -> None:
    """Apply one SGD or Adam update; grads are left untouched."""
    state.step_count += 1
    for p in params:
        g = p.tensor.grad
        if g is None:
            raise MissingGrad(p.name)
        if state.kind == "sgd":
            p.tensor.data -= state.learning_rate * g
        elif state.kind == "adam":
            m, v = state.moments.get(p.name, (np.zeros_like(g), np.zeros_like(g)))
            m = state.beta1 * m + (1 - state.beta1) * g
            v = state.beta2 * v + (1 - state.beta2) * g ** 2
            state.moments[p.name] = (m, v)
            m_hat = m / (1 - state.beta1 ** state.step_count)
            v_hat = v / (1 - state.beta2 ** state.step_count)
            p.tensor.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        else:
            raise ValueError(f"unknown optimizer '{state.kind}'")


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.tensor.zero_grad()


# --- numerical check --------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    excluded_tie: bool = False

    def __repr__(self):
        status = "EXCLUDED (tie)" if self.excluded_tie else ("PASS" if self.passed else "FAIL")
        return f"max relative error {self.max_rel_error:.3e} <= {self.tolerance:.1e}: {status}"


def gradient_check(f: Callable[[Tensor], Tensor], x: Tensor, tol: float = 1e-4,
                   h: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar-valued `f` at `x` against
    central finite differences.

    Points where a max/min reduction ties exactly are non-differentiable
    and reported as excluded rather than pass/fail.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise NotScalar("gradient_check needs a scalar-valued function")
    if graph_has_tie(out):
        return GradCheckReport(float("nan"), tol, passed=True, excluded_tie=True)
    backward(out)
    analytic = probe.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.copy()
    for i in range(flat.size):
        for sign in (+1.0, -1.0):
            bumped = flat.copy()
            bumped.flat[i] += sign * h
            val = f(Tensor(bumped)).item()
            numeric.flat[i] += sign * val
    numeric /= 2 * h

    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    max_rel = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    return GradCheckReport(max_rel, tol, passed=max_rel <= tol)


# --- checkpoints -------------------------------------------------------------------

def save_params(path, params: Sequence[Parameter]) -> None:
    blob = {
        p.name: {"shape": list(p.tensor.shape), "data": p.tensor.data.reshape(-1).tolist()}
        for p in params
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    return {
        name: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in blob.items()
    }
