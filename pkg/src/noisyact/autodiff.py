"""Minimal dense-tensor reverse-mode automatic differentiation.

Values are plain float64 numpy arrays; a `Tape` records primitive
operations as they execute (define-by-run) and `Tape.backward` replays
them in reverse to accumulate gradients. The primitive set is exactly
what feed-forward and gated recurrent models in this package need --
no broadcasting beyond the bias pattern (a rank-1 vector against the
last axis), no views, no higher-order derivatives.

Kink conventions, chosen so gradients keep flowing at saturation
boundaries:

* ``clip``: the derivative at exactly ``lo`` or ``hi`` is 1 (the
  one-sided derivative from the linear side).
* ``sign``: derivative identically 0 (a piecewise-constant switch).
* ``abs``: derivative ``sign(x)`` with 0 at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, TypeAlias

import numpy as np

Tensor: TypeAlias = np.ndarray
VarId: TypeAlias = int


def as_tensor(value) -> Tensor:
    """Coerce to a float64 ndarray (scalars become 0-d arrays)."""
    return np.asarray(value, dtype=np.float64)


def stable_sigmoid(x: Tensor) -> Tensor:
    """Logistic function computed without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Parameter:
    """A named, trainable leaf value. The optimizer mutates ``value``."""

    def __init__(self, name: str, value) -> None:
        self.name = name
        self.value = as_tensor(value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


@dataclass(frozen=True, slots=True)
class Node:
    kind: str
    inputs: tuple[VarId, ...]
    value: Tensor
    aux: tuple


# ---------------------------------------------------------------------------
# Forward evaluation and vector-Jacobian products, keyed by primitive kind.
# A vjp takes (input values, output value, aux, upstream gradient) and
# returns one gradient per input.

_FORWARD: dict[str, Callable] = {}
_VJP: dict[str, Callable] = {}


def _primitive(kind: str):
    def register(fn):
        _FORWARD[kind] = fn
        return fn

    return register


def _vjp(kind: str):
    def register(fn):
        _VJP[kind] = fn
        return fn

    return register


@_primitive("add")
def _f_add(vals, aux):
    return vals[0] + vals[1]


@_vjp("add")
def _b_add(vals, out, aux, g):
    return g, g


@_primitive("sub")
def _f_sub(vals, aux):
    return vals[0] - vals[1]


@_vjp("sub")
def _b_sub(vals, out, aux, g):
    return g, -g


@_primitive("mul")
def _f_mul(vals, aux):
    return vals[0] * vals[1]


@_vjp("mul")
def _b_mul(vals, out, aux, g):
    return g * vals[1], g * vals[0]


@_primitive("matmul")
def _f_matmul(vals, aux):
    return vals[0] @ vals[1]


@_vjp("matmul")
def _b_matmul(vals, out, aux, g):
    a, b = vals
    return g @ b.T, a.T @ g


@_primitive("broadcast_add")
def _f_broadcast_add(vals, aux):
    return vals[0] + vals[1]


@_vjp("broadcast_add")
def _b_broadcast_add(vals, out, aux, g):
    x, b = vals
    lead = tuple(range(x.ndim - 1))
    return g, g.sum(axis=lead) if lead else g.copy()


@_primitive("broadcast_mul")
def _f_broadcast_mul(vals, aux):
    return vals[0] * vals[1]


@_vjp("broadcast_mul")
def _b_broadcast_mul(vals, out, aux, g):
    x, s = vals
    gx = g * s
    if s.ndim == 0:
        gs = (g * x).sum()
    else:
        lead = tuple(range(x.ndim - 1))
        gs = (g * x).sum(axis=lead) if lead else (g * x)
    return gx, np.asarray(gs)


@_primitive("scalar_mul")
def _f_scalar_mul(vals, aux):
    return vals[0] * aux[0]


@_vjp("scalar_mul")
def _b_scalar_mul(vals, out, aux, g):
    return (g * aux[0],)


@_primitive("add_scalar")
def _f_add_scalar(vals, aux):
    return vals[0] + aux[0]


@_vjp("add_scalar")
def _b_add_scalar(vals, out, aux, g):
    return (g,)


@_primitive("clip")
def _f_clip(vals, aux):
    lo, hi = aux
    return np.clip(vals[0], lo, hi)


@_vjp("clip")
def _b_clip(vals, out, aux, g):
    lo, hi = aux
    x = vals[0]
    # boundary points count as interior: derivative 1 at x == lo or x == hi
    return (g * ((x >= lo) & (x <= hi)),)


@_primitive("sigmoid")
def _f_sigmoid(vals, aux):
    return stable_sigmoid(vals[0])


@_vjp("sigmoid")
def _b_sigmoid(vals, out, aux, g):
    return (g * out * (1.0 - out),)


@_primitive("tanh")
def _f_tanh(vals, aux):
    return np.tanh(vals[0])


@_vjp("tanh")
def _b_tanh(vals, out, aux, g):
    return (g * (1.0 - out * out),)


@_primitive("exp")
def _f_exp(vals, aux):
    return np.exp(vals[0])


@_vjp("exp")
def _b_exp(vals, out, aux, g):
    return (g * out,)


@_primitive("log")
def _f_log(vals, aux):
    # NaN/-inf propagate for non-positive inputs
    return np.log(vals[0])


@_vjp("log")
def _b_log(vals, out, aux, g):
    return (g / vals[0],)


@_primitive("square")
def _f_square(vals, aux):
    return vals[0] * vals[0]


@_vjp("square")
def _b_square(vals, out, aux, g):
    return (g * 2.0 * vals[0],)


@_primitive("abs")
def _f_abs(vals, aux):
    return np.abs(vals[0])


@_vjp("abs")
def _b_abs(vals, out, aux, g):
    return (g * np.sign(vals[0]),)


@_primitive("sign")
def _f_sign(vals, aux):
    return np.sign(vals[0])


@_vjp("sign")
def _b_sign(vals, out, aux, g):
    return (np.zeros_like(vals[0]),)


@_primitive("select")
def _f_select(vals, aux):
    mask = aux[0]
    return np.where(mask, vals[0], vals[1])


@_vjp("select")
def _b_select(vals, out, aux, g):
    mask = aux[0]
    return g * mask, g * ~mask


@_primitive("sum")
def _f_sum(vals, aux):
    return np.asarray(vals[0].sum())


@_vjp("sum")
def _b_sum(vals, out, aux, g):
    return (np.full(vals[0].shape, float(g)),)


@_primitive("mean_axis")
def _f_mean_axis(vals, aux):
    return vals[0].mean(axis=aux[0])


@_vjp("mean_axis")
def _b_mean_axis(vals, out, aux, g):
    axis = aux[0]
    x = vals[0]
    n = x.shape[axis]
    return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)


@_primitive("softmax_cross_entropy")
def _f_sce(vals, aux):
    logits = vals[0]
    labels = aux[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(z.shape[0]), labels]
    return np.asarray(nll.mean())


@_vjp("softmax_cross_entropy")
def _b_sce(vals, out, aux, g):
    logits = vals[0]
    labels = aux[0]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    probs[np.arange(z.shape[0]), labels] -= 1.0
    return (g * probs / z.shape[0],)


class Tape:
    """An append-only record of primitive operations in execution order.

    Node inputs always precede the node itself, so insertion order is a
    topological order and a single reverse sweep suffices for backward.
    A tape is single-threaded and never shared mutably.
    """

    def __init__(self) -> None:
        self._nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def value(self, v: VarId) -> Tensor:
        return self._nodes[v].value

    def shape(self, v: VarId) -> tuple[int, ...]:
        return self._nodes[v].value.shape

    # -- recording ----------------------------------------------------------

    def leaf(self, value) -> VarId:
        """Record an input node (parameter, constant, or sample)."""
        node = Node("leaf", (), as_tensor(value), ())
        self._nodes.append(node)
        return len(self._nodes) - 1

    constant = leaf

    def record(self, kind: str, inputs: list[VarId] | tuple[VarId, ...], *aux) -> VarId:
        """Record one primitive and evaluate it immediately."""
        if kind not in _FORWARD:
            raise ValueError(f"unknown primitive kind: {kind!r}")
        for v in inputs:
            if not 0 <= v < len(self._nodes):
                raise ValueError(f"{kind}: input id {v} is not on this tape")
        vals = tuple(self._nodes[v].value for v in inputs)
        out = as_tensor(_FORWARD[kind](vals, aux))
        self._nodes.append(Node(kind, tuple(inputs), out, aux))
        return len(self._nodes) - 1

    # -- shape-checked public primitives -------------------------------------

    def _check_same_shape(self, kind: str, a: VarId, b: VarId) -> None:
        sa, sb = self.shape(a), self.shape(b)
        if sa != sb:
            raise ValueError(f"{kind}: shape mismatch {list(sa)} vs {list(sb)}")

    def add(self, a: VarId, b: VarId) -> VarId:
        self._check_same_shape("add", a, b)
        return self.record("add", (a, b))

    def sub(self, a: VarId, b: VarId) -> VarId:
        self._check_same_shape("sub", a, b)
        return self.record("sub", (a, b))

    def mul(self, a: VarId, b: VarId) -> VarId:
        self._check_same_shape("mul", a, b)
        return self.record("mul", (a, b))

    def matmul(self, a: VarId, b: VarId) -> VarId:
        sa, sb = self.shape(a), self.shape(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            raise ValueError(f"matmul: shape mismatch {list(sa)} vs {list(sb)}")
        return self.record("matmul", (a, b))

    def broadcast_add(self, x: VarId, b: VarId) -> VarId:
        sx, sb = self.shape(x), self.shape(b)
        if len(sb) != 1 or not sx or sx[-1] != sb[0]:
            raise ValueError(f"broadcast_add: shape mismatch {list(sx)} vs {list(sb)}")
        return self.record("broadcast_add", (x, b))

    def broadcast_mul(self, x: VarId, s: VarId) -> VarId:
        """Elementwise product against a scalar or a last-axis vector."""
        sx, ss = self.shape(x), self.shape(s)
        if len(ss) == 0:
            pass
        elif len(ss) == 1 and sx and sx[-1] == ss[0]:
            pass
        else:
            raise ValueError(f"broadcast_mul: shape mismatch {list(sx)} vs {list(ss)}")
        return self.record("broadcast_mul", (x, s))

    def scalar_mul(self, x: VarId, k: float) -> VarId:
        return self.record("scalar_mul", (x,), float(k))

    def add_scalar(self, x: VarId, k: float) -> VarId:
        return self.record("add_scalar", (x,), float(k))

    def clip(self, x: VarId, lo: float, hi: float) -> VarId:
        return self.record("clip", (x,), float(lo), float(hi))

    def relu(self, x: VarId) -> VarId:
        return self.record("clip", (x,), 0.0, np.inf)

    def sigmoid(self, x: VarId) -> VarId:
        return self.record("sigmoid", (x,))

    def tanh(self, x: VarId) -> VarId:
        return self.record("tanh", (x,))

    def exp(self, x: VarId) -> VarId:
        return self.record("exp", (x,))

    def log(self, x: VarId) -> VarId:
        return self.record("log", (x,))

    def square(self, x: VarId) -> VarId:
        return self.record("square", (x,))

    def absolute(self, x: VarId) -> VarId:
        return self.record("abs", (x,))

    def sign(self, x: VarId) -> VarId:
        return self.record("sign", (x,))

    def select(self, mask: np.ndarray, a: VarId, b: VarId) -> VarId:
        """where(mask, a, b); the mask is a constant boolean array."""
        self._check_same_shape("select", a, b)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.shape(a):
            raise ValueError(
                f"select: shape mismatch {list(mask.shape)} vs {list(self.shape(a))}"
            )
        return self.record("select", (a, b), mask)

    def total(self, x: VarId) -> VarId:
        """Sum of all elements, as a scalar node."""
        return self.record("sum", (x,))

    def mean_axis(self, x: VarId, axis: int) -> VarId:
        return self.record("mean_axis", (x,), int(axis))

    def softmax_cross_entropy(self, logits: VarId, labels: np.ndarray) -> VarId:
        """Mean negative log-likelihood of integer class labels."""
        sl = self.shape(logits)
        labels = np.asarray(labels, dtype=np.int64)
        if len(sl) != 2 or labels.shape != (sl[0],):
            raise ValueError(
                f"softmax_cross_entropy: shape mismatch {list(sl)} vs {list(labels.shape)}"
            )
        if labels.min() < 0 or labels.max() >= sl[1]:
            raise ValueError("softmax_cross_entropy: label out of range")
        return self.record("softmax_cross_entropy", (logits,), labels)

    # -- backward ------------------------------------------------------------

    def backward(self, root: VarId) -> dict[VarId, Tensor]:
        """Accumulate gradients of a scalar root w.r.t. every node.

        Returns a map var id -> gradient array; nodes the root does not
        depend on get zeros. Deterministic: the accumulation order is the
        fixed reverse tape order.
        """
        if self.shape(root) != ():
            raise ValueError(
                f"backward: root must be scalar, got shape {list(self.shape(root))}"
            )
        grads: list[Tensor | None] = [None] * len(self._nodes)
        grads[root] = np.ones(())
        for i in range(root, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self._nodes[i]
            if node.kind == "leaf":
                continue
            vals = tuple(self._nodes[v].value for v in node.inputs)
            input_grads = _VJP[node.kind](vals, node.value, node.aux, g)
            for v, ig in zip(node.inputs, input_grads):
                grads[v] = ig if grads[v] is None else grads[v] + ig
        return {
            i: (g if g is not None else np.zeros_like(n.value))
            for i, (n, g) in enumerate(zip(self._nodes, grads))
        }


@dataclass
class ForwardContext:
    """Carries everything one forward pass needs besides the inputs.

    ``noise_scale`` optionally overrides the configured noise magnitude
    of every activation reached during the pass (this is how annealing
    reaches into the model). Parameters are bound to tape leaves lazily,
    at most once per pass.
    """

    tape: Tape
    rng: object | None = None
    training: bool = False
    noise_scale: float | None = None
    _bound: dict[int, VarId] = field(default_factory=dict)

    def var(self, p: Parameter) -> VarId:
        key = id(p)
        if key not in self._bound:
            self._bound[key] = self.tape.leaf(p.value)
        return self._bound[key]

    def grad_of(self, grads: dict[VarId, Tensor], p: Parameter) -> Tensor:
        """Gradient for a parameter, zeros if it never entered the tape."""
        key = id(p)
        if key in self._bound:
            return grads[self._bound[key]]
        return np.zeros_like(p.value)
