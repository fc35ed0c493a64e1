"""Reverse-mode differentiation over an eagerly evaluated tape.

Values are computed immediately; each Tensor remembers its parents together
with a vector-jacobian closure, and backward() replays the tape in reverse
creation order. Adjoints accumulate additively, so a parameter used in
several places (a shared branch in a composed block, a per-layer scalar
gain) receives the sum of its contributions.

A tape is single-threaded; independent replicas build independent graphs.
"""

from __future__ import annotations

import itertools
from typing import Callable, Dict, Iterable, Optional, Union

import numpy as np

from .errors import ContractError, DimensionError

Array = np.ndarray

_seq = itertools.count()


class Tensor:
    """One node of the recorded graph: a value plus backward bookkeeping."""

    __slots__ = ("value", "grad", "parents", "seq", "_consumed")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[Array] = None
        self.parents = tuple(parents)  # (Tensor, vjp: grad_out -> grad_in)
        self.seq = next(_seq)
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, seq={self.seq})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)


def constant(value) -> Tensor:
    return Tensor(value)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.value.shape != b.value.shape:
        raise DimensionError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "add")
    return Tensor(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "sub")
    return Tensor(a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def scale(c: Union[float, Tensor], x: Tensor) -> Tensor:
    """c * x for scalar c, which may itself be a trainable scalar Tensor."""
    x = _lift(x)
    if isinstance(c, Tensor):
        if c.value.size != 1:
            raise DimensionError("scale coefficient must be scalar")
        cv = float(c.value)
        return Tensor(
            cv * x.value,
            [
                (c, lambda g, x=x: np.asarray(np.sum(g * x.value)).reshape(c.value.shape)),
                (x, lambda g, cv=cv: cv * g),
            ],
        )
    cf = float(c)
    return Tensor(cf * x.value, [(x, lambda g: cf * g)])


def elementwise_mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _same_shape(a, b, "elementwise_mul")
    return Tensor(
        a.value * b.value,
        [(a, lambda g: g * b.value), (b, lambda g: g * a.value)],
    )


def matvec(W: Tensor, x: Tensor) -> Tensor:
    W, x = _lift(W), _lift(x)
    if W.value.ndim != 2 or x.value.ndim != 1 or W.value.shape[1] != x.value.size:
        raise DimensionError(
            f"matvec: incompatible shapes {W.value.shape} @ {x.value.shape}"
        )
    return Tensor(
        W.value @ x.value,
        [(W, lambda g: np.outer(g, x.value)), (x, lambda g: W.value.T @ g)],
    )


def matmul(A: Tensor, B: Tensor) -> Tensor:
    A, B = _lift(A), _lift(B)
    if A.value.ndim != 2 or B.value.ndim != 2 or A.value.shape[1] != B.value.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {A.value.shape} @ {B.value.shape}"
        )
    return Tensor(
        A.value @ B.value,
        [(A, lambda g: g @ B.value.T), (B, lambda g: A.value.T @ g)],
    )


def relu(x) -> Tensor:
    x = _lift(x)
    mask = x.value > 0  # derivative at 0 defined as 0
    return Tensor(np.where(mask, x.value, 0.0), [(x, lambda g: g * mask)])


def tanh(x) -> Tensor:
    x = _lift(x)
    v = np.tanh(x.value)
    return Tensor(v, [(x, lambda g: g * (1.0 - v * v))])


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b for a single vector x of shape (in,) or a batch (n, in)."""
    x, W, b = _lift(x), _lift(W), _lift(b)
    if W.value.ndim != 2 or b.value.ndim != 1 or W.value.shape[1] != b.value.size:
        raise DimensionError("affine: W must be (in, out) and b (out,)")
    if x.value.ndim == 1:
        if x.value.size != W.value.shape[0]:
            raise DimensionError(
                f"affine: input size {x.value.size} != fan-in {W.value.shape[0]}"
            )
        return Tensor(
            x.value @ W.value + b.value,
            [
                (x, lambda g: W.value @ g),
                (W, lambda g: np.outer(x.value, g)),
                (b, lambda g: g),
            ],
        )
    if x.value.ndim == 2:
        if x.value.shape[1] != W.value.shape[0]:
            raise DimensionError(
                f"affine: input width {x.value.shape[1]} != fan-in {W.value.shape[0]}"
            )
        return Tensor(
            x.value @ W.value + b.value,
            [
                (x, lambda g: g @ W.value.T),
                (W, lambda g: x.value.T @ g),
                (b, lambda g: g.sum(axis=0)),
            ],
        )
    raise DimensionError(f"affine: input must be 1-d or 2-d, got {x.value.ndim}-d")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; labels are integer class indices."""
    logits = _lift(logits)
    z = logits.value
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if z2.ndim != 2 or y.shape[0] != z2.shape[0]:
        raise DimensionError("softmax_cross_entropy: labels do not match logits rows")
    if np.any(y < 0) or np.any(y >= z2.shape[1]):
        raise ContractError("softmax_cross_entropy: label out of class range")
    m = z2.max(axis=1, keepdims=True)
    ez = np.exp(z2 - m)
    probs = ez / ez.sum(axis=1, keepdims=True)
    n = z2.shape[0]
    nll = -(z2[np.arange(n), y] - m[:, 0] - np.log(ez.sum(axis=1)))
    value = nll.mean()

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), y] -= 1.0
        d *= float(g) / n
        return d[0] if single else d

    return Tensor(value, [(logits, vjp)])


def left_half(x: Tensor) -> Tensor:
    """First half of the last axis (used by the coupled two-stream blocks)."""
    x = _lift(x)
    d = x.value.shape[-1]
    if d % 2:
        raise DimensionError("left_half: last axis must have even length")
    h = d // 2

    def vjp(g):
        out = np.zeros_like(x.value)
        out[..., :h] = g
        return out

    return Tensor(x.value[..., :h], [(x, vjp)])


def right_half(x: Tensor) -> Tensor:
    x = _lift(x)
    d = x.value.shape[-1]
    if d % 2:
        raise DimensionError("right_half: last axis must have even length")
    h = d // 2

    def vjp(g):
        out = np.zeros_like(x.value)
        out[..., h:] = g
        return out

    return Tensor(x.value[..., h:], [(x, vjp)])


def concat_halves(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.value.shape != b.value.shape:
        raise DimensionError("concat_halves: halves must have equal shape")
    h = a.value.shape[-1]
    return Tensor(
        np.concatenate([a.value, b.value], axis=-1),
        [(a, lambda g: g[..., :h]), (b, lambda g: g[..., h:])],
    )


_RECORD_OPS: Dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "scale": scale,
    "matvec": matvec,
    "matmul": matmul,
    "relu": relu,
    "tanh": tanh,
    "affine": affine,
    "softmax_cross_entropy": softmax_cross_entropy,
    "elementwise_mul": elementwise_mul,
}


def record(op: str, *inputs) -> Tensor:
    """Dispatch by op name; the value is computed eagerly."""
    try:
        fn = _RECORD_OPS[op]
    except KeyError:
        raise ContractError(
            f"unknown op {op!r}; valid: {sorted(_RECORD_OPS)}"
        ) from None
    return fn(*inputs)


def backward(root: Tensor) -> None:
    """Populate adjoints of every node reachable from a scalar root.

    Raises on a non-scalar root and on a second call for the same root;
    build a fresh graph (fresh leaves) to differentiate again.
    """
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")
    if root._consumed:
        raise ContractError("backward already ran for this root; rebuild the graph")
    root._consumed = True

    order = []
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        order.append(node)
        stack.extend(p for p, _ in node.parents)
    order.sort(key=lambda n: n.seq, reverse=True)

    root.grad = np.ones_like(root.value)
    for node in order:
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            g = vjp(node.grad)
            parent.grad = g if parent.grad is None else parent.grad + g


class ParamStore:
    """Named trainable tensors plus matching momentum buffers.

    make_leaves() snapshots the current values as fresh graph leaves; after a
    backward pass the per-parameter gradients are read off those leaves.
    Names in no_decay are exempt from weight decay (the per-layer scheme
    coefficients must not be pulled toward the plain-residual setting).
    """

    def __init__(self, values: Dict[str, Array], no_decay: Iterable[str] = ()):
        self.values: Dict[str, Array] = {
            k: np.asarray(v, dtype=np.float64) for k, v in values.items()
        }
        self.velocity: Dict[str, Array] = {
            k: np.zeros_like(v) for k, v in self.values.items()
        }
        self.no_decay = set(no_decay)

    def make_leaves(self) -> Dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.values.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore({k: v.copy() for k, v in self.values.items()}, self.no_decay)
        out.velocity = {k: v.copy() for k, v in self.velocity.items()}
        return out

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)


def gradcheck(
    f: Callable[[Dict[str, Tensor]], Tensor],
    store: ParamStore,
    eps: float = 1e-6,
) -> float:
    """Max relative gap between tape gradients and central differences.

    f builds a scalar from a dict of leaf tensors and must be deterministic.
    The relative error for each parameter entry is
    |analytic - fd| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ContractError("gradcheck eps must be positive")
    leaves = store.make_leaves()
    backward(f(leaves))
    analytic = {
        k: (np.zeros_like(v.value) if v.grad is None else v.grad)
        for k, v in leaves.items()
    }

    worst = 0.0
    for name, base in store.values.items():
        flat = base.reshape(-1)
        for i in range(flat.size):
            h = eps * max(1.0, abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + h
            up = float(f(store.make_leaves()).value)
            flat[i] = orig - h
            dn = float(f(store.make_leaves()).value)
            flat[i] = orig
            fd = (up - dn) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
