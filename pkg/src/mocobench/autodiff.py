"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records operations whose result depends on a parameter or input leaf;
backward() walks the recorded DAG once in reverse order. Constants are never
recorded, so running a forward pass with all-constant leaves costs only the
numpy arithmetic (used for greedy evaluation).

Masking uses a large negative fill (-1e9) instead of -inf so softmax keeps
finite gradients; masked positions receive exactly zero probability and
exactly zero gradient.
"""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np

MASK_FILL = -1e9

_CHECKPOINT_MAGIC = b"MBCKPT1\n"


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "leaf", "tape")

    def __init__(self, value, *, tape=None, parents=(), backward_fn=None,
                 requires_grad=False, leaf=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.leaf = leaf  # "param" | "input" | "const" | None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={self.leaf}, grad={self.grad is not None})"


class Tape:
    """Single-writer record of differentiable operations (a DAG)."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._backward_done = False

    def param(self, value) -> Node:
        node = Node(value, tape=self, requires_grad=True, leaf="param")
        self._nodes.append(node)
        return node

    def input(self, value) -> Node:
        node = Node(value, tape=self, requires_grad=True, leaf="input")
        self._nodes.append(node)
        return node

    @staticmethod
    def const(value) -> Node:
        return Node(value, leaf="const")

    def record(self, node: Node) -> Node:
        self._nodes.append(node)
        return node

    def backward(self, root: Node) -> None:
        """Populate .grad for every parameter and input leaf reachable from root."""
        if self._backward_done:
            raise RuntimeError("backward already ran on this tape; call reset() first")
        if root.value.ndim != 0 and root.value.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
        self._backward_done = True
        root.grad = np.ones_like(root.value)
        seen_root = False
        for node in reversed(self._nodes):
            if node is root:
                seen_root = True
            if not seen_root or node.grad is None:
                continue
            if node.backward_fn is not None:
                node.backward_fn(node.grad)
        # leaves a root never touches still report an (exactly zero) gradient
        for node in self._nodes:
            if node.leaf in ("param", "input") and node.grad is None:
                node.grad = np.zeros_like(node.value)

    def reset(self) -> None:
        for node in self._nodes:
            node.grad = None
        self._backward_done = False


def _as_node(x, like: Node) -> Node:
    return x if isinstance(x, Node) else Node(x, leaf="const")


def _tape_of(*nodes: Node) -> Tape | None:
    for n in nodes:
        if n.tape is not None:
            return n.tape
    return None


def _accumulate(node: Node, grad: np.ndarray) -> None:
    if not node.requires_grad:
        return
    if node.grad is None:
        # own the buffer: callers may hand over views or shared arrays
        node.grad = np.array(grad, dtype=float, copy=True)
    else:
        node.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(value, parents: Sequence[Node], backward_fn: Callable | None) -> Node:
    requires = any(p.requires_grad for p in parents)
    tape = _tape_of(*parents)
    node = Node(value, tape=tape, parents=tuple(parents),
                backward_fn=backward_fn if requires else None,
                requires_grad=requires)
    if requires and tape is not None:
        tape.record(node)
    return node


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Node:
    a = _as_node(a, b) if not isinstance(a, Node) else a
    b = _as_node(b, a)
    value = a.value + b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.value.shape))

    return _make(value, (a, b), backward)


def sub(a, b) -> Node:
    a = _as_node(a, b) if not isinstance(a, Node) else a
    b = _as_node(b, a)
    value = a.value - b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.value.shape))

    return _make(value, (a, b), backward)


def mul(a, b) -> Node:
    a = _as_node(a, b) if not isinstance(a, Node) else a
    b = _as_node(b, a)
    value = a.value * b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(value, (a, b), backward)


def div(a, b) -> Node:
    a = _as_node(a, b) if not isinstance(a, Node) else a
    b = _as_node(b, a)
    value = a.value / b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _make(value, (a, b), backward)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    value = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape))

    return _make(value, (a, b), backward)


def _unary(a: Node, value: np.ndarray, dfn: Callable[[np.ndarray], np.ndarray]) -> Node:
    def backward(g):
        _accumulate(a, g * dfn(value))

    return _make(value, (a,), backward)


def exp(a: Node) -> Node:
    v = np.exp(a.value)
    return _unary(a, v, lambda out: out)


def log(a: Node) -> Node:
    if np.any(~np.isfinite(a.value)) or np.any(a.value <= 0):
        raise FloatingPointError("log requires strictly positive finite input")
    v = np.log(a.value)
    av = a.value
    return _unary(a, v, lambda out: 1.0 / av)


def sqrt(a: Node) -> Node:
    v = np.sqrt(a.value)
    return _unary(a, v, lambda out: 0.5 / np.maximum(out, 1e-300))


def absval(a: Node) -> Node:
    v = np.abs(a.value)
    av = a.value
    return _unary(a, v, lambda out: np.sign(av))


def tanh(a: Node) -> Node:
    v = np.tanh(a.value)
    return _unary(a, v, lambda out: 1.0 - out * out)


# -- softmax / masking --------------------------------------------------------


def softmax(a: Node) -> Node:
    """Softmax over the last axis, max-shifted for stability."""
    if np.any(~np.isfinite(a.value)):
        raise FloatingPointError("softmax input must be finite")
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        _accumulate(a, value * (g - dot))

    return _make(value, (a,), backward)


def masked_fill(a: Node, mask: np.ndarray, fill: float = MASK_FILL) -> Node:
    """Replace masked entries with `fill`; their gradient is exactly zero."""
    mask = np.asarray(mask, dtype=bool)
    value = np.where(mask, fill, a.value)

    def backward(g):
        _accumulate(a, np.where(mask, 0.0, g))

    return _make(value, (a,), backward)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Node, shape) -> Node:
    old = a.value.shape
    value = a.value.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(value, (a,), backward)


def transpose(a: Node, axes) -> Node:
    value = np.transpose(a.value, axes)
    inv = np.argsort(axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inv))

    return _make(value, (a,), backward)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    nodes = [n if isinstance(n, Node) else Node(n, leaf="const") for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for n, piece in zip(nodes, np.split(g, splits, axis=axis)):
            _accumulate(n, piece)

    return _make(value, tuple(nodes), backward)


def repeat0(a: Node, k: int) -> Node:
    """Repeat along axis 0: row b maps to rows [b*k, (b+1)*k)."""
    value = np.repeat(a.value, k, axis=0)
    lead = a.value.shape[0]

    def backward(g):
        _accumulate(a, g.reshape((lead, k) + a.value.shape[1:]).sum(axis=1))

    return _make(value, (a,), backward)


def broadcast_to(a: Node, shape) -> Node:
    value = np.broadcast_to(a.value, shape).copy()

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))

    return _make(value, (a,), backward)


def slice_last(a: Node, start: int, stop: int) -> Node:
    value = a.value[..., start:stop]

    def backward(g):
        buf = np.zeros_like(a.value)
        buf[..., start:stop] = g
        _accumulate(a, buf)

    return _make(value, (a,), backward)


# -- gathers ------------------------------------------------------------------


def _lead_indices(shape):
    return np.indices(shape, sparse=True)


def gather_rows(a: Node, idx: np.ndarray) -> Node:
    """Pick rows along axis -2. idx has the leading shape of `a` (plus an
    optional trailing pick axis); output replaces the row axis accordingly."""
    idx = np.asarray(idx, dtype=int)
    lead = a.value.shape[:-2]
    squeeze = idx.shape == lead
    if squeeze:
        idx = idx[..., None]
    if a.value.ndim == 3 and idx.ndim == 2:
        rows = np.arange(a.value.shape[0])[:, None]
        value = a.value[rows, idx]
    else:
        take = np.broadcast_to(idx[..., None], idx.shape + (a.value.shape[-1],))
        value = np.take_along_axis(a.value, take, axis=-2)
    if squeeze:
        value = value[..., 0, :]

    def backward(g):
        buf = np.zeros_like(a.value)
        gg = g[..., None, :] if squeeze else g
        np.add.at(buf, (*_lead_indices(idx.shape)[:-1], idx), gg)
        _accumulate(a, buf)

    return _make(value, (a,), backward)


def gather_last(a: Node, idx: np.ndarray) -> Node:
    """Pick entries along the last axis, one (or K) per leading position."""
    idx = np.asarray(idx, dtype=int)
    lead = a.value.shape[:-1]
    squeeze = idx.shape == lead
    if squeeze:
        idx = idx[..., None]
    if a.value.ndim == 2 and idx.ndim == 2:
        rows = np.arange(a.value.shape[0])[:, None]
        value = a.value[rows, idx]
    else:
        value = np.take_along_axis(a.value, idx, axis=-1)
    if squeeze:
        value = value[..., 0]

    def backward(g):
        buf = np.zeros_like(a.value)
        gg = g[..., None] if squeeze else g
        np.add.at(buf, (*_lead_indices(idx.shape)[:-1], idx), gg)
        _accumulate(a, buf)

    return _make(value, (a,), backward)


# -- reductions ---------------------------------------------------------------


def reduce_sum(a: Node, axis=None, keepdims: bool = False) -> Node:
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.value.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.value.shape).copy())

    return _make(value, (a,), backward)


def reduce_mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    count = a.value.size if axis is None else a.value.shape[axis]
    s = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reduce_max(a: Node, axis: int) -> Node:
    """Max along one axis; gradient routes to the first maximizing entry."""
    value = a.value.max(axis=axis)
    idx = np.argmax(a.value, axis=axis)

    def backward(g):
        buf = np.zeros_like(a.value)
        np.put_along_axis(buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        _accumulate(a, buf)

    return _make(value, (a,), backward)


# -- checkpoint format --------------------------------------------------------


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Versioned checkpoint: JSON shape manifest + flat little-endian doubles."""
    names = list(arrays.keys())
    manifest = {
        "version": 1,
        "names": names,
        "shapes": {n: list(arrays[n].shape) for n in names},
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        size = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(size).decode("utf-8"))
        if manifest.get("version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version")
        arrays = {}
        for n in manifest["names"]:
            shape = tuple(manifest["shapes"][n])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arrays[n] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, manifest["meta"]
