"""Reverse-mode automatic differentiation over numpy arrays.

The rest of the numeric stack is built from a small set of primitive
ops, each paired with its analytic vector-Jacobian product. Ops accept
either ``Var`` nodes or plain numpy arrays / python scalars; plain
inputs are treated as constants. When no input requires a gradient the
op returns the raw numpy result, so forward-only evaluation (decoding,
validation) runs as ordinary numpy code with no taping overhead.

Values propagate in the dtype of their inputs: float32 during training,
float64 during gradient checking. Reductions (sums, means, log-sum-exp)
accumulate in float64 before casting back to the input dtype.

Gradient accumulation is non-destructive (``grad = grad + g`` rather
than ``+=``) so a gradient array shared between two parents is never
mutated through an alias.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Var:
    """A node in the computation graph: a value plus backward plumbing."""

    __slots__ = ("value", "grad", "requires_grad", "tape", "_vjp")

    def __init__(self, value: np.ndarray, requires_grad: bool, tape: "Tape | None"):
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape = tape
        self._vjp: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype


class Tape:
    """Records ops in creation order; backward() replays them reversed."""

    def __init__(self):
        self._nodes: list[Var] = []

    def leaf(self, value: np.ndarray, requires_grad: bool = True) -> Var:
        return Var(np.asarray(value), requires_grad, self)

    def record(self, value: np.ndarray, vjp: Callable[[np.ndarray], None]) -> Var:
        node = Var(value, True, self)
        node._vjp = vjp
        self._nodes.append(node)
        return node

    def backward(self, root: Var, seed_grad: np.ndarray | None = None) -> None:
        """Propagate d(root)/d(leaf) into every reachable leaf's .grad."""
        if not isinstance(root, Var) or not root.requires_grad:
            return
        if seed_grad is None:
            seed_grad = np.ones_like(root.value)
        root.grad = seed_grad
        for node in reversed(self._nodes):
            if node.grad is not None and node._vjp is not None:
                node._vjp(node.grad)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def _needs_grad(*xs) -> bool:
    return any(isinstance(x, Var) and x.requires_grad for x in xs)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var) and x.requires_grad:
            assert x.tape is not None
            return x.tape
    raise ValueError("no grad-requiring input")


def _accum(x, g: np.ndarray) -> None:
    if isinstance(x, Var) and x.requires_grad:
        x.grad = g if x.grad is None else x.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not _needs_grad(a, b):
        return out
    tape = _tape_of(a, b)
    ash = np.shape(av)
    bsh = np.shape(bv)

    def vjp(g):
        _accum(a, _unbroadcast(g, ash))
        _accum(b, _unbroadcast(g, bsh))

    return tape.record(out, vjp)


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not _needs_grad(a, b):
        return out
    tape = _tape_of(a, b)
    ash = np.shape(av)
    bsh = np.shape(bv)

    def vjp(g):
        _accum(a, _unbroadcast(g, ash))
        _accum(b, _unbroadcast(-g, bsh))

    return tape.record(out, vjp)


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not _needs_grad(a, b):
        return out
    tape = _tape_of(a, b)
    ash = np.shape(av)
    bsh = np.shape(bv)

    def vjp(g):
        _accum(a, _unbroadcast(g * bv, ash))
        _accum(b, _unbroadcast(g * av, bsh))

    return tape.record(out, vjp)


def matmul(a, b):
    """2-D @ 2-D only; enough for every layer here."""
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if not _needs_grad(a, b):
        return out
    tape = _tape_of(a, b)

    def vjp(g):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    return tape.record(out, vjp)


def concat(parts: Sequence, axis: int = -1):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not _needs_grad(*parts):
        return out
    tape = _tape_of(*parts)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    ax = axis if axis >= 0 else out.ndim + axis

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = tuple(slice(None) if d != ax else slice(lo, hi) for d in range(g.ndim))
            _accum(p, g[sl])

    return tape.record(out, vjp)


def narrow(a, start: int, size: int, axis: int = -1):
    """Contiguous slice [start, start+size) along one axis."""
    av = value_of(a)
    ax = axis if axis >= 0 else av.ndim + axis
    sl = tuple(slice(None) if d != ax else slice(start, start + size) for d in range(av.ndim))
    out = av[sl]
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)

    def vjp(g):
        full = np.zeros_like(av)
        full[sl] = g
        _accum(a, full)

    return tape.record(out, vjp)


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)
    orig = av.shape

    def vjp(g):
        _accum(a, g.reshape(orig))

    return tape.record(out, vjp)


def sigmoid(a):
    av = value_of(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ea = np.exp(av[~pos])
    out[~pos] = ea / (1.0 + ea)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)

    def vjp(g):
        _accum(a, g * out * (1.0 - out))

    return tape.record(out, vjp)


def tanh(a):
    av = value_of(a)
    out = np.tanh(av)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)

    def vjp(g):
        _accum(a, g * (1.0 - out * out))

    return tape.record(out, vjp)


def exp(a):
    av = value_of(a)
    out = np.exp(av)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)

    def vjp(g):
        _accum(a, g * out)

    return tape.record(out, vjp)


def square(a):
    av = value_of(a)
    out = av * av
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)

    def vjp(g):
        _accum(a, g * (2.0 * av))

    return tape.record(out, vjp)


def clip_box(a, lo: float, hi: float):
    """Clamp values to [lo, hi]; gradient is zero outside the open box."""
    av = value_of(a)
    out = np.clip(av, lo, hi)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)
    inside = (av > lo) & (av < hi)

    def vjp(g):
        _accum(a, g * inside)

    return tape.record(out, vjp)


def sum_axis(a, axis: int | None = None, keepdims: bool = False):
    """Sum with float64 accumulation, result cast back to input dtype."""
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(av.dtype)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)
    shape = av.shape

    def vjp(g):
        ge = g if (axis is None or keepdims) else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(ge, shape))

    return tape.record(out, vjp)


def mean_all(a):
    """Mean over all elements (float64 accumulation)."""
    av = value_of(a)
    n = av.size
    out = (av.sum(dtype=np.float64) / n).astype(av.dtype)
    if not _needs_grad(a):
        return out
    tape = _tape_of(a)
    shape = av.shape

    def vjp(g):
        _accum(a, np.broadcast_to(g / n, shape))

    return tape.record(out, vjp)


def rows(table, ids: np.ndarray):
    """Gather rows: out[i...] = table[ids[i...]] (embedding lookup)."""
    tv = value_of(table)
    out = tv[ids]
    if not _needs_grad(table):
        return out
    tape = _tape_of(table)

    def vjp(g):
        full = np.zeros_like(tv)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, tv.shape[1]))
        _accum(table, full)

    return tape.record(out, vjp)


def _softmax_parts(logits: np.ndarray):
    m = logits.max(axis=-1, keepdims=True)
    ex = np.exp(logits - m)
    z = ex.sum(axis=-1, keepdims=True, dtype=np.float64)
    return m, ex, z


def softmax_xent(logits, targets: np.ndarray, weight: np.ndarray | None = None):
    """Per-row cross-entropy -log softmax(logits)[target], optionally weighted.

    logits: (B, V); targets: (B,) int; weight: (B,) or None. Returns (B,).
    """
    lv = value_of(logits)
    b = lv.shape[0]
    m, ex, z = _softmax_parts(lv)
    lse = (m[:, 0] + np.log(z[:, 0])).astype(lv.dtype)
    picked = lv[np.arange(b), targets]
    loss = lse - picked
    if weight is not None:
        loss = loss * weight
    if not _needs_grad(logits):
        return loss
    tape = _tape_of(logits)
    sm = (ex / z).astype(lv.dtype)

    def vjp(g):
        gw = g * weight if weight is not None else g
        d = sm * gw[:, None]
        d[np.arange(b), targets] -= gw
        _accum(logits, d)

    return tape.record(loss, vjp)


def bag_xent(logits, targets: np.ndarray, mask: np.ndarray):
    """Sum of per-target cross-entropies against one shared softmax per row.

    logits: (B, V); targets: (B, L) int; mask: (B, L) in {0,1}. Returns (B,):
        loss[b] = sum_l mask[b,l] * (logsumexp(logits[b]) - logits[b, targets[b,l]])
    """
    lv = value_of(logits)
    b = lv.shape[0]
    m, ex, z = _softmax_parts(lv)
    lse = (m[:, 0] + np.log(z[:, 0])).astype(lv.dtype)
    counts = mask.sum(axis=1, dtype=np.float64).astype(lv.dtype)
    gathered = (np.take_along_axis(lv, targets, axis=1) * mask).sum(axis=1, dtype=np.float64).astype(lv.dtype)
    loss = counts * lse - gathered
    if not _needs_grad(logits):
        return loss
    tape = _tape_of(logits)
    sm = (ex / z).astype(lv.dtype)

    def vjp(g):
        d = sm * (g * counts)[:, None]
        scatter = np.zeros_like(lv)
        np.add.at(scatter, (np.arange(b)[:, None], targets), mask * g[:, None])
        _accum(logits, d - scatter)

    return tape.record(loss, vjp)
