"""Dense float64 arrays and a small reverse-mode autodiff tape.

Every primitive accepts either plain ``numpy`` arrays or :class:`Var` nodes.
When no input is a ``Var`` the primitive simply returns an array, so the same
forward code serves both the differentiable path (training, gradient checks)
and the fast inference path.

Example::

    tape = Tape()
    w = tape.watch(np.ones((3, 2)))
    loss = mean(square(matmul(x, w)))
    (gw,) = tape.gradients(loss, [w])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ContractError",
    "RngStream",
    "Tape",
    "Var",
    "as_matrix",
    "add",
    "concat",
    "conv2d",
    "cross_entropy",
    "div",
    "dropout",
    "exp",
    "finite_diff_check",
    "l2_normalize",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "neg",
    "relu",
    "reshape",
    "softmax",
    "sqrt",
    "square",
    "sub",
    "sum",
    "transpose",
    "value_of",
]

DTYPE = np.float64


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RngStream:
    """Seeded PCG64 stream with deterministic child streams.

    Children are derived from ``(seed, *key)`` through ``numpy.random.SeedSequence``
    so that two streams with the same seed and key always produce identical draws,
    independent of how many values any sibling stream has consumed.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ContractError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"

    # thin pass-throughs keep call sites short
    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, x):
        return self.generator.permutation(x)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)


# ---------------------------------------------------------------------------
# Tape and nodes
# ---------------------------------------------------------------------------


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "grad", "tape", "inputs", "vjp", "name")
    __array_priority__ = 100.0

    def __init__(self, value, tape: "Tape", inputs=(), vjp=None, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.inputs = inputs
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as they are created, so the list is already in
    topological order and :meth:`backward` is a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def watch(self, value, name: str | None = None) -> Var:
        node = Var(np.array(value, dtype=DTYPE), self, name=name)
        self.nodes.append(node)
        return node

    def record(self, value, inputs, vjp) -> Var:
        node = Var(value, self, inputs, vjp)
        self.nodes.append(node)
        return node

    def backward(self, loss: Var) -> None:
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ContractError("loss must be a node recorded on this tape")
        if loss.value.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            parent_grads = node.vjp(node.grad)
            for parent, g in zip(node.inputs, parent_grads):
                if not isinstance(parent, Var) or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def gradients(self, loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
        """Run :meth:`backward` and return gradients for ``wrt`` (zeros if unreachable)."""
        self.backward(loss)
        return [
            np.zeros_like(v.value) if v.grad is None else np.asarray(v.grad, dtype=DTYPE)
            for v in wrt
        ]


def value_of(x):
    return x.value if isinstance(x, Var) else x


def as_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a finite float64 array."""
    arr = np.asarray(value_of(x), dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return arr


def _apply(value, inputs, vjp):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError("primitive produced non-finite values")
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("inputs recorded on different tapes")
    if tape is None:
        return value
    return tape.record(value, tuple(inputs), vjp)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _apply(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    sa, sb = np.shape(av), np.shape(bv)
    return _apply(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    sa, sb = np.shape(av), np.shape(bv)
    return _apply(
        out, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb))
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    sa, sb = np.shape(av), np.shape(bv)
    return _apply(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, sa), _unbroadcast(-g * av / (bv * bv), sb)),
    )


def neg(a):
    return _apply(-value_of(a), (a,), lambda g: (-g,))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ContractError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out = av @ bv
    return _apply(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    return _apply(value_of(a).T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    av = value_of(a)
    old = av.shape
    return _apply(av.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts, axis: int = 0):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _apply(out, tuple(parts), vjp)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    av = value_of(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _apply(np.asarray(out, dtype=DTYPE), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    count = av.size if axis is None else av.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def square(a):
    av = value_of(a)
    return _apply(av * av, (a,), lambda g: (2.0 * av * g,))


def sqrt(a):
    av = value_of(a)
    out = np.sqrt(av)
    return _apply(out, (a,), lambda g: (g / (2.0 * out),))


def exp(a):
    out = np.exp(value_of(a))
    return _apply(out, (a,), lambda g: (g * out,))


def log(a):
    av = value_of(a)
    return _apply(np.log(av), (a,), lambda g: (g / av,))


def relu(a):
    av = value_of(a)
    active = av > 0
    return _apply(av * active, (a,), lambda g: (g * active,))


def dropout(a, mask):
    """Multiply by a precomputed mask (already scaled by 1/keep)."""
    mask = np.asarray(mask, dtype=DTYPE)
    return _apply(value_of(a) * mask, (a,), lambda g: (g * mask,))


def softmax(logits) -> np.ndarray:
    """Row-wise softmax on plain arrays, stabilised by max subtraction."""
    x = np.asarray(value_of(logits), dtype=DTYPE)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    """Fused, numerically stable row-wise log-softmax."""
    x = value_of(logits)
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _apply(out, (logits,), vjp)


def l2_normalize(a, axis: int = -1):
    """Scale rows to unit Euclidean norm."""
    av = value_of(a)
    norm = np.sqrt((av * av).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ContractError("cannot normalise a zero-norm row")
    out = av / norm

    def vjp(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _apply(out, (a,), vjp)


def cross_entropy(logits, targets):
    """Mean cross-entropy of integer targets (or soft target rows)."""
    logp = log_softmax(logits)
    t = np.asarray(targets)
    if t.ndim == 1:
        onehot = np.zeros(value_of(logits).shape, dtype=DTYPE)
        onehot[np.arange(t.size), t.astype(int)] = 1.0
        t = onehot
    n = value_of(logits).shape[0]
    return mul(sum(mul(logp, t)), -1.0 / n)


def conv2d(x, w, stride: int = 1, pad: int = 0):
    """2-D cross-correlation, ``x`` is (B, C, H, W) and ``w`` is (O, C, kh, kw)."""
    xv, wv = value_of(x), value_of(w)
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
        raise ContractError(f"conv2d shape mismatch: {xv.shape} with {wv.shape}")
    B, C, H, W = xv.shape
    O, _, kh, kw = wv.shape
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (Ho - 1) * stride + 1 : stride, : (Wo - 1) * stride + 1 : stride]
    # (B, Ho, Wo, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho, Wo, C * kh * kw)
    wmat = wv.reshape(O, -1)
    out = (cols @ wmat.T).transpose(0, 3, 1, 2)

    def vjp(g):
        gt = g.transpose(0, 2, 3, 1)  # (B, Ho, Wo, O)
        gw = (gt.reshape(-1, O).T @ cols.reshape(-1, C * kh * kw)).reshape(wv.shape)
        gcols = (gt @ wmat).reshape(B, Ho, Wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[
                    :, :, i : i + (Ho - 1) * stride + 1 : stride, j : j + (Wo - 1) * stride + 1 : stride
                ] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad : pad + H, pad : pad + W]
        return gx, gw

    return _apply(np.ascontiguousarray(out), (x, w), vjp)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def finite_diff_check(
    fn: Callable[..., object], params: Sequence[np.ndarray], step: float = 1e-5
) -> float:
    """Compare tape gradients of ``fn(*params)`` against central differences.

    ``fn`` must be written with the primitives of this module so that it can be
    evaluated both on watched nodes and on plain arrays. Returns the largest
    ``|analytic - numeric| / max(1, |numeric|)`` over every parameter entry.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    params = [np.array(p, dtype=DTYPE) for p in params]
    tape = Tape()
    nodes = [tape.watch(p) for p in params]
    loss = fn(*nodes)
    analytic = tape.gradients(loss, nodes)

    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        grad = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(value_of(fn(*params)))
            flat[i] = orig - step
            down = float(value_of(fn(*params)))
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(grad[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
