"""Reverse-mode differentiation over a recorded tape of 2-D float64 ops.

Supported primitives: matmul, add (with row/column broadcasting), softmax
(row-wise, optional scale and mask), tanh, relu, leaky_relu, concat
(columns), slice_cols, row_mean and dropout with a stored keep-mask.
"""

from __future__ import annotations

import numpy as np

from ..errors import EmptyNeighborhood, ShapeMismatch, UnrecordedForward


class Var:
    __slots__ = ("value", "tape", "requires_grad", "name")

    def __init__(self, value, tape=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


class Tape:
    """Records ops whose inputs require gradients; replays them backwards."""

    def __init__(self):
        self._ops = []
        self._produced = set()
        self.params = {}

    def param(self, value, name):
        v = Var(np.asarray(value, dtype=np.float64), self, True, name)
        self.params[name] = v
        return v

    def const(self, value):
        return Var(np.asarray(value, dtype=np.float64), self, False)

    def _record(self, out, inputs, backward):
        self._ops.append((out, inputs, backward))
        self._produced.add(id(out))

    def backward(self, output: Var, upstream=None):
        """Gradients of ``sum(upstream * output)`` for every registered param."""
        if output.tape is not self or id(output) not in self._produced:
            raise UnrecordedForward("output was not produced by an op recorded on this tape")
        g0 = np.ones_like(output.value) if upstream is None else np.asarray(upstream, dtype=np.float64)
        if g0.shape != output.value.shape:
            raise ShapeMismatch(f"upstream gradient {g0.shape} vs output {output.value.shape}")
        grads = {id(output): g0}
        for out, inputs, fn in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for v, gi in zip(inputs, fn(g)):
                if gi is None or not v.requires_grad:
                    continue
                key = id(v)
                grads[key] = grads[key] + gi if key in grads else gi
        return {name: grads.get(id(v), np.zeros_like(v.value)) for name, v in self.params.items()}


def as_var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=np.float64))


def _emit(value, inputs, backward):
    tape = next((v.tape for v in inputs if v.tape is not None), None)
    out = Var(value, tape)
    if tape is not None and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        tape._record(out, inputs, backward)
    return out


def _check2d(*vs):
    for v in vs:
        if v.value.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D tensor, got shape {v.value.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a, b, transpose_b=False):
    a, b = as_var(a), as_var(b)
    _check2d(a, b)
    bv = b.value.T if transpose_b else b.value
    if a.value.shape[1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul {a.value.shape} x {bv.shape}")
    A, B = a.value, b.value

    def back(g):
        ga = g @ (B if transpose_b else B.T)
        gb = (g.T @ A) if transpose_b else (A.T @ g)
        return ga, gb

    return _emit(A @ bv, (a, b), back)


def add(a, b):
    a, b = as_var(a), as_var(b)
    _check2d(a, b)
    try:
        out = a.value + b.value
    except ValueError:
        raise ShapeMismatch(f"add {a.value.shape} + {b.value.shape}") from None
    sa, sb = a.value.shape, b.value.shape
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def softmax(x, scale=1.0, mask=None):
    """Row-wise softmax of ``scale * x`` restricted to ``mask``."""
    x = as_var(x)
    _check2d(x)
    z = scale * x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeMismatch(f"mask {mask.shape} vs logits {z.shape}")
        if not np.all(mask.any(axis=1)):
            raise EmptyNeighborhood("a softmax row has no unmasked entries")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (scale * y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(y, (x,), back)


def tanh(x):
    x = as_var(x)
    y = np.tanh(x.value)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_var(x)
    on = x.value > 0
    return _emit(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))


def leaky_relu(x, slope=0.2):
    x = as_var(x)
    k = np.where(x.value > 0, 1.0, slope)
    return _emit(x.value * k, (x,), lambda g: (g * k,))


def concat(xs):
    xs = [as_var(x) for x in xs]
    _check2d(*xs)
    if len({x.value.shape[0] for x in xs}) != 1:
        raise ShapeMismatch("concat inputs must share the row count")
    bounds = np.cumsum([0] + [x.value.shape[1] for x in xs])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _emit(np.concatenate([x.value for x in xs], axis=1), tuple(xs), back)


def slice_cols(x, start, stop):
    x = as_var(x)
    _check2d(x)
    shape = x.value.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit(x.value[:, start:stop].copy(), (x,), back)


def row_mean(x):
    """Mean over rows, (n, d) -> (1, d)."""
    x = as_var(x)
    _check2d(x)
    n = x.value.shape[0]
    return _emit(x.value.mean(axis=0, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g / n, x.value.shape).copy(),))


def dropout(x, keep_mask, keep_prob):
    """Inverted dropout with an externally drawn keep-mask."""
    x = as_var(x)
    m = np.asarray(keep_mask, dtype=np.float64)
    if m.shape != x.value.shape:
        raise ShapeMismatch(f"dropout mask {m.shape} vs input {x.value.shape}")
    scale = m / keep_prob
    return _emit(x.value * scale, (x,), lambda g: (g * scale,))
