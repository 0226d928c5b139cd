"""Adjacency-biased scaled dot-product attention and its multi-head form."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from .tape import Var, add, as_var, concat, matmul, softmax


@dataclass
class AttentionParams:
    w_q: list  # per head, (d, d_k)
    w_k: list
    w_v: list
    w_o: object  # (n_heads * d_k, d_model)

    @property
    def n_heads(self):
        return len(self.w_q)

    @property
    def d_k(self):
        return as_var(self.w_k[0]).value.shape[1]

    def check(self, d):
        if not (len(self.w_q) == len(self.w_k) == len(self.w_v)) or not self.w_q:
            raise ShapeMismatch("w_q, w_k and w_v need one matrix per head")
        dk = self.d_k
        for w in (*self.w_q, *self.w_k, *self.w_v):
            if as_var(w).value.shape != (d, dk):
                raise ShapeMismatch(f"projection shape {as_var(w).value.shape}, expected {(d, dk)}")
        if as_var(self.w_o).value.shape[0] != self.n_heads * dk:
            raise ShapeMismatch("w_o rows must equal n_heads * d_k")


def _unwrap(out, inputs):
    return out if any(isinstance(x, Var) for x in inputs) else out.value


def graph_attention(Q, K, V, A):
    """softmax((Q K^T + A) / sqrt(d_k)) V, with A inside the scaled argument."""
    q, k, v, a = (as_var(x) for x in (Q, K, V, A))
    n = q.value.shape[0]
    if k.value.shape[0] != n or v.value.shape[0] != n or a.value.shape != (n, n) \
            or q.value.shape[1] != k.value.shape[1]:
        raise ShapeMismatch(f"Q{q.value.shape} K{k.value.shape} V{v.value.shape} A{a.value.shape}")
    d_k = k.value.shape[1]
    scores = add(matmul(q, k, transpose_b=True), a)
    out = matmul(softmax(scores, scale=1.0 / math.sqrt(d_k)), v)
    return _unwrap(out, (Q, K, V, A))


def multi_head_attention(X, A, params: AttentionParams):
    """Concat(head_1..head_n) W_o, head_i = attention(X Wq_i, X Wk_i, X Wv_i, A)."""
    x, a = as_var(X), as_var(A)
    params.check(x.value.shape[1])
    heads = [
        graph_attention(matmul(x, wq), matmul(x, wk), matmul(x, wv), a)
        for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v)
    ]
    out = matmul(heads[0] if len(heads) == 1 else concat(heads), params.w_o)
    leaves = (X, A, *params.w_q, *params.w_k, *params.w_v, params.w_o)
    return _unwrap(out, leaves)
