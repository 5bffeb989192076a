"""Graph message-passing layers over explicit adjacency.

Two primitives: a degree-normalized graph convolution and an edge-masked
multi-head attention where each node attends to its neighbors and itself.
Both operate on a single graph at a time, features shaped (N, d).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .nn import Dense, Module, gelu, gelu_grad, softmax_backward


def adjacency(n: int, edges) -> np.ndarray:
    a = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        a[i, j] = True
        a[j, i] = True
    return a


def attention_mask(n: int, edges) -> np.ndarray:
    """Neighbors plus self: the admissible set for edge-masked attention."""
    m = adjacency(n, edges)
    np.fill_diagonal(m, True)
    return m


def norm_adjacency(n: int, edges) -> np.ndarray:
    """Symmetric normalization with self-loops:
    entry (i, j) is 1/sqrt((deg_i + 1)(deg_j + 1)) on neighbors and the diagonal."""
    a = adjacency(n, edges).astype(np.float64)
    a += np.eye(n)
    d = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


class GraphConv(Module):
    """x -> gelu((A_hat @ x) W + b) with A_hat the normalized adjacency."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int):
        self.lin = Dense(rng, d_in, d_out)

    def forward(self, x: np.ndarray, a_norm: np.ndarray):
        agg = a_norm @ x
        pre, c_lin = self.lin.forward(agg)
        return gelu(pre), (a_norm, pre, c_lin)

    def backward(self, ctx, dy: np.ndarray) -> np.ndarray:
        a_norm, pre, c_lin = ctx
        dagg = self.lin.backward(c_lin, dy * gelu_grad(pre))
        return a_norm.T @ dagg


class MultiHeadAttention(Module):
    """Scaled dot-product attention, queries from x_q, keys/values from x_kv.

    `mask` (Nq, Nkv) limits which kv entries each query may see; None allows
    all. No residual here; callers wire their own.
    """

    def __init__(self, rng: np.random.Generator, dim: int, n_heads: int):
        if dim % n_heads:
            raise ValueError(f"dim {dim} not divisible by heads {n_heads}")
        self.n_heads = n_heads
        self.d_head = dim // n_heads
        self.wq = Dense(rng, dim, dim)
        self.wk = Dense(rng, dim, dim)
        self.wv = Dense(rng, dim, dim)
        self.wo = Dense(rng, dim, dim)

    def _split(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        return x.reshape(n, self.n_heads, self.d_head).transpose(1, 0, 2)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        h, n, dh = x.shape
        return x.transpose(1, 0, 2).reshape(n, h * dh)

    def forward(self, x_q: np.ndarray, x_kv: np.ndarray,
                mask: np.ndarray | None = None):
        qf, cq = self.wq.forward(x_q)
        kf, ck = self.wk.forward(x_kv)
        vf, cv = self.wv.forward(x_kv)
        q, k, v = self._split(qf), self._split(kf), self._split(vf)
        scale = 1.0 / np.sqrt(self.d_head)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        live = np.ones((x_q.shape[0], x_kv.shape[0]), dtype=bool) if mask is None else mask
        probs = kernels.masked_softmax(scores, live)
        heads = probs @ v
        merged = self._merge(heads)
        out, co = self.wo.forward(merged)
        return out, (cq, ck, cv, co, q, k, v, probs, scale)

    def backward(self, ctx, dout: np.ndarray):
        cq, ck, cv, co, q, k, v, probs, scale = ctx
        dmerged = self.wo.backward(co, dout)
        dheads = self._split(dmerged)
        dprobs = dheads @ v.transpose(0, 2, 1)
        dv = probs.transpose(0, 2, 1) @ dheads
        dscores = softmax_backward(probs, dprobs) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 2, 1) @ q
        dx_q = self.wq.backward(cq, self._merge(dq))
        dx_kv = self.wk.backward(ck, self._merge(dk))
        dx_kv = dx_kv + self.wv.backward(cv, self._merge(dv))
        return dx_q, dx_kv


class ResidualSelfAttention(Module):
    """y = x + attention(x, x, mask); the masked self-attention used in the
    encoder/decoder stacks."""

    def __init__(self, rng: np.random.Generator, dim: int, n_heads: int):
        self.attn = MultiHeadAttention(rng, dim, n_heads)

    def forward(self, x: np.ndarray, mask: np.ndarray):
        out, c = self.attn.forward(x, x, mask)
        return x + out, c

    def backward(self, ctx, dy: np.ndarray) -> np.ndarray:
        dq, dkv = self.attn.backward(ctx, dy)
        return dy + dq + dkv
