"""Minimal float64 layer library with hand-written forward/backward passes.

Layers are functional in their activations: `forward` returns (output, ctx)
and `backward(ctx, grad_out)` returns grad_in while accumulating parameter
gradients. That keeps a layer reusable several times inside one step (the
same weights may run under different inputs before a single optimizer step).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)


class Module:
    """Base with recursive parameter discovery in attribute insertion order."""

    def named_params(self) -> list[tuple[str, Param]]:
        out: list[tuple[str, Param]] = []
        for key, val in vars(self).items():
            if isinstance(val, Param):
                out.append((key, val))
            elif isinstance(val, Module):
                out.extend((f"{key}.{n}", p) for n, p in val.named_params())
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend((f"{key}.{i}.{n}", p)
                                   for n, p in item.named_params())
        return out

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ValueError(f"state mismatch; missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.value.shape}")
            p.value[...] = arr

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params())


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


class Dense(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (d_in + d_out)), (d_in, d_out))
        self.w = Param(w)
        self.b = Param(np.zeros(d_out))

    def forward(self, x: np.ndarray):
        return x @ self.w.value + self.b.value, x

    def backward(self, ctx, dy: np.ndarray) -> np.ndarray:
        x = ctx
        self.w.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class LayerNorm(Module):
    """Normalizes the last axis; affine=False leaves modulation to the caller."""

    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-6):
        self.eps = eps
        self.affine = affine
        if affine:
            self.gamma = Param(np.ones(dim))
            self.beta = Param(np.zeros(dim))

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        y = xhat * self.gamma.value + self.beta.value if self.affine else xhat
        return y, (xhat, inv)

    def backward(self, ctx, dy: np.ndarray) -> np.ndarray:
        xhat, inv = ctx
        if self.affine:
            self.gamma.grad += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
            self.beta.grad += dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
            dxhat = dy * self.gamma.value
        else:
            dxhat = dy
        mean_d = dxhat.mean(axis=-1, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv * (dxhat - mean_d - xhat * mean_dx)


class MLP(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int,
                 d_out: int, zero_init_out: bool = False):
        self.fc1 = Dense(rng, d_in, d_hidden)
        self.fc2 = Dense(rng, d_hidden, d_out, zero_init=zero_init_out)

    def forward(self, x: np.ndarray):
        pre, c1 = self.fc1.forward(x)
        y, c2 = self.fc2.forward(gelu(pre))
        return y, (c1, pre, c2)

    def backward(self, ctx, dy: np.ndarray) -> np.ndarray:
        c1, pre, c2 = ctx
        dh = self.fc2.backward(c2, dy) * gelu_grad(pre)
        return self.fc1.backward(c1, dh)


class AdamW:
    """Decoupled weight decay Adam; state arrays keyed by parameter order."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: list[Param] = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.value
            p.value -= self.lr * update


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Transformer-style timestep features: (dim,) for a scalar t."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    args = float(t) * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(1)])
    return emb


def softmax_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Gradient through a (masked) softmax given its output probabilities.

    Masked entries carry probs == 0, which zeroes their score gradient.
    """
    inner = (probs * dprobs).sum(axis=-1, keepdims=True)
    return probs * (dprobs - inner)
