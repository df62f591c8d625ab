"""Minimal layer library on top of :mod:`extcontact.autograd`."""

from __future__ import annotations

import math
from collections.abc import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Container of named parameters and child modules (registration order is kept)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.array(value), requires_grad=True, name=name)
        self._params[name] = t
        object.__setattr__(self, name, t)
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        object.__setattr__(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._children.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, dtype, init_scale: float = 1.0):
        super().__init__()
        std = init_scale / math.sqrt(fan_in)
        self.param("weight", rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype))
        self.param("bias", np.zeros(fan_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype):
        super().__init__()
        self.param("gamma", np.ones(dim, dtype=dtype))
        self.param("beta", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)


_ACTIVATIONS = {"gelu": ag.gelu, "tanh": ag.tanh}


class MLP(Module):
    """Linear layers with a smooth activation between them (none after the last)."""

    def __init__(self, widths, rng, dtype, final_scale: float = 1.0, activation: str = "gelu"):
        super().__init__()
        self.depth = len(widths) - 1
        self.act = _ACTIVATIONS[activation]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            scale = final_scale if i == self.depth - 1 else 1.0
            self.child(f"fc{i}", Linear(a, b, rng, dtype, init_scale=scale))

    def __call__(self, x: Tensor, final_activation: bool = False) -> Tensor:
        for i in range(self.depth):
            x = getattr(self, f"fc{i}")(x)
            if i < self.depth - 1 or final_activation:
                x = self.act(x)
        return x


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng, dtype):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.child("qkv", Linear(dim, 3 * dim, rng, dtype))
        self.child("out", Linear(dim, dim, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        B, S, D = x.shape
        h, dh = self.heads, D // self.heads
        qkv = self.qkv(x).reshape(B, S, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
        attn = ag.softmax(scores, axis=-1)
        o = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, S, D)
        return self.out(o)


class TransformerBlock(Module):
    """Pre-norm encoder block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, dim: int, heads: int, ff_mult: int, rng, dtype):
        super().__init__()
        self.child("ln1", LayerNorm(dim, dtype))
        self.child("attn", SelfAttention(dim, heads, rng, dtype))
        self.child("ln2", LayerNorm(dim, dtype))
        self.child("ff", MLP([dim, ff_mult * dim, dim], rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class TransformerEncoder(Module):
    def __init__(self, dim: int, depth: int, heads: int, ff_mult: int, rng, dtype):
        super().__init__()
        self.depth = depth
        for i in range(depth):
            self.child(f"block{i}", TransformerBlock(dim, heads, ff_mult, rng, dtype))
        self.child("norm", LayerNorm(dim, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        for i in range(self.depth):
            x = getattr(self, f"block{i}")(x)
        return self.norm(x)
