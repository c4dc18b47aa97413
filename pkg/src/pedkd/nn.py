"""Small layer library on top of :mod:`pedkd.autograd`."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Parameter container. Parameters are discovered from instance attributes
    in assignment order, so ordering is stable across runs."""

    def named_parameters(self, prefix: str = "", include_frozen: bool = False) -> list[tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and (val.requires_grad or include_frozen) and val.name is not None:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(name + ".", include_frozen))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Tensor) and (item.requires_grad or include_frozen) and item.name is not None:
                        out.append((f"{name}.{i}", item))
                    elif isinstance(item, Module):
                        out.extend(item.named_parameters(f"{name}.{i}.", include_frozen))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters(include_frozen=True)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters(include_frozen=True))
        if set(named) != set(state):
            missing = sorted(set(named) ^ set(state))
            raise KeyError(f"state dict keys differ: {missing[:5]}")
        for n, p in named.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False


def _param(arr, name: str) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, zero: bool = False,
                 gain: float = 1.0):
        w = np.zeros((n_in, n_out)) if zero else rng.normal(0.0, gain / np.sqrt(n_in), (n_in, n_out))
        self.weight = _param(w, "weight")
        self.bias = _param(np.zeros(n_out), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3):
        std = np.sqrt(2.0 / (c_in * k * k))
        self.weight = _param(rng.normal(0.0, std, (c_out, c_in, k, k)), "weight")
        self.bias = _param(np.zeros(c_out), "bias")
        self.pad = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = _param(np.ones(dim), "gain")
        self.bias = _param(np.zeros(dim), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gain, self.bias)


class MLPHead(Module):
    """d_in -> hidden (tanh) -> n_out. ``out_std=0`` starts the output layer at zero."""

    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int, n_out: int,
                 out_std: float = 0.0):
        self.fc1 = Linear(rng, d_in, hidden)
        self.fc2 = Linear(rng, hidden, n_out, zero=out_std == 0.0, gain=out_std * np.sqrt(hidden))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.tanh(self.fc1(x)))


class ConvBackbone(Module):
    """Conv-ReLU-avgpool blocks followed by a global average pool."""

    def __init__(self, rng: np.random.Generator, in_ch: int = 3, widths=(16, 32, 64),
                 embed_dim: int = 64):
        chans = (in_ch,) + tuple(widths)
        self.blocks = [Conv2d(rng, chans[i], chans[i + 1]) for i in range(len(widths))]
        self.proj = Linear(rng, widths[-1], embed_dim) if widths[-1] != embed_dim else None

    def __call__(self, x: Tensor) -> Tensor:
        x = (x - 0.5) * 2.0
        for conv in self.blocks:
            x = ag.avg_pool2d(ag.relu(conv(x)))
        x = ag.mean(x, axis=(2, 3))
        return self.proj(x) if self.proj is not None else x


class AttentionBlock(Module):
    def __init__(self, rng: np.random.Generator, width: int, heads: int, mlp_hidden: int):
        if width % heads:
            raise ValueError("width must be divisible by heads")
        self.heads = heads
        self.ln1 = LayerNorm(width)
        self.qkv = Linear(rng, width, 3 * width)
        self.out = Linear(rng, width, width)
        self.ln2 = LayerNorm(width)
        self.fc1 = Linear(rng, width, mlp_hidden, gain=np.sqrt(2.0))
        self.fc2 = Linear(rng, mlp_hidden, width)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.out(ag.self_attention(self.qkv(self.ln1(x)), self.heads))
        return x + self.fc2(ag.relu(self.fc1(self.ln2(x))))


class AttentionBackbone(Module):
    """Patchify, add a learned per-patch position bias, self-attention blocks, mean pool."""

    def __init__(self, rng: np.random.Generator, image_size: int = 64, in_ch: int = 3,
                 patch: int = 4, width: int = 32, depth: int = 2, heads: int = 4,
                 embed_dim: int = 64):
        if image_size % patch:
            raise ValueError("image size must be a multiple of the patch size")
        self.patch = patch
        n_tokens = (image_size // patch) ** 2
        self.embed = Linear(rng, in_ch * patch * patch, width)
        self.pos = _param(rng.normal(0.0, 0.02, (n_tokens, width)), "pos")
        self.blocks = [AttentionBlock(rng, width, heads, width) for _ in range(depth)]
        self.ln = LayerNorm(width)
        self.proj = Linear(rng, width, embed_dim)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        p = self.patch
        tokens = x.reshape(B, C, H // p, p, W // p, p).transpose(0, 2, 4, 1, 3, 5)
        tokens = tokens.reshape(B, (H // p) * (W // p), C * p * p)
        z = self.embed((tokens - 0.5) * 2.0) + self.pos
        for blk in self.blocks:
            z = blk(z)
        return self.proj(ag.mean(self.ln(z), axis=1))
