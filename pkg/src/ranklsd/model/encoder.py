"""Multi-scale deformable-attention encoder over flattened pyramid tokens.

Token ``n`` of level ``l`` (resolution ``r``) lives at pixel ``(j, i)`` of
that level, i.e. normalized center ``((j + .5) / r, (i + .5) / r)``. Each
head samples ``K`` learned locations per level around the token's reference
point and mixes them with softmax weights.
"""

from __future__ import annotations

import math

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .layers import LayerNorm, Linear, Module, param


def reference_points(levels) -> np.ndarray:
    """Normalized ``[N_tokens, 2]`` token centers, levels concatenated finest first."""
    refs = []
    for r in levels:
        ys, xs = np.mgrid[0:r, 0:r]
        refs.append(np.stack([(xs.ravel() + 0.5) / r, (ys.ravel() + 0.5) / r], axis=1))
    return np.concatenate(refs, axis=0)


def sine_positions(levels, dim: int) -> np.ndarray:
    if dim % 4:
        raise ValueError("hidden dim must be divisible by 4 for positional encoding")
    ref = reference_points(levels)
    q = dim // 4
    freq = math.pi * 4.0 / (100.0 ** (np.arange(q) / q))
    cx, cy = ref[:, :1] * freq, ref[:, 1:] * freq
    return np.concatenate([np.sin(cx), np.cos(cx), np.sin(cy), np.cos(cy)], axis=1)


class DeformableAttention(Module):
    def __init__(self, rng, dim: int, heads: int, levels, points: int):
        if points < 1:
            raise ValueError("referring points K must be >= 1")
        if dim % heads:
            raise ValueError("hidden dim must be divisible by heads")
        self._dim, self._heads, self._levels, self._K = dim, heads, tuple(levels), points
        L = len(self._levels)
        self.offsets = Linear(rng, dim, heads * L * points * 2, zero=True)
        # initial sampling pattern: rays at distinct angles, growing with k
        th = np.arange(heads * points) * (2 * math.pi / (heads * points))
        ring = np.stack([np.cos(th), np.sin(th)], -1).reshape(heads, 1, points, 2)
        ring = np.repeat(ring, L, axis=1) * np.arange(1, points + 1).reshape(1, 1, points, 1)
        self.offsets.bias = param(ring.ravel())
        self.weights = Linear(rng, dim, heads * L * points, zero=True)
        self.value = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim)
        ref = reference_points(self._levels)
        n = ref.shape[0]
        # per-level pixel reference coordinates, repeated for the K points and tiled per head
        self._ref_pix = [
            np.ascontiguousarray(np.broadcast_to(np.repeat(ref * r - 0.5, points, axis=0), (heads, n * points, 2)))
            for r in self._levels
        ]
        self._starts = np.cumsum([0] + [r * r for r in self._levels])

    def sample(self, x: Tensor, query: Tensor) -> Tensor:
        """Attention output before the output projection, ``[N, dim]``."""
        N = x.shape[0]
        H, K, L = self._heads, self._K, len(self._levels)
        dh = self._dim // H
        off = T.transpose(T.reshape(self.offsets(query), (N, H, L, K, 2)), (2, 1, 0, 3, 4))  # [L, H, N, K, 2]
        attn = T.softmax(T.reshape(self.weights(query), (N, H, L * K)), axis=-1)
        v = self.value(x)
        samples = []
        for li, r in enumerate(self._levels):
            vl = T.getitem(v, slice(int(self._starts[li]), int(self._starts[li + 1])))
            pts = T.add(T.reshape(T.getitem(off, li), (H, N * K, 2)), Tensor._wrap(self._ref_pix[li]))
            s = T.bilinear_sample_heads(T.reshape(vl, (r, r, H, dh)), pts)
            samples.append(T.reshape(s, (H * N, K, dh)))
        stacked = T.concat(samples, axis=1)  # [H*N, L*K, dh]
        w = T.reshape(T.transpose(attn, (1, 0, 2)), (H * N, 1, L * K))
        mixed = T.reshape(T.matmul(w, stacked), (H, N, dh))
        return T.reshape(T.transpose(mixed, (1, 0, 2)), (N, H * dh))

    def __call__(self, x: Tensor, query: Tensor) -> Tensor:
        return self.out(self.sample(x, query))


class EncoderLayer(Module):
    def __init__(self, rng, dim: int, heads: int, levels, points: int, ffn: int):
        self.attn = DeformableAttention(rng, dim, heads, levels, points)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(rng, dim, ffn)
        self.ff2 = Linear(rng, ffn, dim)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor, pos: Tensor) -> Tensor:
        x = self.norm1(T.add(x, self.attn(x, T.add(x, pos))))
        return self.norm2(T.add(x, self.ff2(T.relu(self.ff1(x)))))


class DeformableEncoder(Module):
    def __init__(self, rng, dim: int, heads: int, levels, points: int, layers: int, ffn: int,
                 use_sine: bool = True):
        self._levels = tuple(levels)
        # without the sine term the queries only carry a per-level embedding,
        # which keeps the encoder translation-equivariant
        n = sum(r * r for r in self._levels)
        self._pos = sine_positions(self._levels, dim) if use_sine else np.zeros((n, dim))
        self._level_ids = np.concatenate([np.full(r * r, k) for k, r in enumerate(self._levels)])
        self.level_embed = param(np.zeros((len(self._levels), dim)))
        self.layers = [EncoderLayer(rng, dim, heads, self._levels, points, ffn) for _ in range(layers)]

    def tokens(self, feats) -> Tensor:
        flat = [T.transpose(T.reshape(f, (f.shape[0], -1)), (1, 0)) for f in feats]
        return T.concat(flat, axis=0)

    def untokens(self, tok: Tensor) -> list[Tensor]:
        out, start = [], 0
        D = tok.shape[1]
        for r in self._levels:
            part = T.getitem(tok, slice(start, start + r * r))
            out.append(T.reshape(T.transpose(part, (1, 0)), (D, r, r)))
            start += r * r
        return out

    def __call__(self, feats) -> list[Tensor]:
        for f, r in zip(feats, self._levels):
            if f.shape[1:] != (r, r):
                raise T.ShapeError("encoder", f.shape, (f.shape[0], r, r))
        x = self.tokens(feats)
        pos = T.add(T.take_rows(self.level_embed, self._level_ids), Tensor._wrap(self._pos))
        for layer in self.layers:
            x = layer(x, pos)
        return self.untokens(x)
