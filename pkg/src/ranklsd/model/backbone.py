"""Toy convolutional pyramid: three stages with top-down lateral merges."""

from __future__ import annotations

from .. import tensor as T
from ..tensor import Tensor
from .layers import Conv2d, Module


class Backbone(Module):
    """Produces one ``[hidden, r, r]`` map per configured level, finest first.

    Stage ``s`` runs at ``levels[s]``; the first stage keeps the input
    resolution and every later stage halves it with a strided convolution.
    """

    def __init__(self, rng, input_size: int, levels, hidden: int, widths=(16, 32, 64, 64)):
        self._levels = tuple(levels)
        if self._levels[0] != input_size and input_size % self._levels[0]:
            raise ValueError("finest level must divide the input size")
        self._input_size = input_size
        c0, c1, c2, c3 = widths
        self.stem = Conv2d(rng, 1, c0)
        # pre-downsample when the finest level is below the input resolution
        self._pre = []
        s, ch = input_size, c0
        while s > self._levels[0]:
            conv = Conv2d(rng, ch, c1, stride=2)
            self._pre.append(conv)
            ch, s = c1, s // 2
        self.pre = self._pre
        stage_widths = [c1, c2, c3] + [c3] * max(0, len(self._levels) - 3)
        self.stages = []
        for k, level in enumerate(self._levels):
            w = stage_widths[k]
            down = Conv2d(rng, ch, w, stride=1 if k == 0 else 2)
            same = Conv2d(rng, w, w)
            self.stages.append((down, same))
            ch = w
        self.stage_convs = [c for pair in self.stages for c in pair]
        self.laterals = [Conv2d(rng, stage_widths[k], hidden, k=1) for k in range(len(self._levels))]

    def __call__(self, image: Tensor) -> list[Tensor]:
        if image.ndim != 3 or image.shape[1:] != (self._input_size, self._input_size):
            raise T.ShapeError("backbone", image.shape, (1, self._input_size, self._input_size),
                               "image must be [1, S, S] at the configured input size")
        x = T.relu(self.stem(image))
        for conv in self._pre:
            x = T.relu(conv(x))
        feats = []
        for down, same in self.stages:
            x = T.relu(same(T.relu(down(x))))
            feats.append(x)
        out = [None] * len(feats)
        top = self.laterals[-1](feats[-1])
        out[-1] = top
        for k in range(len(feats) - 2, -1, -1):
            top = T.add(self.laterals[k](feats[k]), T.upsample2x(top))
            out[k] = top
        return out
