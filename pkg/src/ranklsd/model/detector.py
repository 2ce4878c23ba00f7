"""End-to-end toy detector: backbone, deformable encoder, prediction heads."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .backbone import Backbone
from .encoder import DeformableEncoder
from .layers import Conv2d, Module


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    levels: tuple[int, ...] = (64, 32, 16)
    hidden_dim: int = 64
    encoder_layers: int = 2
    heads: int = 4
    referring_points: int = 4
    ffn_dim: int = 128
    head_dim: int = 32
    geo_dim: int = 16
    rotation_augment: bool = False
    rotation_aggregate: str = "average"
    predict_level: int = 0  # index into levels used by the score / location heads
    sine_positions: bool = True  # absolute positional encoding added to attention queries
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(int(r) for r in self.levels))
        lv = self.levels
        if not lv or any(r & (r - 1) for r in lv):
            raise ValueError("levels must be powers of two")
        if any(b * 2 != a for a, b in zip(lv, lv[1:])):
            raise ValueError("levels must halve from one to the next")
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")
        if self.referring_points < 1:
            raise ValueError("referring_points must be >= 1")
        if self.rotation_aggregate not in ("average", "max"):
            raise ValueError("rotation_aggregate must be 'average' or 'max'")
        if not 0 <= self.predict_level < len(lv):
            raise ValueError("predict_level out of range")

    @property
    def grid(self) -> int:
        return self.levels[self.predict_level]

    def replace(self, **kw) -> "ModelConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ModelConfig(**d)


@dataclass
class ModelOutput:
    score_map: Tensor  # [G, G] post-sigmoid
    loc_map: Tensor  # [G, G, 4] normalized (x1, y1, x2, y2)
    junction_maps: list[Tensor] = field(default_factory=list)  # per level [r, r]
    edge_maps: list[Tensor] = field(default_factory=list)

    @property
    def grid(self) -> int:
        return self.score_map.shape[0]


def _anchor(G: int) -> np.ndarray:
    ys, xs = np.mgrid[0:G, 0:G]
    c = np.stack([(xs + 0.5) / G, (ys + 0.5) / G], axis=-1)
    return np.concatenate([c, c], axis=-1)


class Detector(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        D = cfg.hidden_dim
        self.backbone = Backbone(rng, cfg.input_size, cfg.levels, D)
        self.encoder = DeformableEncoder(rng, D, cfg.heads, cfg.levels, cfg.referring_points,
                                         cfg.encoder_layers, cfg.ffn_dim, cfg.sine_positions)
        self.score1 = Conv2d(rng, D, cfg.head_dim)
        self.score2 = Conv2d(rng, cfg.head_dim, 1, k=1)
        # start from a low prior so the untrained model predicts few segments
        self.score2.bias.data[:] = -4.0
        self.loc1 = Conv2d(rng, D, cfg.head_dim)
        self.loc2 = Conv2d(rng, cfg.head_dim, 4, k=1, zero=True)
        self.geo1 = Conv2d(rng, D, cfg.geo_dim)
        self.geo2 = Conv2d(rng, cfg.geo_dim, 2, k=1)

    # -- stages
    def backbone_forward(self, image: Tensor) -> list[Tensor]:
        return self.backbone(image)

    def features(self, image: Tensor) -> list[Tensor]:
        """Backbone features, optionally aggregated over +-90 degree rotations."""
        cfg = self.cfg
        if not cfg.rotation_augment:
            return self.backbone(image)
        if image.shape[-1] != image.shape[-2]:
            raise T.ShapeError("rotation_augment", image.shape, image.shape, "input must be square")
        plain = self.backbone(image)
        branches = [plain]
        for d in (1, -1):
            rotated = self.backbone(T.rot90(image, d))
            branches.append([T.rot90(f, -d) for f in rotated])
        out = []
        for per_level in zip(*branches):
            if cfg.rotation_aggregate == "average":
                acc = T.add(T.add(per_level[0], per_level[1]), per_level[2])
                out.append(T.mul(acc, 1.0 / 3.0))
            else:
                out.append(T.maximum(T.maximum(per_level[0], per_level[1]), per_level[2]))
        return out

    def deformable_encoder(self, feats) -> list[Tensor]:
        return self.encoder(feats)

    def heads_forward(self, feats, predict_level: int | None = None) -> ModelOutput:
        """Score/location heads on one level, geometric heads on every level.

        ``predict_level`` overrides the configured prediction level.
        """
        level = self.cfg.predict_level if predict_level is None else predict_level
        f = feats[level]
        G = f.shape[-1]
        score = T.sigmoid(self.score2(T.relu(self.score1(f))))
        score = T.reshape(score, (G, G))
        loc = self.loc2(T.relu(self.loc1(f)))  # [4, G, G]
        loc = T.add(T.transpose(loc, (1, 2, 0)), Tensor._wrap(_anchor(G)))
        junc, edge = [], []
        for fl in feats:
            g = T.sigmoid(self.geo2(T.relu(self.geo1(fl))))
            junc.append(T.getitem(g, 0))
            edge.append(T.getitem(g, 1))
        return ModelOutput(score, loc, junc, edge)

    def __call__(self, image: Tensor, predict_level: int | None = None) -> ModelOutput:
        return self.heads_forward(self.deformable_encoder(self.features(image)), predict_level)

    forward = __call__

    def forward_with_rotation_augment(self, image: Tensor) -> ModelOutput:
        if not self.cfg.rotation_augment:
            raise ValueError("rotation augmentation is disabled in this config")
        return self(image)
