"""Optimizer, schedule and one training step for the detector."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..assignment import assign_targets, flat_index, gather_targets, sample_negatives
from ..gtmaps import build_geomaps
from ..losses import (
    GatheredBatch,
    LossParts,
    LossWeights,
    confidence_loss,
    edge_map_loss,
    junction_map_loss,
    position_loss,
    ranking_loss,
    total_loss,
)
from ..synthdata import Sample
from ..tensor import Tensor
from .detector import Detector, ModelOutput


class NonFiniteLossError(FloatingPointError):
    """Raised when a training step produces a NaN or infinite loss."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 3000
    milestones: tuple[float, ...] = (0.5, 0.75)
    gamma: float = 0.1
    batch_size: int = 1
    neg_ratio: float = 3.0
    normalize_pos: bool = False
    grad_clip: float = 0.0  # global L2 norm; 0 disables

    def __post_init__(self) -> None:
        object.__setattr__(self, "milestones", tuple(float(m) for m in self.milestones))
        if self.lr <= 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive, weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if any(not 0 <= m <= 1 for m in self.milestones):
            raise ValueError("milestones are fractions of the run in [0, 1]")
        if self.neg_ratio < 0 or self.grad_clip < 0:
            raise ValueError("neg_ratio and grad_clip must be non-negative")

    def replace(self, **kw) -> "OptimConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return OptimConfig(**d)

    def milestone_steps(self) -> list[int]:
        return [int(round(m * self.steps)) for m in self.milestones]

    def lr_at(self, step: int) -> float:
        """Step decay: multiply by ``gamma`` at every milestone already passed."""
        k = sum(1 for s in self.milestone_steps() if step >= s)
        return self.lr * self.gamma ** k


class AdamW:
    """Adam with decoupled weight decay over a fixed, named parameter list."""

    def __init__(self, named_params, cfg: OptimConfig = OptimConfig()):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate parameter names")
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1 ** self.t
        b2t = 1.0 - c.beta2 ** self.t
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        scale = 1.0
        if c.grad_clip > 0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > c.grad_clip:
                scale = c.grad_clip / norm
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if scale != 1.0:
                g = g * scale
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p.data *= 1.0 - lr * c.weight_decay
            p.data -= lr * (m / b1t) / (np.sqrt(v / b2t) + c.eps)
            p.mark_dirty()
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)])}
        for n, m, v in zip(self.names, self.m, self.v):
            out[f"adam.m.{n}"] = m
            out[f"adam.v.{n}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"][0])
        for k, n in enumerate(self.names):
            self.m[k] = np.array(arrays[f"adam.m.{n}"], dtype=np.float64).reshape(self.params[k].shape)
            self.v[k] = np.array(arrays[f"adam.v.{n}"], dtype=np.float64).reshape(self.params[k].shape)


@dataclass
class TrainItem:
    """One training image with its cached supervision maps."""

    sample: Sample
    index: int
    junction: list[np.ndarray]
    edge: list[np.ndarray]


def prepare_item(sample: Sample, index: int, levels) -> TrainItem:
    maps = build_geomaps(sample.gts, levels)
    return TrainItem(sample, index, [l.endpoint for l in maps.levels], [l.edge for l in maps.levels])


def gather(out: ModelOutput, gts, neg_ratio: float, seed) -> GatheredBatch:
    """Matched-predicting gather: centroid-cell positives plus sampled negatives."""
    G = out.grid
    a = sample_negatives(assign_targets(gts, G), neg_ratio, seed)
    cells, targets, labels = gather_targets(a, gts)
    flat = flat_index(cells, G)
    labels = np.asarray(labels, dtype=np.float64)
    pos_index = np.flatnonzero(labels > 0)
    conf = T.take_rows(T.reshape(out.score_map, (G * G,)), flat)
    pred = T.take_rows(T.reshape(out.loc_map, (G * G, 4)), flat[pos_index])
    tgt = np.array([targets[k].as_array() for k in pos_index]).reshape(-1, 4)
    return GatheredBatch(conf, labels, pred, tgt, pos_index)


def item_losses(model: Detector, item: TrainItem, neg_ratio: float, seed, normalize_pos: bool = False,
                distances: np.ndarray | None = None) -> LossParts:
    """Loss parts for one image.

    ``distances`` replaces the ranking loss's detached quality distances,
    which lets finite differences hold them fixed like the analytic pass does.
    """
    out = model(item.sample.image)
    b = gather(out, item.sample.gts, neg_ratio, seed)
    d = None if distances is None else Tensor(distances)
    return LossParts(
        rank=ranking_loss(b, d),
        conf=confidence_loss(b),
        pos=position_loss(b, normalize=normalize_pos),
        junc=junction_map_loss(out.junction_maps, item.junction),
        edge=edge_map_loss(out.edge_maps, item.edge),
    )


def _mean_parts(parts: list[LossParts]) -> LossParts:
    if len(parts) == 1:
        return parts[0]
    k = 1.0 / len(parts)
    merged = {}
    for name in ("rank", "conf", "pos", "junc", "edge"):
        acc = None
        for p in parts:
            t = T.reshape(getattr(p, name), ())
            acc = t if acc is None else T.add(acc, t)
        merged[name] = T.mul(acc, k)
    return LossParts(**merged)


def train_step(model: Detector, batch: list[TrainItem], opt: AdamW, weights: LossWeights,
               step: int, seed: int = 0) -> dict[str, float]:
    """Forward, gather, total loss, backward and one AdamW update.

    Returns the five loss parts (batch means) plus ``total`` and ``lr``.
    """
    cfg = opt.cfg
    tape = T.get_tape()
    if len(tape):
        raise T.TapeError("train_step needs a clear tape")
    try:
        parts = _mean_parts([
            item_losses(model, it, cfg.neg_ratio, [seed, step, k], cfg.normalize_pos)
            for k, it in enumerate(batch)
        ])
        loss = total_loss(parts, weights)
        values = parts.values()
        values["total"] = loss.item()
        if not all(math.isfinite(v) for v in values.values()):
            dump = {"step": step, "seed": seed, "indices": [it.index for it in batch], "parts": values}
            raise NonFiniteLossError(f"non-finite loss at step {step}: {json.dumps(dump)}", dump)
        tape.backward(loss)
    finally:
        tape.reset()
    lr = cfg.lr_at(step)
    opt.step(lr)
    values["lr"] = lr
    return values


def write_dump(path: Path, err: NonFiniteLossError) -> None:
    Path(path).write_text(json.dumps(err.dump, indent=2, default=str) + "\n")
