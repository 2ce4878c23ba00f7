"""Training losses for matched line-segment prediction.

Formulas are kept literal: the position loss is a sum over positives, the
map losses are (unsquared) L2 norms summed over pyramid levels, and the
ranking loss divides by ``N+ ** 2`` including the zero diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    rank: float = 1.0
    conf: float = 1.0
    pos: float = 10.0
    junc: float = 1.0
    edge: float = 1.0

    def __post_init__(self) -> None:
        for k, v in self.__dict__.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")


@dataclass
class GatheredBatch:
    """Predictions and targets at the positive and selected negative cells.

    ``pos_index`` lists, in order, the entries of ``confidences`` that are
    positives; ``pred_segments`` / ``target_segments`` follow the same order.
    """

    confidences: Tensor  # [N±]
    labels: np.ndarray  # [N±] in {0, 1}
    pred_segments: Tensor  # [N+, 4]
    target_segments: np.ndarray  # [N+, 4]
    pos_index: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        self.target_segments = np.asarray(self.target_segments, dtype=np.float64).reshape(-1, 4)
        self.pos_index = np.asarray(self.pos_index, dtype=np.int64).reshape(-1)
        if self.pred_segments.shape[0] != self.target_segments.shape[0]:
            raise T.ShapeError("GatheredBatch", self.pred_segments.shape, self.target_segments.shape)
        if len(self.pos_index) > self.confidences.size:
            raise ValueError("more positives than gathered points")

    @property
    def n_total(self) -> int:
        return self.confidences.size

    @property
    def n_pos(self) -> int:
        return len(self.pos_index)

    def quality_distances(self) -> np.ndarray:
        """``||l_i - l^_i||_2`` per positive, as plain values (no gradient)."""
        diff = self.pred_segments.data - self.target_segments
        return np.sqrt((diff * diff).sum(axis=1))


def confidence_loss(b: GatheredBatch) -> Tensor:
    """Binary cross-entropy averaged over positive and sampled negative cells."""
    if b.n_total == 0:
        raise ValueError("confidence loss needs at least one gathered point")
    c = T.clip(b.confidences, EPS, 1.0 - EPS)
    y = b.labels
    # y log c + (1 - y) log(1 - c), with (1 - c) built without broadcasting
    ll = T.mul(T.log(c), Tensor(y)) + T.mul(T.log(T.add(T.neg(c), 1.0)), Tensor(1.0 - y))
    return T.mul(T.sum_(ll), -1.0 / b.n_total)


def position_loss(b: GatheredBatch, normalize: bool = False) -> Tensor:
    if b.n_pos == 0:
        return Tensor(0.0)
    loss = T.l1_norm(T.sub(b.pred_segments, Tensor(b.target_segments)))
    return T.mul(loss, 1.0 / b.n_pos) if normalize else loss


def ranking_loss(b: GatheredBatch, distances: Tensor | None = None) -> Tensor:
    """``-(1/N+^2) sum_ij sigmoid(c_j - c_i) (d_i - d_j)``.

    ``distances`` defaults to the detached per-positive quality distances;
    pass a differentiable tensor to let gradients reach the segment geometry.
    """
    n = b.n_pos
    if n <= 1:
        return Tensor(0.0)
    c = T.take_rows(b.confidences, b.pos_index)
    d = Tensor(b.quality_distances()) if distances is None else distances
    col = lambda v: T.reshape(v, (n, 1))
    row = lambda v: T.reshape(v, (1, n))
    ones_c, ones_r = Tensor(np.ones((n, 1))), Tensor(np.ones((1, n)))
    # cdiff[i, j] = c_j - c_i ; ddiff[i, j] = d_i - d_j
    cdiff = T.sub(T.matmul(ones_c, row(c)), T.matmul(col(c), ones_r))
    ddiff = T.sub(T.matmul(col(d), ones_r), T.matmul(ones_c, row(d)))
    pair = T.mul(T.sigmoid(cdiff), ddiff)
    return T.mul(T.sum_(pair), -1.0 / (n * n))


def _map_loss(pred_maps, gt_maps, name: str) -> Tensor:
    if len(pred_maps) != len(gt_maps):
        raise T.ShapeError(name, (len(pred_maps),), (len(gt_maps),), "level count differs")
    total = None
    for p, g in zip(pred_maps, gt_maps):
        g = g if isinstance(g, Tensor) else Tensor(np.asarray(g))
        if p.shape != g.shape:
            raise T.ShapeError(name, p.shape, g.shape)
        term = T.l2_norm(T.sub(p, g))
        total = term if total is None else T.add(total, term)
    return total if total is not None else Tensor(0.0)


def junction_map_loss(pred_maps, gt_maps) -> Tensor:
    return _map_loss(pred_maps, gt_maps, "junction_map_loss")


def edge_map_loss(pred_maps, gt_maps) -> Tensor:
    return _map_loss(pred_maps, gt_maps, "edge_map_loss")


@dataclass
class LossParts:
    rank: Tensor
    conf: Tensor
    pos: Tensor
    junc: Tensor
    edge: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("rank", "conf", "pos", "junc", "edge")}


def total_loss(parts: LossParts, w: LossWeights = LossWeights()) -> Tensor:
    terms = [
        (w.rank, parts.rank),
        (w.conf, parts.conf),
        (w.pos, parts.pos),
        (w.junc, parts.junc),
        (w.edge, parts.edge),
    ]
    for _, t in terms:
        if t.size != 1:
            raise T.ShapeError("total_loss", t.shape, (), "loss parts must be scalar")
    out = None
    for lam, t in terms:
        term = T.mul(T.reshape(t, ()), lam)
        out = term if out is None else T.add(out, term)
    return out
