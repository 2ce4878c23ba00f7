"""Structural AP / F-score evaluation for line segments.

A prediction is a true positive when the summed squared endpoint distance
(pairing-min, coordinates scaled to a 128 x 128 frame) to a still-unmatched
ground truth is at most the threshold. Matching is greedy in rank order
within each image; AP ranks all predictions of the evaluation set jointly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import pairwise_sq_distance, segments_to_array
from .rerank import RerankWeights, ScoredSegment, rerank

EVAL_SCALE = 128.0
DEFAULT_THRESHOLDS = (5.0, 10.0, 15.0)


class UnsortedPredictionsError(ValueError):
    pass


def _as_pred_arrays(preds, scores=None):
    if len(preds) and isinstance(preds[0], ScoredSegment):
        segs = np.asarray([list(p.seg) for p in preds], dtype=np.float64).reshape(-1, 4)
        sc = np.asarray([p.score for p in preds], dtype=np.float64)
        return segs, sc
    segs = segments_to_array(preds) if len(preds) else np.zeros((0, 4))
    sc = np.asarray(scores if scores is not None else np.zeros(len(segs)), dtype=np.float64)
    return segs, sc


def match_ranked(preds, gts, threshold: float, scale: float = EVAL_SCALE, scores=None) -> np.ndarray:
    """TP flags for ``preds`` (sorted by descending score) against ``gts``."""
    segs, sc = _as_pred_arrays(preds, scores)
    if sc.size > 1 and np.any(np.diff(sc) > 0):
        raise UnsortedPredictionsError("predictions must be sorted by descending score")
    g = segments_to_array(gts) if len(gts) else np.zeros((0, 4))
    if segs.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if g.shape[0] == 0:
        return np.zeros(segs.shape[0], dtype=bool)
    d2 = pairwise_sq_distance(segs * scale, g * scale)
    return np.asarray(kernels.match_greedy(np.ascontiguousarray(d2), float(threshold)), dtype=bool)


@dataclass
class ImagePredictions:
    """Per-image predictions sorted by descending score."""

    segs: np.ndarray
    scores: np.ndarray
    gts: np.ndarray

    @classmethod
    def build(cls, preds, gts, scores=None) -> "ImagePredictions":
        segs, sc = _as_pred_arrays(list(preds), scores)
        order = np.argsort(-sc, kind="stable")
        g = segments_to_array(gts) if len(gts) else np.zeros((0, 4))
        return cls(segs[order], sc[order], g)


def _global_sweep(images: list[ImagePredictions], threshold: float, scale: float):
    n_gt = sum(im.gts.shape[0] for im in images)
    if n_gt == 0:
        raise ValueError("evaluation set has no ground-truth segments")
    tps, scores = [], []
    for im in images:
        tps.append(match_ranked(im.segs, im.gts, threshold, scale, im.scores))
        scores.append(im.scores)
    tp = np.concatenate(tps) if tps else np.zeros(0, bool)
    sc = np.concatenate(scores) if scores else np.zeros(0)
    order = np.argsort(-sc, kind="stable")
    tp = tp[order].astype(np.float64)
    sc = sc[order]
    ctp = np.cumsum(tp)
    ranks = np.arange(1, tp.size + 1, dtype=np.float64)
    return ctp / n_gt, ctp / np.maximum(ranks, 1), sc


def _coerce(images) -> list[ImagePredictions]:
    if isinstance(images, ImagePredictions):
        return [images]
    return list(images)


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope of a recall/precision sweep."""
    r = np.concatenate(([0.0], recall, [1.0]))
    p = np.concatenate(([0.0], precision, [0.0]))
    p = np.maximum.accumulate(p[::-1])[::-1]
    idx = np.where(r[1:] != r[:-1])[0]
    return float(np.sum((r[idx + 1] - r[idx]) * p[idx + 1]))


def sap(images, threshold: float, scale: float = EVAL_SCALE) -> float:
    """Structural AP in ``[0, 1]`` over one or more :class:`ImagePredictions`."""
    rec, prec, _ = _global_sweep(_coerce(images), threshold, scale)
    if rec.size == 0:
        return 0.0
    return average_precision(rec, prec)


def sf(images, threshold: float, scale: float = EVAL_SCALE) -> float:
    """Best F-score over all score cutoffs."""
    rec, prec, _ = _global_sweep(_coerce(images), threshold, scale)
    if rec.size == 0:
        return 0.0
    denom = rec + prec
    f = np.where(denom > 0, 2 * rec * prec / np.where(denom > 0, denom, 1.0), 0.0)
    return float(f.max())


def pr_curve(images, threshold: float, scale: float = EVAL_SCALE):
    """``(precision, recall, score_cutoff)`` rows in ranked order."""
    rec, prec, sc = _global_sweep(_coerce(images), threshold, scale)
    return np.stack([prec, rec, sc], axis=1) if rec.size else np.zeros((0, 3))


@dataclass
class EvalResult:
    thresholds: tuple[float, ...]
    sap: dict[float, float] = field(default_factory=dict)
    sf: dict[float, float] = field(default_factory=dict)
    curves: dict[float, np.ndarray] = field(default_factory=dict)

    def to_csv(self, header: str | None = None) -> str:
        rows = [f"# {h}" for h in header.splitlines()] if header else []
        rows.append("threshold,sAP,sF")
        rows += [f"{t:g},{self.sap[t]:.6f},{self.sf[t]:.6f}" for t in self.thresholds]
        return "\n".join(rows) + "\n"

    def curve_csv(self, t: float, header: str | None = None) -> str:
        rows = [f"# {h}" for h in header.splitlines()] if header else []
        rows.append("precision,recall,score")
        rows += [f"{p:.6f},{r:.6f},{s:.6f}" for p, r, s in self.curves[t]]
        return "\n".join(rows) + "\n"


def evaluate(images, thresholds=DEFAULT_THRESHOLDS, scale: float = EVAL_SCALE) -> EvalResult:
    images = _coerce(images)
    res = EvalResult(tuple(float(t) for t in thresholds))
    for t in res.thresholds:
        res.sap[t] = sap(images, t, scale)
        res.sf[t] = sf(images, t, scale)
        res.curves[t] = pr_curve(images, t, scale)
    return res


def oracle_rerank_experiment(pools, gts_list, w: RerankWeights = RerankWeights(),
                             threshold: float = 10.0, resolution: int = 128):
    """sAP of confidence ordering vs re-ranking with maps rasterized from the gts."""
    from .gtmaps import build_geomaps

    before, after = [], []
    for pool, gts in zip(pools, gts_list):
        before.append(ImagePredictions.build([p.seg for p in pool], gts, [p.c for p in pool]))
        ranked = rerank(pool, build_geomaps(gts, [resolution]), w)
        after.append(ImagePredictions.build([p.seg for p in ranked], gts, [p.s for p in ranked]))
    return sap(before, threshold), sap(after, threshold)
