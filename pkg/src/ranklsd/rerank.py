"""Posterior re-ranking of candidate segments with geometric evidence.

A candidate's fused score adds weighted endpoint, edge, and length scores to
its raw confidence. Everything here runs on plain arrays: re-ranking is an
inference-time step and carries no gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .geometry import LineSegment

DEFAULT_DELTAS = (0.5, 0.5, 0.5)
VALIDATED_DELTAS = (0.4, 0.1, 0.2)


@dataclass(frozen=True)
class RerankWeights:
    delta_e: float = 0.5
    delta_d: float = 0.5
    delta_l: float = 0.5
    samples: int = 32
    symmetric_samples: bool = False  # include e2 in the edge sample set

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        for v in (self.delta_e, self.delta_d, self.delta_l):
            if not math.isfinite(v):
                raise ValueError("re-ranking weights must be finite")

    @property
    def disabled(self) -> bool:
        return self.delta_e == 0 and self.delta_d == 0 and self.delta_l == 0


@dataclass
class ScoredSegment:
    seg: LineSegment
    c: float
    s_e: float = 0.0
    s_d: float = 0.0
    s_l: float = 0.0
    s: float | None = None

    @property
    def score(self) -> float:
        return self.c if self.s is None else self.s


def _sample(m: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    m = np.ascontiguousarray(m, dtype=np.float64)
    return kernels.bilinear_forward(m[None], np.ascontiguousarray(px), np.ascontiguousarray(py))[:, 0]


def _segs(segs) -> np.ndarray:
    if isinstance(segs, LineSegment):
        return segs.as_array()[None]
    return np.asarray(segs, dtype=np.float64).reshape(-1, 4)


def endpoint_scores(segs, M_e: np.ndarray) -> np.ndarray:
    """Mean endpoint-map value at the two endpoints, per segment."""
    px = _segs(segs) * M_e.shape[-1]
    a = _sample(M_e, px[:, 0], px[:, 1])
    b = _sample(M_e, px[:, 2], px[:, 3])
    return 0.5 * (a + b)


def edge_scores(segs, M_d: np.ndarray, m: int = 32, symmetric: bool = False) -> np.ndarray:
    """Mean edge-map value at ``(k/m) e1 + ((m-k)/m) e2`` for ``k = 1..m``.

    With ``symmetric`` the sample set is ``k = 0..m`` so both endpoints count.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    px = _segs(segs) * M_d.shape[-1]
    k = np.arange(0 if symmetric else 1, m + 1, dtype=np.float64) / m
    xs = k[None] * px[:, 0:1] + (1.0 - k[None]) * px[:, 2:3]
    ys = k[None] * px[:, 1:2] + (1.0 - k[None]) * px[:, 3:4]
    vals = _sample(M_d, xs.ravel(), ys.ravel()).reshape(xs.shape)
    return vals.mean(axis=1)


def length_scores(segs, scale: float) -> np.ndarray:
    """``ln(pixel length + 1)``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    s = _segs(segs)
    return np.log(np.hypot(s[:, 0] - s[:, 2], s[:, 1] - s[:, 3]) * scale + 1.0)


def endpoint_score(seg: LineSegment, M_e) -> float:
    return float(endpoint_scores(seg, np.asarray(M_e))[0])


def edge_score(seg: LineSegment, M_d, m: int = 32, symmetric: bool = False) -> float:
    return float(edge_scores(seg, np.asarray(M_d), m, symmetric)[0])


def length_score(seg: LineSegment, scale: float) -> float:
    return float(length_scores(seg, scale)[0])


def fuse(s_e: float, s_d: float, s_l: float, c: float, w: RerankWeights, seg: LineSegment | None = None):
    s = w.delta_e * s_e + w.delta_d * s_d + w.delta_l * s_l + c
    if seg is None:
        return s
    return ScoredSegment(seg, c, s_e, s_d, s_l, s)


def _map_array(m) -> np.ndarray:
    return np.asarray(getattr(m, "data", m), dtype=np.float64)


def rerank_arrays(segs: np.ndarray, conf: np.ndarray, M_e, M_d, w: RerankWeights):
    """Vectorized scoring; returns ``(fused, s_e, s_d, s_l)`` arrays."""
    M_e, M_d = _map_array(M_e), _map_array(M_d)
    segs = _segs(segs)
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    if segs.shape[0] == 0:
        z = np.zeros(0)
        return z, z, z, z
    se = endpoint_scores(segs, M_e)
    sd = edge_scores(segs, M_d, w.samples, w.symmetric_samples)
    sl = length_scores(segs, M_d.shape[-1])
    fused = w.delta_e * se + w.delta_d * sd + w.delta_l * sl + conf
    return fused, se, sd, sl


def order_by_score(scores: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Indices sorting by score descending, ties by canonical segment order."""
    segs = _segs(segs)
    c = segs.copy()
    swap = (c[:, 1] > c[:, 3]) | ((c[:, 1] == c[:, 3]) & (c[:, 0] > c[:, 2]))
    c[swap] = c[swap][:, [2, 3, 0, 1]]
    # lexsort: last key is primary
    return np.lexsort((c[:, 2], c[:, 3], c[:, 0], c[:, 1], -np.asarray(scores)))


def rerank(candidates, maps, w: RerankWeights = RerankWeights()) -> list[ScoredSegment]:
    """Fuse every candidate with the finest map level and sort by fused score."""
    if not candidates:
        return []
    level = maps.finest
    segs = np.asarray([list(c.seg) for c in candidates], dtype=np.float64)
    conf = np.asarray([c.c for c in candidates], dtype=np.float64)
    fused, se, sd, sl = rerank_arrays(segs, conf, level.endpoint, level.edge, w)
    out = [
        replace(c, s_e=float(se[k]), s_d=float(sd[k]), s_l=float(sl[k]), s=float(fused[k]))
        for k, c in enumerate(candidates)
    ]
    return [out[k] for k in order_by_score(fused, segs)]
