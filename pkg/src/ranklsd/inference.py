"""Decode model outputs into ranked, de-duplicated line segments."""

from __future__ import annotations

import base64
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .geometry import LineSegment, canonical_array, format_segments
from .rerank import RerankWeights, ScoredSegment, order_by_score, rerank_arrays


@dataclass(frozen=True)
class DetectionConfig:
    top_k: int = 500
    score_floor: float = 0.01
    nms_threshold: float = 2.0  # pixels at the finest map resolution
    use_nms: bool = True

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.score_floor < 0 or self.nms_threshold < 0:
            raise ValueError("thresholds must be >= 0")


def decode_arrays(out, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-major cells with ``c >= floor``: canonical clamped segments and confidences."""
    G = out.grid
    conf = np.asarray(out.score_map.data, dtype=np.float64).reshape(G * G)
    segs = np.clip(np.asarray(out.loc_map.data, dtype=np.float64).reshape(G * G, 4), 0.0, 1.0)
    keep = conf >= floor
    return canonical_array(segs[keep]), conf[keep]


def decode(out, floor: float = 0.01) -> list[ScoredSegment]:
    segs, conf = decode_arrays(out, floor)
    return [ScoredSegment(LineSegment.from_array(s), float(c)) for s, c in zip(segs, conf)]


def nms_arrays(segs: np.ndarray, threshold: float, resolution: int) -> np.ndarray:
    """Kept indices of already-ranked segments (normalized), threshold in pixels."""
    if len(segs) == 0:
        return np.zeros(0, dtype=np.int64)
    px = np.ascontiguousarray(np.asarray(segs, dtype=np.float64).reshape(-1, 4) * resolution)
    return np.asarray(kernels.nms_greedy(px, float(threshold)), dtype=np.int64)


def nms(cands: list[ScoredSegment], threshold: float = 2.0, resolution: int = 64) -> list[ScoredSegment]:
    """Greedy suppression by descending score (canonical order breaks ties)."""
    if not cands:
        return []
    segs = np.asarray([list(c.seg) for c in cands], dtype=np.float64)
    scores = np.asarray([c.score for c in cands], dtype=np.float64)
    order = order_by_score(scores, segs)
    kept = nms_arrays(segs[order], threshold, resolution)
    return [cands[order[k]] for k in kept]


@dataclass
class Detections:
    segs: np.ndarray  # [K, 4] normalized, sorted by descending score
    scores: np.ndarray  # fused s
    conf: np.ndarray
    s_e: np.ndarray
    s_d: np.ndarray
    s_l: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)

    def to_scored(self) -> list[ScoredSegment]:
        return [
            ScoredSegment(LineSegment.from_array(self.segs[k]), float(self.conf[k]), float(self.s_e[k]),
                          float(self.s_d[k]), float(self.s_l[k]), float(self.scores[k]))
            for k in range(len(self))
        ]


def postprocess(out, cfg: DetectionConfig = DetectionConfig(), w: RerankWeights = RerankWeights()) -> Detections:
    """decode, re-rank with the output's own finest maps, NMS, top-k."""
    segs, conf = decode_arrays(out, cfg.score_floor)
    M_e, M_d = out.junction_maps[0].data, out.edge_maps[0].data
    if len(segs):
        fused, se, sd, sl = rerank_arrays(segs, conf, M_e, M_d, w)
    else:
        fused = se = sd = sl = np.zeros(0)
    order = order_by_score(fused, segs) if len(segs) else np.zeros(0, dtype=np.int64)
    if cfg.use_nms:
        order = order[nms_arrays(segs[order], cfg.nms_threshold, M_d.shape[-1])]
    order = order[: cfg.top_k]
    return Detections(segs[order], fused[order], conf[order], se[order], sd[order], sl[order])


def detect(image, model, cfg: DetectionConfig = DetectionConfig(), w: RerankWeights = RerankWeights(),
           predict_level: int | None = None) -> Detections:
    with T.no_grad(), T.new_tape():
        out = model(image, predict_level)
    return postprocess(out, cfg, w)


def segments_text(det: Detections, header: str | None = None) -> str:
    return format_segments([LineSegment.from_array(s) for s in det.segs], list(det.scores), header)


def _png_gray(img: np.ndarray) -> bytes:
    """8-bit grayscale PNG bytes for a 2-D array in [0, 1]."""
    a = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = a.shape
    raw = b"".join(b"\x00" + a[i].tobytes() for i in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def svg_overlay(image: np.ndarray, det_segs, gts, scores=None, size: int = 512, comment: str | None = None) -> str:
    """Detections in red, gts in green, over the input image; opacity follows score."""
    img = np.asarray(image, dtype=np.float64)
    img = img.reshape(img.shape[-2], img.shape[-1])
    det_segs = np.asarray([list(d) for d in det_segs], dtype=np.float64).reshape(-1, 4)
    gts = np.asarray([list(g) for g in gts], dtype=np.float64).reshape(-1, 4)
    if scores is None or len(scores) == 0:
        alpha = np.ones(len(det_segs))
    else:
        s = np.asarray(scores, dtype=np.float64)
        span = s.max() - s.min()
        alpha = 0.25 + 0.75 * ((s - s.min()) / span if span > 0 else np.ones_like(s))
    href = "data:image/png;base64," + base64.b64encode(_png_gray(img)).decode("ascii")
    lines = ['<?xml version="1.0" encoding="UTF-8"?>']
    if comment:
        lines.append(f"<!-- {comment} -->")
    lines.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 1 1">')
    lines.append(f'<image href="{href}" x="0" y="0" width="1" height="1" preserveAspectRatio="none" '
                 'style="image-rendering:pixelated"/>')
    sw = 2.0 / size
    for g in gts:
        lines.append(f'<line x1="{g[0]:.5f}" y1="{g[1]:.5f}" x2="{g[2]:.5f}" y2="{g[3]:.5f}" '
                     f'stroke="#00c000" stroke-width="{2 * sw:.5f}" stroke-opacity="0.8"/>')
    for d, a in zip(det_segs, alpha):
        lines.append(f'<line x1="{d[0]:.5f}" y1="{d[1]:.5f}" x2="{d[2]:.5f}" y2="{d[3]:.5f}" '
                     f'stroke="#ff0000" stroke-width="{sw:.5f}" stroke-opacity="{a:.3f}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
