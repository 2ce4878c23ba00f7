"""Deterministic synthetic wireframe scenes with exact segment annotations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import ndimage

from .geometry import LineSegment, canonical_array, pairwise_sq_distance
from .gtmaps import rasterize_edge_array
from .tensor import Tensor


@dataclass
class SceneSpec:
    seed: int = 0
    image_size: int = 64
    min_segments: int = 1
    max_segments: int = 6
    min_length: float = 6.0  # pixels
    max_length: float = 40.0
    margin: float = 3.0
    # grammar weights: axis-aligned rooms, convex polygons, free segments
    w_room: float = 1.0
    w_polygon: float = 1.0
    w_free: float = 2.0
    contrast_min: float = 0.5
    contrast_max: float = 0.8
    background: float = 0.9
    noise_sigma: float = 0.02
    blur_radius: float = 0.5
    background_gradient: float = 0.1
    collision_grid: int = 64

    def __post_init__(self) -> None:
        if self.min_segments < 1 or self.max_segments < self.min_segments:
            raise ValueError("segment count range must satisfy 1 <= min <= max")
        if self.image_size < 8:
            raise ValueError("image_size too small")
        if self.min_length < 4.0:
            raise ValueError("min_length must be at least 4 px")

    def clean(self) -> "SceneSpec":
        """Copy with every degradation disabled."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(noise_sigma=0.0, blur_radius=0.0, background_gradient=0.0)
        return SceneSpec(**d)


@dataclass
class Sample:
    image: Tensor  # [1, H, W] in [0, 1]
    gts: list[LineSegment] = field(default_factory=list)
    contrast: float = 0.0
    distinct_ratio: float = 1.0  # fraction of gts whose centroid cell is unique

    @property
    def gt_array(self) -> np.ndarray:
        return np.asarray([list(g) for g in self.gts], dtype=np.float64).reshape(-1, 4)


def _angle(rng) -> float:
    # man-made bias: mostly axis-aligned or diagonal directions
    r = rng.random()
    if r < 0.35:
        base = 0.0
    elif r < 0.7:
        base = math.pi / 2
    elif r < 0.85:
        base = math.pi / 4 * rng.choice([1, 3])
    else:
        return rng.uniform(0, math.pi)
    return base + rng.normal(0.0, 0.03)


def _free(rng, spec: SceneSpec) -> list[np.ndarray]:
    S = spec.image_size
    lo, hi = spec.margin, S - 1 - spec.margin
    L = rng.uniform(spec.min_length, spec.max_length)
    th = _angle(rng)
    cx, cy = rng.uniform(lo, hi, size=2)
    dx, dy = 0.5 * L * math.cos(th), 0.5 * L * math.sin(th)
    return [np.array([cx - dx, cy - dy, cx + dx, cy + dy])]


def _room(rng, spec: SceneSpec) -> list[np.ndarray]:
    S = spec.image_size
    lo, hi = spec.margin, S - 1 - spec.margin
    w = rng.uniform(spec.min_length, spec.max_length)
    h = rng.uniform(spec.min_length, spec.max_length)
    x0 = rng.uniform(lo, max(lo, hi - w))
    y0 = rng.uniform(lo, max(lo, hi - h))
    x1, y1 = x0 + w, y0 + h
    sides = [
        np.array([x0, y0, x1, y0]),
        np.array([x1, y0, x1, y1]),
        np.array([x1, y1, x0, y1]),
        np.array([x0, y1, x0, y0]),
    ]
    p = rng.permutation(4)
    return [sides[k] for k in p[: rng.integers(2, 5)]]


def _polygon(rng, spec: SceneSpec) -> list[np.ndarray]:
    S = spec.image_size
    n = int(rng.integers(3, 6))
    r = rng.uniform(spec.min_length, spec.max_length) / (2 * math.sin(math.pi / n))
    r = min(r, 0.5 * (S - 1) - spec.margin)
    cx, cy = rng.uniform(spec.margin + r, S - 1 - spec.margin - r, size=2)
    a = np.sort(rng.uniform(0, 2 * math.pi, size=n))
    pts = np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], axis=1)
    return [np.concatenate([pts[k], pts[(k + 1) % n]]) for k in range(n)]


_GRAMMAR = (_room, _polygon, _free)


def _acceptable(cand: np.ndarray, chosen: list[np.ndarray], spec: SceneSpec) -> bool:
    S = spec.image_size
    if np.any(cand < 0) or np.any(cand > S - 1):
        return False
    L = math.hypot(cand[2] - cand[0], cand[3] - cand[1])
    if L < spec.min_length:
        return False
    if not chosen:
        return True
    G = spec.collision_grid
    cell = np.floor(0.5 * (cand[:2] + cand[2:]) / S * G)
    prev = np.asarray(chosen)
    prev_cells = np.floor(0.5 * (prev[:, :2] + prev[:, 2:]) / S * G)
    # both centroid cells and their 8-neighbourhoods are kept distinct
    if np.any(np.all(np.abs(prev_cells - cell) <= 1, axis=1)):
        return False
    # reject near-duplicates and heavy collinear overlaps
    if np.min(pairwise_sq_distance(cand[None], prev)) < 16.0:
        return False
    return True


def generate(spec: SceneSpec, index: int) -> Sample:
    """Scene ``index`` of the dataset described by ``spec``; pure in (seed, index)."""
    rng = np.random.default_rng([spec.seed, index])
    S = spec.image_size
    target = int(rng.integers(spec.min_segments, spec.max_segments + 1))
    weights = np.array([spec.w_room, spec.w_polygon, spec.w_free], dtype=np.float64)
    weights = weights / weights.sum()
    chosen: list[np.ndarray] = []
    attempts = 0
    while len(chosen) < target and attempts < 200:
        attempts += 1
        comp = _GRAMMAR[rng.choice(3, p=weights)]
        for cand in comp(rng, spec):
            if len(chosen) >= target:
                break
            if _acceptable(cand, chosen, spec):
                chosen.append(cand)
    segs_px = canonical_array(np.asarray(chosen).reshape(-1, 4))
    gts = [LineSegment.from_array(s / S) for s in segs_px]

    contrast = float(rng.uniform(spec.contrast_min, spec.contrast_max))
    edge = rasterize_edge_array(gts, S)
    img = np.full((S, S), spec.background)
    if spec.background_gradient > 0:
        th = rng.uniform(0, 2 * math.pi)
        ys, xs = np.mgrid[0:S, 0:S] / (S - 1) - 0.5
        img = img + spec.background_gradient * (math.cos(th) * xs + math.sin(th) * ys)
    img = img * (1.0 - contrast * edge)
    if spec.blur_radius > 0:
        img = ndimage.gaussian_filter(img, sigma=spec.blur_radius, mode="nearest")
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)

    G = spec.collision_grid
    cells = {(min(int(g.e1[0] * 0.5 * G + g.e2[0] * 0.5 * G), G - 1),
              min(int(g.e1[1] * 0.5 * G + g.e2[1] * 0.5 * G), G - 1)) for g in gts}
    ratio = len(cells) / len(gts) if gts else 1.0
    return Sample(Tensor(img[None]), gts, contrast, ratio)


def dataset(spec: SceneSpec, count: int, start: int = 0):
    for i in range(start, start + count):
        yield generate(spec, i)


def perturb_candidates(gts, seed: int, dup_factor: int = 4, noise_px: float = 6.0, scale: float = 128.0):
    """Candidate pool per gt: one near copy (<= 1 px per endpoint) plus decoys.

    Decoy endpoints move by a random vector whose length is uniform in
    ``[1, noise_px]`` pixels at ``scale``. Confidences are uniform random.
    Returns a list of :class:`ranklsd.rerank.ScoredSegment`.
    """
    from .rerank import ScoredSegment

    if dup_factor < 1:
        raise ValueError("dup_factor must be >= 1")
    rng = np.random.default_rng(seed)
    pool = []
    for g in gts:
        base = np.asarray(list(g), dtype=np.float64) * scale
        for k in range(dup_factor):
            hi = min(1.0, noise_px) if k == 0 else noise_px
            lo = 0.0 if k == 0 else min(1.0, noise_px)
            mag = rng.uniform(lo, hi, size=2)
            th = rng.uniform(0, 2 * math.pi, size=2)
            off = np.stack([mag * np.cos(th), mag * np.sin(th)], axis=1).ravel()
            seg = LineSegment.from_array((base + off) / scale).canonicalize()
            pool.append(ScoredSegment(seg, float(rng.uniform(0.0, 1.0))))
    return pool
