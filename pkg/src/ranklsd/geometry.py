"""Line-segment value types and coordinate helpers.

Coordinates are normalized to ``[0, 1]`` with x pointing right and y pointing
down. Pixel coordinates are obtained by multiplying by a resolution; pixel
``(row i, col j)`` has its center at pixel coordinate ``(x=j, y=i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np


def _clamp01(v: float) -> float:
    if not math.isfinite(v):
        raise ValueError(f"non-finite coordinate {v!r}")
    return min(max(float(v), 0.0), 1.0)


@dataclass(frozen=True, order=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class LineSegment:
    """Two endpoints in normalized coordinates, clamped to the unit square."""

    e1: tuple[float, float]
    e2: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "e1", (_clamp01(self.e1[0]), _clamp01(self.e1[1])))
        object.__setattr__(self, "e2", (_clamp01(self.e2[0]), _clamp01(self.e2[1])))

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "LineSegment":
        return cls((a[0], a[1]), (a[2], a[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.e1[0], self.e1[1], self.e2[0], self.e2[1]], dtype=np.float64)

    def sort_key(self) -> tuple[float, float, float, float]:
        """Key ordering endpoints by (y, x); used for canonical form and tie-breaks."""
        c = self.canonicalize()
        return (c.e1[1], c.e1[0], c.e2[1], c.e2[0])

    def canonicalize(self) -> "LineSegment":
        if (self.e1[1], self.e1[0]) <= (self.e2[1], self.e2[0]):
            return self
        return LineSegment(self.e2, self.e1)

    def length(self, scale: float = 1.0) -> float:
        return math.hypot(self.e1[0] - self.e2[0], self.e1[1] - self.e2[1]) * scale

    def __iter__(self) -> Iterator[float]:
        return iter((self.e1[0], self.e1[1], self.e2[0], self.e2[1]))


def canonicalize(seg: LineSegment) -> LineSegment:
    return seg.canonicalize()


def canonical_array(segs: np.ndarray) -> np.ndarray:
    """Vectorized canonicalization of an ``[N, 4]`` array of segments."""
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
    swap = (segs[:, 1] > segs[:, 3]) | ((segs[:, 1] == segs[:, 3]) & (segs[:, 0] > segs[:, 2]))
    out = segs.copy()
    out[swap] = segs[swap][:, [2, 3, 0, 1]]
    return out


def centroid(seg: LineSegment) -> Point:
    return Point(0.5 * (seg.e1[0] + seg.e2[0]), 0.5 * (seg.e1[1] + seg.e2[1]))


def segment_distance(a: LineSegment, b: LineSegment, scale: float = 1.0) -> float:
    """Endpoint distance in pixels, minimized over the two endpoint pairings."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    a1, a2, b1, b2 = (np.asarray(p, dtype=np.float64) * scale for p in (a.e1, a.e2, b.e1, b.e2))
    straight = np.sum((a1 - b1) ** 2) + np.sum((a2 - b2) ** 2)
    crossed = np.sum((a1 - b2) ** 2) + np.sum((a2 - b1) ** 2)
    return float(math.sqrt(min(straight, crossed)))


def pairwise_sq_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``[Na, Nb]`` matrix of summed squared endpoint distances, pairing-min."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    a1, a2 = a[:, None, :2], a[:, None, 2:]
    b1, b2 = b[None, :, :2], b[None, :, 2:]
    straight = ((a1 - b1) ** 2).sum(-1) + ((a2 - b2) ** 2).sum(-1)
    crossed = ((a1 - b2) ** 2).sum(-1) + ((a2 - b1) ** 2).sum(-1)
    return np.minimum(straight, crossed)


def _check_direction(direction: int) -> None:
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction!r}")


def rotate_point90(p: tuple[float, float], direction: int = 1) -> tuple[float, float]:
    """Rotate by 90 degrees about the image center.

    ``+1`` is counter-clockwise as displayed with y pointing down:
    ``(x, y) -> (y, 1 - x)``; ``-1`` is its inverse ``(x, y) -> (1 - y, x)``.
    """
    _check_direction(direction)
    x, y = p
    if direction == 1:
        return (y, 1.0 - x)
    return (1.0 - y, x)


def rotate90(obj, direction: int = 1):
    """Rotate a point, a segment, or an ``[..., 2]`` array of points."""
    _check_direction(direction)
    if isinstance(obj, LineSegment):
        return LineSegment(rotate_point90(obj.e1, direction), rotate_point90(obj.e2, direction))
    if isinstance(obj, Point):
        return Point(*rotate_point90((obj.x, obj.y), direction))
    if isinstance(obj, tuple) and len(obj) == 2:
        return rotate_point90(obj, direction)
    arr = np.asarray(obj, dtype=np.float64)
    out = np.empty_like(arr)
    if direction == 1:
        out[..., 0] = arr[..., 1]
        out[..., 1] = 1.0 - arr[..., 0]
    else:
        out[..., 0] = 1.0 - arr[..., 1]
        out[..., 1] = arr[..., 0]
    return out


def rotate_map90(m, direction: int = 1):
    """Rotate a ``[H, W]`` (or ``[C, H, W]``) map consistently with :func:`rotate90`.

    Accepts numpy arrays or :class:`ranklsd.tensor.Tensor`; the rotation is an
    index permutation, so a round trip is exact.
    """
    _check_direction(direction)
    from .tensor import Tensor, rot90

    if isinstance(m, Tensor):
        return rot90(m, direction)
    arr = np.asarray(m)
    return np.ascontiguousarray(np.rot90(arr, k=direction, axes=(-2, -1)))


# -- interchange text format -------------------------------------------------

def format_segments(segs: Iterable, scores: Iterable[float] | None = None, header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    scores = list(scores) if scores is not None else None
    for k, s in enumerate(segs):
        x1, y1, x2, y2 = (float(v) for v in s)
        row = f"{x1:.9g} {y1:.9g} {x2:.9g} {y2:.9g}"
        if scores is not None:
            row += f" {float(scores[k]):.9g}"
        lines.append(row)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_segments(text: str | TextIO) -> tuple[list[LineSegment], list[float] | None]:
    """Parse ``x1 y1 x2 y2 [score]`` lines; ``#`` starts a comment."""
    if not isinstance(text, str):
        text = text.read()
    segs: list[LineSegment] = []
    scores: list[float] = []
    n_scored = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise ValueError(f"line {lineno}: expected 4 or 5 fields, got {len(parts)}")
        vals = [float(p) for p in parts]
        segs.append(LineSegment.from_array(vals[:4]))
        if len(parts) == 5:
            scores.append(vals[4])
            n_scored += 1
    if n_scored and n_scored != len(segs):
        raise ValueError("either all or no segments may carry a score")
    return segs, (scores if n_scored else None)


def segments_to_array(segs: Iterable) -> np.ndarray:
    rows = [list(s) for s in segs]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)
