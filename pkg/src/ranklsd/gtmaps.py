"""Ground-truth edge and endpoint map rasterization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import LineSegment, canonical_array, segments_to_array
from .tensor import Tensor

DEFAULT_SIGMA_128 = 1.5


def _as_pixels(gts, H: int) -> np.ndarray:
    # canonical endpoint order keeps the maps bit-identical under endpoint swaps
    return canonical_array(segments_to_array(gts)) * float(H)


def rasterize_edge_array(gts, H: int) -> np.ndarray:
    if H < 2:
        raise ValueError("resolution must be at least 2")
    segs = _as_pixels(gts, H)
    if segs.shape[0] == 0:
        return np.zeros((H, H))
    return np.clip(kernels.raster_edges(np.ascontiguousarray(segs), H, H), 0.0, 1.0)


def rasterize_edge_map(gts, H: int) -> Tensor:
    """Anti-aliased edge map: each pixel holds the max bilinear splat weight of any segment."""
    return Tensor(rasterize_edge_array(gts, H))


def rasterize_endpoint_array(gts, H: int, sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    segs = _as_pixels(gts, H)
    out = np.zeros((H, H))
    if segs.shape[0] == 0:
        return out
    pts = np.concatenate([segs[:, :2], segs[:, 2:]], axis=0)
    pts = np.unique(pts, axis=0)
    ys, xs = np.mgrid[0:H, 0:H].astype(np.float64)
    reach = 4.0 * sigma
    for px, py in pts:
        j0, j1 = max(int(np.floor(px - reach)), 0), min(int(np.ceil(px + reach)), H - 1)
        i0, i1 = max(int(np.floor(py - reach)), 0), min(int(np.ceil(py + reach)), H - 1)
        if j0 > j1 or i0 > i1:
            continue
        d2 = (xs[i0 : i1 + 1, j0 : j1 + 1] - px) ** 2 + (ys[i0 : i1 + 1, j0 : j1 + 1] - py) ** 2
        np.maximum(out[i0 : i1 + 1, j0 : j1 + 1], np.exp(-d2 / (2.0 * sigma * sigma)),
                   out=out[i0 : i1 + 1, j0 : j1 + 1])
    return np.clip(out, 0.0, 1.0)


def rasterize_endpoint_map(gts, H: int, sigma: float) -> Tensor:
    """Max of unnormalized Gaussian bumps ``exp(-d^2 / 2 sigma^2)`` at every endpoint."""
    return Tensor(rasterize_endpoint_array(gts, H, sigma))


def sigma_for(H: int, sigma_at_128: float = DEFAULT_SIGMA_128) -> float:
    """Endpoint kernel width scaled from its value at resolution 128."""
    return sigma_at_128 * H / 128.0


@dataclass
class GeoLevel:
    edge: np.ndarray
    endpoint: np.ndarray

    @property
    def resolution(self) -> int:
        return self.edge.shape[0]


@dataclass
class GeoMaps:
    """Edge/endpoint maps per pyramid level, finest first."""

    levels: list[GeoLevel] = field(default_factory=list)

    def __post_init__(self) -> None:
        res = [lv.resolution for lv in self.levels]
        if any(b >= a for a, b in zip(res, res[1:])):
            raise ValueError(f"resolutions must be strictly decreasing, got {res}")
        for lv in self.levels:
            if lv.edge.shape != lv.endpoint.shape:
                raise ValueError("edge and endpoint maps differ in shape")

    @property
    def finest(self) -> GeoLevel:
        if not self.levels:
            raise ValueError("GeoMaps has no levels")
        return self.levels[0]


def build_geomaps(gts, resolutions, sigma_at_128: float = DEFAULT_SIGMA_128) -> GeoMaps:
    gts = [g if isinstance(g, LineSegment) else LineSegment.from_array(g) for g in gts]
    levels = [
        GeoLevel(rasterize_edge_array(gts, r), rasterize_endpoint_array(gts, r, sigma_for(r, sigma_at_128)))
        for r in sorted(resolutions, reverse=True)
    ]
    return GeoMaps(levels)


def to_pgm(m: np.ndarray, comment: str | None = None) -> bytes:
    """Binary PGM (P5, maxval 255) of a map in ``[0, 1]``."""
    m = np.asarray(m.data if isinstance(m, Tensor) else m, dtype=np.float64)
    h, w = m.shape
    px = np.round(np.clip(m, 0.0, 1.0) * 255.0).astype(np.uint8)
    head = "P5\n"
    if comment:
        head += "".join(f"# {c}\n" for c in comment.splitlines())
    head += f"{w} {h}\n255\n"
    return head.encode("ascii") + px.tobytes()


def read_pgm(buf: bytes) -> np.ndarray:
    """Inverse of :func:`to_pgm` (values rescaled to ``[0, 1]``)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end : end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only binary PGM with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf[pos + 1 : pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w).astype(np.float64) / 255.0
