"""Centroid-cell target assignment (matched predicting) and negative sampling.

Each ground-truth segment is owned by the grid cell containing its centroid;
no bipartite matching is involved. Cells are ``(i, j) = (column, row)``
indices with ``i = floor(cx * G)``, matching a feature point at cell center
``((i + 0.5) / G, (j + 0.5) / G)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import LineSegment, centroid


class StaleAssignmentError(ValueError):
    pass


Cell = tuple[int, int]


@dataclass(frozen=True)
class GridAssignment:
    grid_size: int
    cell_to_gt: dict[Cell, int]
    positives: frozenset[Cell]
    selected_negatives: frozenset[Cell] = frozenset()
    collisions: int = 0
    n_gts: int = 0
    fingerprint: tuple = field(default=(), repr=False)

    @property
    def n_pos(self) -> int:
        return len(self.positives)

    @property
    def n_total(self) -> int:
        return len(self.positives) + len(self.selected_negatives)


def _fingerprint(gts) -> tuple:
    return tuple(tuple(round(v, 12) for v in g) for g in gts)


def cell_of(seg: LineSegment, G: int) -> Cell:
    c = centroid(seg)
    i = min(max(int(math.floor(c.x * G)), 0), G - 1)
    j = min(max(int(math.floor(c.y * G)), 0), G - 1)
    return (i, j)


def assign_targets(gts, G: int) -> GridAssignment:
    """Map every gt to its centroid cell; on a conflict the longer segment wins."""
    if G < 1:
        raise ValueError("grid size must be >= 1")
    gts = [g if isinstance(g, LineSegment) else LineSegment.from_array(g) for g in gts]
    owner: dict[Cell, int] = {}
    collisions = 0
    for k, g in enumerate(gts):
        cell = cell_of(g, G)
        cur = owner.get(cell)
        if cur is None:
            owner[cell] = k
            continue
        collisions += 1
        other = gts[cur]
        # longer wins; equal lengths fall back to canonical order
        if (g.length(), _neg_key(g)) > (other.length(), _neg_key(other)):
            owner[cell] = k
    return GridAssignment(G, owner, frozenset(owner), frozenset(), collisions, len(gts), _fingerprint(gts))


def _neg_key(g: LineSegment):
    return tuple(-v for v in g.sort_key())


def sample_negatives(a: GridAssignment, ratio: float, seed) -> GridAssignment:
    """Draw ``min(round(ratio * N+), available)`` non-positive cells uniformly (at least one)."""
    if ratio < 0:
        raise ValueError("ratio must be non-negative")
    G = a.grid_size
    pos_flat = np.array(sorted(j * G + i for i, j in a.positives), dtype=np.int64)
    avail = np.setdiff1d(np.arange(G * G, dtype=np.int64), pos_flat, assume_unique=True)
    want = int(round(ratio * a.n_pos))
    if a.n_pos > 0 and avail.size > 0:
        want = max(want, 1)
    want = min(want, avail.size)
    rng = np.random.default_rng(seed)
    picked = rng.choice(avail, size=want, replace=False) if want else np.empty(0, dtype=np.int64)
    negs = frozenset((int(f % G), int(f // G)) for f in picked)
    return GridAssignment(G, a.cell_to_gt, a.positives, negs, a.collisions, a.n_gts, a.fingerprint)


def gather_targets(a: GridAssignment, gts):
    """Cells in row-major order with their target segments (``None`` for negatives) and labels."""
    gts = [g if isinstance(g, LineSegment) else LineSegment.from_array(g) for g in gts]
    if len(gts) != a.n_gts or _fingerprint(gts) != a.fingerprint:
        raise StaleAssignmentError("assignment was built from a different gt list")
    cells = sorted(a.positives | a.selected_negatives, key=lambda c: (c[1], c[0]))
    targets = [gts[a.cell_to_gt[c]] if c in a.positives else None for c in cells]
    labels = [1 if c in a.positives else 0 for c in cells]
    return cells, targets, labels


def flat_index(cells, G: int) -> np.ndarray:
    """Row-major flat indices ``j * G + i`` of ``(i, j)`` cells."""
    return np.asarray([j * G + i for i, j in cells], dtype=np.int64)
