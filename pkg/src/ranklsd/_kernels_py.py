"""Pure numpy implementations of the hot kernels.

These are the reference fallback for :mod:`ranklsd._kernels` (Cython). Both
modules expose the same functions with the same argument conventions; see
:mod:`ranklsd.kernels` for the selection logic.
"""

import numpy as np
from scipy import sparse


def _corners(px, py, H, W):
    x = np.clip(px, 0.0, W - 1.0)
    y = np.clip(py, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(y), max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = x - x0
    fy = y - y0
    inx = (px >= 0.0) & (px <= W - 1.0)
    iny = (py >= 0.0) & (py <= H - 1.0)
    return x0, x1, y0, y1, fx, fy, inx, iny


def _weights(H, W, x0, x1, y0, y1, fx, fy):
    n = x0.shape[0]
    rows = np.repeat(np.arange(n), 4)
    cols = np.stack([y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1], axis=1).ravel()
    vals = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    ).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, H * W))


def bilinear_forward(m, px, py):
    """Sample ``m[C, H, W]`` at pixel coordinates; returns ``[N, C]``."""
    C, H, W = m.shape
    x0, x1, y0, y1, fx, fy, _, _ = _corners(px, py, H, W)
    flat = m.reshape(C, H * W)
    out = (
        flat[:, y0 * W + x0] * ((1 - fx) * (1 - fy))
        + flat[:, y0 * W + x1] * (fx * (1 - fy))
        + flat[:, y1 * W + x0] * ((1 - fx) * fy)
        + flat[:, y1 * W + x1] * (fx * fy)
    )
    return np.ascontiguousarray(out.T)


def bilinear_backward(m, px, py, g, need_map=True, need_points=True):
    """Gradients of :func:`bilinear_forward` given upstream ``g[N, C]``."""
    C, H, W = m.shape
    x0, x1, y0, y1, fx, fy, inx, iny = _corners(px, py, H, W)
    gmap = None
    gpx = gpy = None
    if need_map:
        wmat = _weights(H, W, x0, x1, y0, y1, fx, fy)
        gmap = np.asarray(wmat.T @ g).T.reshape(C, H, W)
        gmap = np.ascontiguousarray(gmap)
    if need_points:
        flat = m.reshape(C, H * W)
        v00 = flat[:, y0 * W + x0]
        v01 = flat[:, y0 * W + x1]
        v10 = flat[:, y1 * W + x0]
        v11 = flat[:, y1 * W + x1]
        dx = (v01 - v00) * (1 - fy) + (v11 - v10) * fy
        dy = (v10 - v00) * (1 - fx) + (v11 - v01) * fx
        gpx = np.einsum("cn,nc->n", dx, g) * inx
        gpy = np.einsum("cn,nc->n", dy, g) * iny
        # degenerate axes carry no positional gradient
        if W == 1:
            gpx[:] = 0.0
        if H == 1:
            gpy[:] = 0.0
    return gmap, gpx, gpy


def bilinear_heads_forward(m, px, py):
    """Sample channel-last ``m[H, W, G, C]`` per group at ``px, py[G, P]``; returns ``[G, P, C]``."""
    return np.stack([bilinear_forward(np.moveaxis(m[:, :, h], -1, 0), px[h], py[h])
                     for h in range(m.shape[2])])


def bilinear_heads_backward(m, px, py, g, need_map=True, need_points=True):
    """Gradients of :func:`bilinear_heads_forward` given upstream ``g[G, P, C]``."""
    parts = [bilinear_backward(np.moveaxis(m[:, :, h], -1, 0), px[h], py[h], g[h], need_map, need_points)
             for h in range(m.shape[2])]
    gmap = np.ascontiguousarray(np.stack([np.moveaxis(p[0], 0, -1) for p in parts], axis=2)) if need_map else None
    gpx = np.stack([p[1] for p in parts]) if need_points else None
    gpy = np.stack([p[2] for p in parts]) if need_points else None
    return gmap, gpx, gpy


def _seg_pixel_max(seg, jj, ii):
    """Max over the segment of the bilinear splat weight at pixels ``(ii, jj)``."""
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    P = jj.shape[0]
    cand = [np.zeros(P), np.ones(P)]
    for d, base, c in ((dx, x0, jj), (dy, y0, ii)):
        if d != 0.0:
            for off in (-1.0, 0.0, 1.0):
                cand.append((c + off - base) / d)
    t = np.clip(np.stack(cand, axis=1), 0.0, 1.0)
    t.sort(axis=1)
    ta, tb = t[:, :-1], t[:, 1:]
    tm = 0.5 * (ta + tb)
    # linear forms u = a0 + a1 t, v = b0 + b1 t valid on each interval
    rx = (x0 - jj)[:, None]
    ry = (y0 - ii)[:, None]
    sx = np.where(rx + dx * tm >= 0, 1.0, -1.0)
    sy = np.where(ry + dy * tm >= 0, 1.0, -1.0)
    a0, a1 = 1.0 - sx * rx, -sx * dx
    b0, b1 = 1.0 - sy * ry, -sy * dy

    def f(tt):
        return np.maximum(a0 + a1 * tt, 0.0) * np.maximum(b0 + b1 * tt, 0.0)

    best = np.maximum(f(ta), f(tb))
    denom = 2.0 * a1 * b1
    with np.errstate(divide="ignore", invalid="ignore"):
        tv = np.where(denom < 0, -(a1 * b0 + a0 * b1) / denom, ta)
    tv = np.clip(tv, ta, tb)
    best = np.maximum(best, f(tv))
    return best.max(axis=1)


def raster_edges(segs, H, W):
    """Anti-aliased max-coverage rasterization of pixel-coordinate segments."""
    out = np.zeros((H, W), dtype=np.float64)
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
    for seg in segs:
        x0, y0, x1, y1 = seg
        jlo = max(int(np.floor(min(x0, x1))) - 1, 0)
        jhi = min(int(np.ceil(max(x0, x1))) + 1, W - 1)
        ilo = max(int(np.floor(min(y0, y1))) - 1, 0)
        ihi = min(int(np.ceil(max(y0, y1))) + 1, H - 1)
        if jlo > jhi or ilo > ihi:
            continue
        ii, jj = np.mgrid[ilo : ihi + 1, jlo : jhi + 1]
        ii = ii.ravel().astype(np.float64)
        jj = jj.ravel().astype(np.float64)
        # only pixels within the tent support can receive weight
        dx, dy = x1 - x0, y1 - y0
        L2 = dx * dx + dy * dy
        if L2 > 0:
            t = np.clip(((jj - x0) * dx + (ii - y0) * dy) / L2, 0.0, 1.0)
        else:
            t = np.zeros_like(jj)
        near = np.hypot(x0 + t * dx - jj, y0 + t * dy - ii) < 1.5
        if not near.any():
            continue
        ii, jj = ii[near], jj[near]
        vals = _seg_pixel_max(seg, jj, ii)
        ii = ii.astype(np.int64)
        jj = jj.astype(np.int64)
        out[ii, jj] = np.maximum(out[ii, jj], vals)
    return out


def nms_greedy(segs, threshold):
    """Indices kept by greedy endpoint-distance suppression; input already ranked."""
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 4)
    thr2 = threshold * threshold
    kept = []
    kept_arr = np.empty((0, 4))
    for k in range(segs.shape[0]):
        s = segs[k]
        if kept:
            a = ((kept_arr[:, :2] - s[:2]) ** 2).sum(1) + ((kept_arr[:, 2:] - s[2:]) ** 2).sum(1)
            b = ((kept_arr[:, :2] - s[2:]) ** 2).sum(1) + ((kept_arr[:, 2:] - s[:2]) ** 2).sum(1)
            if np.any(np.minimum(a, b) <= thr2):
                continue
        kept.append(k)
        kept_arr = segs[kept]
    return np.asarray(kept, dtype=np.int64)


def match_greedy(d2, threshold):
    """Greedy one-to-one matching in row (rank) order; returns TP flags."""
    d2 = np.asarray(d2, dtype=np.float64)
    n_pred, n_gt = d2.shape
    tp = np.zeros(n_pred, dtype=np.bool_)
    free = np.ones(n_gt, dtype=np.bool_)
    for k in range(n_pred):
        if not free.any():
            break
        row = np.where(free, d2[k], np.inf)
        j = int(np.argmin(row))
        if row[j] <= threshold:
            tp[k] = True
            free[j] = False
    return tp
