# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and semantics as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt, fabs, INFINITY

cnp.import_array()


cdef inline void _corner(double p, Py_ssize_t n, Py_ssize_t* i0, Py_ssize_t* i1,
                         double* f, bint* inside) noexcept nogil:
    cdef double c = p
    cdef Py_ssize_t k
    inside[0] = (p >= 0.0) and (p <= n - 1.0)
    if c < 0.0:
        c = 0.0
    elif c > n - 1.0:
        c = n - 1.0
    k = <Py_ssize_t>floor(c)
    if n >= 2 and k > n - 2:
        k = n - 2
    if n < 2:
        k = 0
    i0[0] = k
    i1[0] = k + 1 if k + 1 < n else n - 1
    f[0] = c - k


def bilinear_forward(m, px, py):
    """Sample ``m[C, H, W]`` at pixel coordinates; returns ``[N, C]``."""
    # channel-last copy so the inner loop reads contiguous memory
    cdef const double[:, :, :] mv = np.ascontiguousarray(np.moveaxis(np.asarray(m, dtype=np.float64), 0, -1))
    cdef const double[:] xv = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(py, dtype=np.float64)
    cdef Py_ssize_t H = mv.shape[0], W = mv.shape[1], C = mv.shape[2]
    cdef Py_ssize_t N = xv.shape[0], n, c, x0, x1, y0, y1
    cdef double fx, fy, w00, w01, w10, w11
    cdef bint ix, iy
    out = np.empty((N, C), dtype=np.float64)
    cdef double[:, :] ov = out
    with nogil:
        for n in range(N):
            _corner(xv[n], W, &x0, &x1, &fx, &ix)
            _corner(yv[n], H, &y0, &y1, &fy, &iy)
            w00 = (1 - fx) * (1 - fy)
            w01 = fx * (1 - fy)
            w10 = (1 - fx) * fy
            w11 = fx * fy
            for c in range(C):
                ov[n, c] = (mv[y0, x0, c] * w00 + mv[y0, x1, c] * w01
                            + mv[y1, x0, c] * w10 + mv[y1, x1, c] * w11)
    return out


def bilinear_backward(m, px, py, g, need_map=True, need_points=True):
    """Gradients of :func:`bilinear_forward` given upstream ``g[N, C]``."""
    cdef const double[:, :, :] mv = np.ascontiguousarray(np.moveaxis(np.asarray(m, dtype=np.float64), 0, -1))
    cdef const double[:] xv = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[:] yv = np.ascontiguousarray(py, dtype=np.float64)
    cdef const double[:, :] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t H = mv.shape[0], W = mv.shape[1], C = mv.shape[2]
    cdef Py_ssize_t N = xv.shape[0], n, c, x0, x1, y0, y1
    cdef double fx, fy, gc, ax, ay, v00, v01, v10, v11, w00, w01, w10, w11
    cdef bint ix, iy
    cdef bint do_map = bool(need_map), do_pts = bool(need_points)
    gmap = np.zeros((H, W, C), dtype=np.float64) if do_map else None
    gpx = np.zeros(N, dtype=np.float64) if do_pts else None
    gpy = np.zeros(N, dtype=np.float64) if do_pts else None
    cdef double[:, :, :] gm
    cdef double[:] gx, gy
    if do_map:
        gm = gmap
    if do_pts:
        gx = gpx
        gy = gpy
    with nogil:
        for n in range(N):
            _corner(xv[n], W, &x0, &x1, &fx, &ix)
            _corner(yv[n], H, &y0, &y1, &fy, &iy)
            w00 = (1 - fx) * (1 - fy)
            w01 = fx * (1 - fy)
            w10 = (1 - fx) * fy
            w11 = fx * fy
            ax = 0.0
            ay = 0.0
            for c in range(C):
                gc = gv[n, c]
                if do_map:
                    gm[y0, x0, c] += gc * w00
                    gm[y0, x1, c] += gc * w01
                    gm[y1, x0, c] += gc * w10
                    gm[y1, x1, c] += gc * w11
                if do_pts:
                    v00 = mv[y0, x0, c]
                    v01 = mv[y0, x1, c]
                    v10 = mv[y1, x0, c]
                    v11 = mv[y1, x1, c]
                    ax += gc * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy)
                    ay += gc * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx)
            if do_pts:
                gx[n] = ax if (ix and W > 1) else 0.0
                gy[n] = ay if (iy and H > 1) else 0.0
    if do_map:
        gmap = np.ascontiguousarray(np.moveaxis(gmap, -1, 0))
    return gmap, gpx, gpy


def bilinear_heads_forward(m, px, py):
    """Sample channel-last ``m[H, W, G, C]`` per group at ``px, py[G, P]``; returns ``[G, P, C]``."""
    cdef const double[:, :, :, :] mv = np.ascontiguousarray(m, dtype=np.float64)
    cdef const double[:, :] xv = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[:, :] yv = np.ascontiguousarray(py, dtype=np.float64)
    cdef Py_ssize_t H = mv.shape[0], W = mv.shape[1], G = mv.shape[2], C = mv.shape[3]
    cdef Py_ssize_t P = xv.shape[1], n, c, h, x0, x1, y0, y1
    cdef double fx, fy, w00, w01, w10, w11
    cdef bint ix, iy
    out = np.empty((G, P, C), dtype=np.float64)
    cdef double[:, :, :] ov = out
    with nogil:
        for h in range(G):
            for n in range(P):
                _corner(xv[h, n], W, &x0, &x1, &fx, &ix)
                _corner(yv[h, n], H, &y0, &y1, &fy, &iy)
                w00 = (1 - fx) * (1 - fy)
                w01 = fx * (1 - fy)
                w10 = (1 - fx) * fy
                w11 = fx * fy
                for c in range(C):
                    ov[h, n, c] = (mv[y0, x0, h, c] * w00 + mv[y0, x1, h, c] * w01
                                   + mv[y1, x0, h, c] * w10 + mv[y1, x1, h, c] * w11)
    return out


def bilinear_heads_backward(m, px, py, g, need_map=True, need_points=True):
    """Gradients of :func:`bilinear_heads_forward` given upstream ``g[G, P, C]``."""
    cdef const double[:, :, :, :] mv = np.ascontiguousarray(m, dtype=np.float64)
    cdef const double[:, :] xv = np.ascontiguousarray(px, dtype=np.float64)
    cdef const double[:, :] yv = np.ascontiguousarray(py, dtype=np.float64)
    cdef const double[:, :, :] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t H = mv.shape[0], W = mv.shape[1], G = mv.shape[2], C = mv.shape[3]
    cdef Py_ssize_t P = xv.shape[1], n, c, h, x0, x1, y0, y1
    cdef double fx, fy, gc, ax, ay, v00, v01, v10, v11, w00, w01, w10, w11
    cdef bint ix, iy
    cdef bint do_map = bool(need_map), do_pts = bool(need_points)
    gmap = np.zeros((H, W, G, C), dtype=np.float64) if do_map else None
    gpx = np.zeros((G, P), dtype=np.float64) if do_pts else None
    gpy = np.zeros((G, P), dtype=np.float64) if do_pts else None
    cdef double[:, :, :, :] gm
    cdef double[:, :] gx, gy
    if do_map:
        gm = gmap
    if do_pts:
        gx = gpx
        gy = gpy
    with nogil:
        for h in range(G):
            for n in range(P):
                _corner(xv[h, n], W, &x0, &x1, &fx, &ix)
                _corner(yv[h, n], H, &y0, &y1, &fy, &iy)
                w00 = (1 - fx) * (1 - fy)
                w01 = fx * (1 - fy)
                w10 = (1 - fx) * fy
                w11 = fx * fy
                ax = 0.0
                ay = 0.0
                for c in range(C):
                    gc = gv[h, n, c]
                    if do_map:
                        gm[y0, x0, h, c] += gc * w00
                        gm[y0, x1, h, c] += gc * w01
                        gm[y1, x0, h, c] += gc * w10
                        gm[y1, x1, h, c] += gc * w11
                    if do_pts:
                        v00 = mv[y0, x0, h, c]
                        v01 = mv[y0, x1, h, c]
                        v10 = mv[y1, x0, h, c]
                        v11 = mv[y1, x1, h, c]
                        ax += gc * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy)
                        ay += gc * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx)
                if do_pts:
                    gx[h, n] = ax if (ix and W > 1) else 0.0
                    gy[h, n] = ay if (iy and H > 1) else 0.0
    return gmap, gpx, gpy


cdef inline double _tent2(double a0, double a1, double b0, double b1, double t) noexcept nogil:
    cdef double u = a0 + a1 * t, v = b0 + b1 * t
    if u <= 0.0 or v <= 0.0:
        return 0.0
    return u * v


cdef double _pixel_max(double x0, double y0, double dx, double dy,
                       double jj, double ii) noexcept nogil:
    cdef double cand[8]
    cdef int nc = 2, a, b
    cdef double t, tmp, ta, tb, tm, rx, ry, sx, sy, a0, a1, b0, b1, best, val, denom, tv
    cdef double off
    cand[0] = 0.0
    cand[1] = 1.0
    for a in range(3):
        off = a - 1.0
        if dx != 0.0:
            cand[nc] = (jj + off - x0) / dx
            nc += 1
        if dy != 0.0:
            cand[nc] = (ii + off - y0) / dy
            nc += 1
    for a in range(nc):
        t = cand[a]
        cand[a] = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    # insertion sort, at most 8 entries
    for a in range(1, nc):
        tmp = cand[a]
        b = a - 1
        while b >= 0 and cand[b] > tmp:
            cand[b + 1] = cand[b]
            b -= 1
        cand[b + 1] = tmp
    rx = x0 - jj
    ry = y0 - ii
    best = 0.0
    for a in range(nc - 1):
        ta = cand[a]
        tb = cand[a + 1]
        tm = 0.5 * (ta + tb)
        sx = 1.0 if rx + dx * tm >= 0 else -1.0
        sy = 1.0 if ry + dy * tm >= 0 else -1.0
        a0 = 1.0 - sx * rx
        a1 = -sx * dx
        b0 = 1.0 - sy * ry
        b1 = -sy * dy
        val = _tent2(a0, a1, b0, b1, ta)
        if val > best:
            best = val
        val = _tent2(a0, a1, b0, b1, tb)
        if val > best:
            best = val
        denom = 2.0 * a1 * b1
        if denom < 0:
            tv = -(a1 * b0 + a0 * b1) / denom
            if tv < ta:
                tv = ta
            elif tv > tb:
                tv = tb
            val = _tent2(a0, a1, b0, b1, tv)
            if val > best:
                best = val
    return best


def raster_edges(segs, Py_ssize_t H, Py_ssize_t W):
    """Anti-aliased max-coverage rasterization of pixel-coordinate segments."""
    cdef const double[:, :] sv = np.ascontiguousarray(np.asarray(segs, dtype=np.float64).reshape(-1, 4))
    out = np.zeros((H, W), dtype=np.float64)
    cdef double[:, :] ov = out
    cdef Py_ssize_t k, i, j, ilo, ihi, jlo, jhi
    cdef double x0, y0, x1, y1, dx, dy, L2, t, ex, ey, val
    with nogil:
        for k in range(sv.shape[0]):
            x0 = sv[k, 0]
            y0 = sv[k, 1]
            x1 = sv[k, 2]
            y1 = sv[k, 3]
            dx = x1 - x0
            dy = y1 - y0
            L2 = dx * dx + dy * dy
            jlo = <Py_ssize_t>floor(x0 if x0 < x1 else x1) - 1
            jhi = <Py_ssize_t>ceil(x1 if x0 < x1 else x0) + 1
            ilo = <Py_ssize_t>floor(y0 if y0 < y1 else y1) - 1
            ihi = <Py_ssize_t>ceil(y1 if y0 < y1 else y0) + 1
            if jlo < 0:
                jlo = 0
            if ilo < 0:
                ilo = 0
            if jhi > W - 1:
                jhi = W - 1
            if ihi > H - 1:
                ihi = H - 1
            for i in range(ilo, ihi + 1):
                for j in range(jlo, jhi + 1):
                    if L2 > 0:
                        t = ((j - x0) * dx + (i - y0) * dy) / L2
                        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
                    else:
                        t = 0.0
                    ex = x0 + t * dx - j
                    ey = y0 + t * dy - i
                    if ex * ex + ey * ey >= 2.25:
                        continue
                    val = _pixel_max(x0, y0, dx, dy, <double>j, <double>i)
                    if val > ov[i, j]:
                        ov[i, j] = val
    return out


def nms_greedy(segs, double threshold):
    """Indices kept by greedy endpoint-distance suppression; input already ranked."""
    cdef const double[:, :] sv = np.ascontiguousarray(np.asarray(segs, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t N = sv.shape[0], k, q, nk = 0
    kept = np.empty(N, dtype=np.int64)
    cdef cnp.int64_t[:] kv = kept
    cdef double thr2 = threshold * threshold, a, b, d
    cdef bint drop
    with nogil:
        for k in range(N):
            drop = False
            for q in range(nk):
                a = ((sv[kv[q], 0] - sv[k, 0]) ** 2 + (sv[kv[q], 1] - sv[k, 1]) ** 2
                     + (sv[kv[q], 2] - sv[k, 2]) ** 2 + (sv[kv[q], 3] - sv[k, 3]) ** 2)
                b = ((sv[kv[q], 0] - sv[k, 2]) ** 2 + (sv[kv[q], 1] - sv[k, 3]) ** 2
                     + (sv[kv[q], 2] - sv[k, 0]) ** 2 + (sv[kv[q], 3] - sv[k, 1]) ** 2)
                d = a if a < b else b
                if d <= thr2:
                    drop = True
                    break
            if not drop:
                kv[nk] = k
                nk += 1
    return kept[:nk].copy()


def match_greedy(d2, double threshold):
    """Greedy one-to-one matching in row (rank) order; returns TP flags."""
    cdef const double[:, :] dv = np.ascontiguousarray(d2, dtype=np.float64)
    cdef Py_ssize_t P = dv.shape[0], G = dv.shape[1], k, j, best_j, left = G
    tp = np.zeros(P, dtype=np.bool_)
    free = np.ones(G, dtype=np.uint8)
    cdef cnp.uint8_t[:] tv = tp.view(np.uint8)
    cdef cnp.uint8_t[:] fv = free
    cdef double best
    with nogil:
        for k in range(P):
            if left == 0:
                break
            best = INFINITY
            best_j = -1
            for j in range(G):
                if fv[j] and dv[k, j] < best:
                    best = dv[k, j]
                    best_j = j
            if best_j >= 0 and best <= threshold:
                tv[k] = 1
                fv[best_j] = 0
                left -= 1
    return tp
