"""Slow, loop-based reference implementations used as test oracles.

They share no code with the package on purpose.
"""

import math


def sq_dist(p, g, scale=128.0):
    p = [v * scale for v in p]
    g = [v * scale for v in g]
    straight = (p[0] - g[0]) ** 2 + (p[1] - g[1]) ** 2 + (p[2] - g[2]) ** 2 + (p[3] - g[3]) ** 2
    crossed = (p[0] - g[2]) ** 2 + (p[1] - g[3]) ** 2 + (p[2] - g[0]) ** 2 + (p[3] - g[1]) ** 2
    return min(straight, crossed)


def match(preds, gts, threshold, scale=128.0):
    """Greedy in the given order; each pred takes its nearest unmatched gt."""
    used = [False] * len(gts)
    flags = []
    for p in preds:
        best, best_d = -1, math.inf
        for k, g in enumerate(gts):
            if used[k]:
                continue
            d = sq_dist(p, g, scale)
            if d < best_d:
                best, best_d = k, d
        if best >= 0 and best_d <= threshold:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def ranked_flags(images, threshold, scale=128.0):
    """``images`` is a list of (preds, scores, gts); returns flags in global rank order."""
    rows = []
    for n, (preds, scores, gts) in enumerate(images):
        order = sorted(range(len(preds)), key=lambda k: (-scores[k], k))
        flags = match([preds[k] for k in order], gts, threshold, scale)
        for r, k in enumerate(order):
            rows.append((-scores[k], n, r, flags[r]))
    rows.sort()
    return [r[3] for r in rows]


def brute_ap(images, threshold, scale=128.0):
    n_gt = sum(len(g) for _, _, g in images)
    flags = ranked_flags(images, threshold, scale)
    prec, rec = [], []
    tp = 0
    for i, f in enumerate(flags):
        tp += f
        prec.append(tp / (i + 1))
        rec.append(tp / n_gt)
    ap = 0.0
    prev_r = 0.0
    for i in range(len(flags)):
        if rec[i] > prev_r:
            best = max(prec[i:])
            ap += (rec[i] - prev_r) * best
            prev_r = rec[i]
    return ap


def brute_f(images, threshold, scale=128.0):
    n_gt = sum(len(g) for _, _, g in images)
    flags = ranked_flags(images, threshold, scale)
    best, tp = 0.0, 0
    for i, f in enumerate(flags):
        tp += f
        p, r = tp / (i + 1), tp / n_gt
        if p + r > 0:
            best = max(best, 2 * p * r / (p + r))
    return best
