"""Finite-difference verification of analytic gradients.

Each case builds a scalar ``sum(f(inputs) * R)`` for a fixed random
projection ``R`` and compares tape gradients with central differences.
The error of a case is ``max |a - n| / max(|a|_inf, |n|_inf, 1e-6)`` over
every coordinate of every differentiable input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import losses as Lo
from . import tensor as T
from .tensor import Tensor

STEP = 1e-5
OP_TOL = 1e-4
E2E_TOL = 1e-3
FLOOR = 1e-6


@dataclass
class CheckResult:
    target: str
    cases: int
    worst: float
    tol: float
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.cases > 0 and self.worst <= self.tol


@dataclass
class Report:
    scope: str
    results: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.results) and all(r.ok for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            flag = "PASS" if r.ok else "FAIL"
            out.append(f"{flag} {self.scope}:{r.target} cases={r.cases} worst_rel_err={r.worst:.3e} tol={r.tol:g}")
        return out


def _project(out: Tensor, R: np.ndarray) -> Tensor:
    return T.sum_(T.mul(out, Tensor._wrap(R)))


def check_function(fn: Callable[..., Tensor], arrays: list[np.ndarray], rng, diff_mask=None,
                   step: float = STEP) -> float:
    """Worst relative error of ``fn`` at ``arrays``; ``diff_mask`` picks differentiable inputs."""
    diff_mask = diff_mask or [True] * len(arrays)
    with T.new_tape() as tape:
        ins = [Tensor(a, requires_grad=d) for a, d in zip(arrays, diff_mask)]
        out = fn(*ins)
        R = rng.normal(size=out.shape)
        loss = _project(out, R)
        tape.backward(loss)
        grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in ins]

    def value(arrs) -> float:
        with T.no_grad():
            o = fn(*[Tensor._wrap(a) for a in arrs])
        return float((o.data * R).sum())

    worst = 0.0
    for k, (a, d) in enumerate(zip(arrays, diff_mask)):
        if not d:
            continue
        num = np.zeros_like(a, dtype=np.float64)
        flat = num.reshape(-1)
        for idx in range(a.size):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k].reshape(-1)[idx] += step
            minus[k].reshape(-1)[idx] -= step
            flat[idx] = (value(plus) - value(minus)) / (2 * step)
        g = grads[k]
        denom = max(np.abs(g).max(initial=0.0), np.abs(num).max(initial=0.0), FLOOR)
        worst = max(worst, float(np.abs(g - num).max(initial=0.0)) / denom)
    return worst


# ---------------------------------------------------------------------------
# op cases: each factory returns (fn, arrays, diff_mask)

def _away_from(x: np.ndarray, point: float = 0.0, gap: float = 1e-2) -> np.ndarray:
    """Push entries that sit too close to a kink."""
    near = np.abs(x - point) < gap
    x[near] = point + np.where(x[near] >= point, gap, -gap) * 2
    return x


def _op_cases():
    def shp(rng):
        return tuple(int(v) for v in rng.integers(1, 4, size=rng.integers(1, 3)))

    def c_add(rng):
        s = shp(rng)
        return T.add, [rng.normal(size=s), rng.normal(size=s)], None

    def c_sub(rng):
        s = shp(rng)
        return T.sub, [rng.normal(size=s), rng.normal(size=s)], None

    def c_scalar(rng):
        k = float(rng.normal())
        return (lambda a: T.add(T.mul(a, k), k)), [rng.normal(size=shp(rng))], None

    def c_neg(rng):
        return T.neg, [rng.normal(size=shp(rng))], None

    def c_mul(rng):
        s = shp(rng)
        return T.mul, [rng.normal(size=s), rng.normal(size=s)], None

    def c_scale_by(rng):
        return T.scale_by, [rng.normal(size=shp(rng)), rng.normal(size=())], None

    def c_bias_add(rng):
        x = rng.normal(size=(3, 4, 2))
        axis = int(rng.integers(0, 3))
        return (lambda a, b: T.bias_add(a, b, axis)), [x, rng.normal(size=x.shape[axis])], None

    def c_relu(rng):
        return T.relu, [_away_from(rng.normal(size=shp(rng)))], None

    def c_sigmoid(rng):
        return T.sigmoid, [rng.normal(size=shp(rng)) * 3], None

    def c_maximum(rng):
        s = shp(rng)
        a = rng.normal(size=s)
        b = a + _away_from(rng.normal(size=s))
        return T.maximum, [a, b], None

    def c_log(rng):
        return T.log, [rng.uniform(0.2, 3.0, size=shp(rng))], None

    def c_clip(rng):
        x = rng.uniform(-2, 2, size=shp(rng))
        x = _away_from(_away_from(x, -0.5), 0.7)
        return (lambda a: T.clip(a, -0.5, 0.7)), [x], None

    def c_softmax(rng):
        axis = int(rng.integers(0, 2))
        return (lambda a: T.softmax(a, axis)), [rng.normal(size=(3, 4))], None

    def c_layer_norm(rng):
        d = int(rng.integers(2, 6))
        return T.layer_norm, [rng.normal(size=(3, d)), rng.normal(size=d), rng.normal(size=d)], None

    def c_sum(rng):
        axis = [None, 0, 1, (0, 1)][int(rng.integers(0, 4))]
        return (lambda a: T.sum_(a, axis)), [rng.normal(size=(3, 2, 2))], None

    def c_mean(rng):
        axis = [None, 0, 2][int(rng.integers(0, 3))]
        return (lambda a: T.mean(a, axis)), [rng.normal(size=(2, 3, 2))], None

    def c_l1(rng):
        return T.l1_norm, [_away_from(rng.normal(size=shp(rng)))], None

    def c_l2(rng):
        return T.l2_norm, [rng.normal(size=shp(rng))], None

    def c_matmul(rng):
        if rng.random() < 0.5:
            m, k, n = rng.integers(1, 4, size=3)
            return T.matmul, [rng.normal(size=(m, k)), rng.normal(size=(k, n))], None
        b, m, k, n = rng.integers(1, 3, size=4)
        return T.matmul, [rng.normal(size=(b, m, k)), rng.normal(size=(b, k, n))], None

    def c_conv(rng):
        stride = int(rng.integers(1, 3))
        k = int(rng.choice([1, 3]))
        pad = k // 2
        mode = str(rng.choice(["zeros", "edge"]))
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(2, 2, k, k))
        b = rng.normal(size=2)
        return (lambda a, ww, bb: T.conv2d(a, ww, bb, stride=stride, padding=pad, pad_mode=mode)), [x, w, b], None

    def c_bilinear(rng):
        C = int(rng.integers(1, 3))
        m = rng.normal(size=(C, 4, 5))
        pts = np.stack([rng.uniform(0.05, 3.95, 6), rng.uniform(0.05, 2.95, 6)], 1)
        # keep points away from integer grid lines where the sampler has kinks
        frac = pts - np.floor(pts)
        pts = np.where(np.abs(frac) < 0.02, pts + 0.05, pts)
        pts = np.where(np.abs(frac - 1) < 0.02, pts - 0.05, pts)
        return T.bilinear_sample, [m, pts], None

    def c_bilinear_heads(rng):
        G, C = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        m = rng.normal(size=(4, 5, G, C))
        pts = np.stack([rng.uniform(0.05, 3.95, (G, 6)), rng.uniform(0.05, 2.95, (G, 6))], -1)
        frac = pts - np.floor(pts)
        pts = np.where(np.abs(frac) < 0.02, pts + 0.05, pts)
        pts = np.where(np.abs(frac - 1) < 0.02, pts - 0.05, pts)
        return T.bilinear_sample_heads, [m, pts], None

    def c_reshape(rng):
        return (lambda a: T.reshape(a, (3, -1))), [rng.normal(size=(3, 2, 2))], None

    def c_transpose(rng):
        perm = tuple(int(v) for v in rng.permutation(3))
        return (lambda a: T.transpose(a, perm)), [rng.normal(size=(2, 3, 4))], None

    def c_getitem(rng):
        idx = [(slice(1, 3),), (0,), (slice(None), 1), (np.array([0, 2, 2]),)][int(rng.integers(0, 4))]
        return (lambda a: T.getitem(a, idx if len(idx) > 1 else idx[0])), [rng.normal(size=(3, 3))], None

    def c_take_rows(rng):
        rows = rng.integers(0, 4, size=5)
        return (lambda a: T.take_rows(a, rows)), [rng.normal(size=(4, 2))], None

    def c_concat(rng):
        axis = int(rng.integers(0, 2))
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 3))
        return (lambda x, y: T.concat([x, y], axis)), [a, b], None

    def c_stack(rng):
        axis = int(rng.integers(0, 2))
        return (lambda x, y: T.stack([x, y], axis)), [rng.normal(size=3), rng.normal(size=3)], None

    def c_upsample(rng):
        return T.upsample2x, [rng.normal(size=(2, 2, 3))], None

    def c_rot90(rng):
        d = int(rng.choice([-1, 1]))
        return (lambda a: T.rot90(a, d)), [rng.normal(size=(2, 3, 3))], None

    return {
        "add": c_add, "sub": c_sub, "scalar_affine": c_scalar, "neg": c_neg, "mul": c_mul,
        "scale_by": c_scale_by, "bias_add": c_bias_add, "relu": c_relu, "sigmoid": c_sigmoid,
        "maximum": c_maximum, "log": c_log, "clip": c_clip, "softmax": c_softmax,
        "layer_norm": c_layer_norm, "sum": c_sum, "mean": c_mean, "l1_norm": c_l1, "l2_norm": c_l2,
        "matmul": c_matmul, "conv2d": c_conv, "bilinear_sample": c_bilinear,
        "bilinear_sample_heads": c_bilinear_heads, "reshape": c_reshape,
        "transpose": c_transpose, "getitem": c_getitem, "take_rows": c_take_rows, "concat": c_concat,
        "stack": c_stack, "upsample2x": c_upsample, "rot90": c_rot90,
    }


def _batch_fn(kind: str, labels: np.ndarray, targets: np.ndarray, pred0: np.ndarray):
    pos_index = np.flatnonzero(labels > 0)
    d0 = np.sqrt(((pred0 - targets) ** 2).sum(axis=1))

    def fn(conf, pred):
        b = Lo.GatheredBatch(conf, labels, pred, targets, pos_index)
        if kind == "conf":
            return Lo.confidence_loss(b)
        if kind == "pos":
            return Lo.position_loss(b)
        if kind == "rank":
            # the quality distances are stop-gradient; hold them at their base value
            return Lo.ranking_loss(b, Tensor(d0))
        raise ValueError(kind)

    return fn


def _loss_cases():
    def batch(rng):
        n_pos = int(rng.integers(2, 5))
        n_neg = int(rng.integers(1, 5))
        labels = rng.permutation(np.r_[np.ones(n_pos), np.zeros(n_neg)])
        conf = rng.uniform(0.05, 0.95, size=n_pos + n_neg)
        targets = rng.uniform(0, 1, size=(n_pos, 4))
        pred = targets + _away_from(rng.normal(scale=0.1, size=(n_pos, 4)))
        return n_pos, n_neg, labels, conf, targets, pred

    def mk(kind):
        def case(rng):
            n_pos, n_neg, labels, conf, targets, pred = batch(rng)
            return _batch_fn(kind, labels, targets, pred), [conf, pred], None
        return case

    def maps(kind):
        def case(rng):
            gts = [rng.uniform(0, 1, size=(r, r)) for r in (4, 2)]
            fn = Lo.junction_map_loss if kind == "junc" else Lo.edge_map_loss
            return (lambda a, b: fn([a, b], gts)), [rng.uniform(0, 1, size=(4, 4)), rng.uniform(0, 1, size=(2, 2))], None
        return case

    def total(rng):
        n_pos, n_neg, labels, conf, targets, pred = batch(rng)
        gts = [rng.uniform(0, 1, size=(3, 3))]
        w = Lo.LossWeights(*rng.uniform(0.1, 2.0, size=5))
        pos_index = np.flatnonzero(labels > 0)
        d0 = np.sqrt(((pred - targets) ** 2).sum(axis=1))

        def fn(c, p, mj, me):
            b = Lo.GatheredBatch(c, labels, p, targets, pos_index)
            parts = Lo.LossParts(Lo.ranking_loss(b, Tensor(d0)), Lo.confidence_loss(b), Lo.position_loss(b),
                                 Lo.junction_map_loss([mj], gts), Lo.edge_map_loss([me], gts))
            return Lo.total_loss(parts, w)

        return fn, [conf, pred, rng.uniform(0, 1, (3, 3)), rng.uniform(0, 1, (3, 3))], None

    return {"confidence_loss": mk("conf"), "position_loss": mk("pos"), "ranking_loss": mk("rank"),
            "junction_map_loss": maps("junc"), "edge_map_loss": maps("edge"), "total_loss": total}


def run_cases(scope: str, cases: dict, n: int, seed: int, tol: float) -> Report:
    rep = Report(scope)
    for name, factory in cases.items():
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(n):
            fn, arrays, mask = factory(rng)
            arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
            worst = max(worst, check_function(fn, arrays, rng, mask))
        rep.results.append(CheckResult(name, n, worst, tol, time.perf_counter() - t0))
    return rep


def check_ops(n: int = 20, seed: int = 0) -> Report:
    return run_cases("op", _op_cases(), n, seed, OP_TOL)


def check_losses(n: int = 20, seed: int = 0) -> Report:
    return run_cases("loss", _loss_cases(), n, seed, OP_TOL)


def tiny_model_config():
    from .model.detector import ModelConfig

    return ModelConfig(input_size=16, levels=(16, 8, 4), hidden_dim=16, encoder_layers=1, heads=2,
                       referring_points=2, ffn_dim=16, head_dim=8, geo_dim=8, seed=3)


def check_end_to_end(probes: int = 32, seed: int = 0, step: float = STEP) -> Report:
    """Total-loss gradient w.r.t. a random subset of scalar parameters on a tiny model."""
    from .losses import LossWeights, total_loss
    from .model.detector import Detector
    from .model.train import gather, item_losses, prepare_item
    from .synthdata import SceneSpec, generate

    cfg = tiny_model_config()
    model = Detector(cfg)
    rng = np.random.default_rng(seed)
    # perturb zero-initialized heads so every parameter sees a generic point
    for _, p in model.named_parameters():
        p.data += rng.normal(scale=0.05, size=p.shape)
        p.mark_dirty()
    spec = SceneSpec(seed=seed, image_size=16, min_length=4.0, max_length=10.0, margin=1.0,
                     collision_grid=16, max_segments=3)
    item = prepare_item(generate(spec, 0), 0, cfg.levels)
    weights = LossWeights()

    # the ranking loss treats its quality distances as constants
    with T.no_grad(), T.new_tape():
        base = gather(model(item.sample.image), item.sample.gts, 3.0, [seed, 1]).quality_distances()

    def loss_value() -> float:
        with T.no_grad(), T.new_tape():
            return total_loss(item_losses(model, item, 3.0, [seed, 1], distances=base), weights).item()

    t0 = time.perf_counter()
    with T.new_tape() as tape:
        loss = total_loss(item_losses(model, item, 3.0, [seed, 1], distances=base), weights)
        tape.backward(loss)
    named = list(model.named_parameters())
    grads = {n: p.grad.copy() for n, p in named}
    sizes = np.array([p.size for _, p in named])
    picks = rng.choice(sizes.sum(), size=probes, replace=False)
    offsets = np.cumsum(np.r_[0, sizes])
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, p = named[k]
        idx = int(flat - offsets[k])
        orig = p.data.reshape(-1)[idx]
        p.data.reshape(-1)[idx] = orig + step
        p.mark_dirty()
        up = loss_value()
        p.data.reshape(-1)[idx] = orig - step
        p.mark_dirty()
        down = loss_value()
        p.data.reshape(-1)[idx] = orig
        p.mark_dirty()
        num = (up - down) / (2 * step)
        ana = float(grads[name].reshape(-1)[idx])
        err = abs(ana - num) / max(abs(ana), abs(num), FLOOR)
        worst = max(worst, err)
    rep = Report("end2end")
    rep.results.append(CheckResult(f"total_loss[{probes} probes]", probes, worst, E2E_TOL, time.perf_counter() - t0))
    return rep


def run(scope: str, n: int = 20, seed: int = 0) -> Report:
    if scope == "op":
        return check_ops(n, seed)
    if scope == "loss":
        return check_losses(n, seed)
    if scope == "end2end":
        return check_end_to_end(seed=seed)
    raise ValueError(f"unknown gradcheck scope {scope!r}")
