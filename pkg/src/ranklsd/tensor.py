"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable computation in the package goes through the fixed op set
below. An op whose inputs require gradients appends a record to the current
thread's :class:`Tape`; :func:`backward` replays the tape in reverse.

Broadcasting is limited to tensor-scalar; bias terms use :func:`bias_add`.
"""

from __future__ import annotations

import math
import struct
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class TensorError(Exception):
    """Base class for tensor failures."""


class ShapeError(TensorError, ValueError):
    def __init__(self, op: str, a, b, detail: str = ""):
        self.op = op
        self.shapes = (tuple(a), tuple(b))
        msg = f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class NonFiniteError(TensorError, ValueError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: non-finite input")


class TapeError(TensorError, RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_finite", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None
        self._finite: bool | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.dtype == np.float64 else arr.astype(np.float64)
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._tape = None
        t._finite = None
        return t

    # -- introspection
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, (), "tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def mark_dirty(self) -> None:
        """Call after mutating ``data`` in place."""
        self._finite = None

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return add(neg(self), o)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / float(o))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


# ---------------------------------------------------------------------------
# tape

class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of differentiable ops executed on one thread."""

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        if self.consumed:
            raise TapeError("tape already replayed; call reset() before recording")
        output._tape = self
        self.records.append(_Record(op, tuple(inputs), output, backward))

    def reset(self) -> None:
        for r in self.records:
            r.output._tape = None
        self.records.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss is detached from this tape")
        if self.consumed:
            raise TapeError("backward already ran on this tape; reset it first")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if t._tape is None:
                    leaves[key] = t
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        for r in self.records:
            for t in r.inputs:
                if t.requires_grad and t._tape is None:
                    leaves.setdefault(id(t), t)
        for key, t in leaves.items():
            g = grads.get(key)
            t.grad = np.zeros_like(t.data) if g is None else np.ascontiguousarray(g).reshape(t.shape)


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextmanager
def new_tape():
    """Run a block on a fresh tape; the previous tape is restored afterwards."""
    prev = getattr(_local, "tape", None)
    tape = _local.tape = Tape()
    try:
        yield tape
    finally:
        tape.reset()
        _local.tape = prev


@contextmanager
def no_grad():
    prev = getattr(_local, "no_grad", False)
    _local.no_grad = True
    try:
        yield
    finally:
        _local.no_grad = prev


def backward(loss: Tensor) -> None:
    if loss._tape is None:
        raise TapeError("loss is detached from any tape")
    loss._tape.backward(loss)


# ---------------------------------------------------------------------------
# op helpers

def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op: str, *ts: Tensor) -> None:
    for t in ts:
        if t._finite is None:
            s = float(np.sum(t.data)) if t.data.size else 0.0
            t._finite = math.isfinite(s) or bool(np.isfinite(t.data).all())
        if not t._finite:
            raise NonFiniteError(op)


def _out(op: str, arr: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor._wrap(arr)
    if not getattr(_local, "no_grad", False) and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        get_tape().record(op, inputs, out, backward)
    return out


def _same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# ---------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        _check_finite("add", a)
        return _out("add", a.data + c, (a,), lambda g: (g,))
    _same("add", a, b)
    _check_finite("add", a, b)
    return _out("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _same("sub", a, b)
    _check_finite("sub", a, b)
    return _out("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    _check_finite("neg", a)
    return _out("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        _check_finite("mul", a)
        return _out("mul", a.data * c, (a,), lambda g: (g * c,))
    _same("mul", a, b)
    _check_finite("mul", a, b)
    ad, bd = a.data, b.data
    return _out("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the scalar tensor ``s``."""
    if s.size != 1:
        raise ShapeError("scale_by", a.shape, s.shape, "second operand must be scalar")
    _check_finite("scale_by", a, s)
    ad, sv = a.data, s.data.reshape(())
    return _out("scale_by", ad * sv, (a, s),
                lambda g: (g * sv, np.sum(g * ad).reshape(s.shape)))


def bias_add(x: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Add a vector ``b`` along ``axis`` of ``x``."""
    ax = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[ax]:
        raise ShapeError("bias_add", x.shape, b.shape, f"bias must match axis {axis}")
    _check_finite("bias_add", x, b)
    view = [1] * x.ndim
    view[ax] = b.shape[0]
    others = tuple(i for i in range(x.ndim) if i != ax)
    return _out("bias_add", x.data + b.data.reshape(view), (x, b),
                lambda g: (g, g.sum(axis=others)))


def relu(x: Tensor) -> Tensor:
    _check_finite("relu", x)
    mask = x.data > 0
    return _out("relu", x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", x)
    y = _sigmoid(x.data)
    return _out("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    _same("maximum", a, b)
    _check_finite("maximum", a, b)
    pick = a.data >= b.data
    return _out("maximum", np.where(pick, a.data, b.data), (a, b),
                lambda g: (g * pick, g * ~pick))


def log(x: Tensor) -> Tensor:
    _check_finite("log", x)
    if np.any(x.data <= 0):
        raise TensorError("log: input must be strictly positive")
    xd = x.data
    return _out("log", np.log(xd), (x,), lambda g: (g / xd,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    _check_finite("clip", x)
    mask = (x.data >= lo) & (x.data <= hi)
    return _out("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite("softmax", x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _out("softmax", y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    D = x.shape[-1]
    if gamma.shape != (D,) or beta.shape != (D,):
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    _check_finite("layer_norm", x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xh = xc * rstd
    gd = gamma.data
    y = xh * gd + beta.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gx_h = g * gd
        gx = rstd * (gx_h - gx_h.mean(axis=-1, keepdims=True)
                     - xh * (gx_h * xh).mean(axis=-1, keepdims=True))
        return gx, (g * xh).sum(axis=lead), g.sum(axis=lead)

    return _out("layer_norm", y, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# reductions

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None) -> Tensor:
    _check_finite("sum", x)
    axes = _axis_tuple(axis, x.ndim)
    shape = x.shape

    def bw(g):
        keep = [1 if i in axes else n for i, n in enumerate(shape)]
        return (np.broadcast_to(g.reshape(keep), shape).copy(),)

    return _out("sum", np.asarray(x.data.sum(axis=axes)), (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _axis_tuple(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if n == 0:
        raise TensorError("mean of an empty tensor")
    return mul(sum_(x, axis), 1.0 / n)


def l1_norm(x: Tensor) -> Tensor:
    _check_finite("l1_norm", x)
    sgn = np.sign(x.data)
    return _out("l1_norm", np.asarray(np.abs(x.data).sum()), (x,), lambda g: (g * sgn,))


def l2_norm(x: Tensor) -> Tensor:
    """Euclidean norm of all entries; the gradient at zero is taken as zero."""
    _check_finite("l2_norm", x)
    xd = x.data
    n = float(np.sqrt(np.sum(xd * xd)))

    def bw(g):
        if n == 0.0:
            return (np.zeros_like(xd),)
        return (g * xd / n,)

    return _out("l2_norm", np.asarray(n), (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``[M,K] @ [K,N]`` or batched ``[B,M,K] @ [B,K,N]``."""
    ok = (a.ndim == b.ndim == 2 and a.shape[1] == b.shape[0]) or \
         (a.ndim == b.ndim == 3 and a.shape[0] == b.shape[0] and a.shape[2] == b.shape[1])
    if not ok:
        raise ShapeError("matmul", a.shape, b.shape)
    _check_finite("matmul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        if ad.ndim == 2:
            return g @ bd.T, ad.T @ g
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _out("matmul", ad @ bd, (a, b), bw)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, mode: str = "zeros"):
    """Columns ``[C*kh*kw, B*Ho*Wo]`` for ``x[B, C, H, W]``."""
    B, C, H, W = x.shape
    if padding:
        pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
        x = np.pad(x, pad, mode="edge") if mode == "edge" else np.pad(x, pad)
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    cols = np.empty((C, kh, kw, B, Ho, Wo))
    xt = x.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
    return cols.reshape(C * kh * kw, B * Ho * Wo), Ho, Wo


def _fold_edge(gxp: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of edge padding: pad rows and columns add into the border they copy."""
    g = gxp.copy()
    g[..., p, :] += g[..., :p, :].sum(axis=-2)
    g[..., -p - 1, :] += g[..., -p:, :].sum(axis=-2)
    g[..., :, p] += g[..., :, :p].sum(axis=-1)
    g[..., :, -p - 1] += g[..., :, -p:].sum(axis=-1)
    return g[..., p:-p, p:-p]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           pad_mode: str = "zeros") -> Tensor:
    """Cross-correlation of ``x[C,H,W]`` or ``x[B,C,H,W]`` with ``w[O,C,kh,kw]``.

    ``pad_mode="edge"`` replicates border pixels instead of padding with zeros,
    so a constant input yields a spatially constant output.
    """
    if pad_mode not in ("zeros", "edge"):
        raise ValueError(f"conv2d: unknown pad_mode {pad_mode!r}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or w.ndim != 4 or x.shape[-3] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("conv2d", w.shape, b.shape, "bias must have one entry per output channel")
    inputs = (x, w) if b is None else (x, w, b)
    _check_finite("conv2d", *inputs)
    xd = x.data if batched else x.data[None]
    B, C, H, W = xd.shape
    O, _, kh, kw = w.shape
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeError("conv2d", x.shape, w.shape, "kernel larger than padded input")
    if kh == kw == 1 and stride == 1 and padding == 0:
        cols = xd.transpose(1, 0, 2, 3).reshape(C, B * H * W)
        Ho, Wo = H, W
    else:
        cols, Ho, Wo = _im2col(xd, kh, kw, stride, padding, pad_mode)
    wmat = w.data.reshape(O, -1)
    y = wmat @ cols
    if b is not None:
        y += b.data[:, None]
    y = y.reshape(O, B, Ho, Wo)
    y = y[:, 0] if not batched and B == 1 else np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    if not batched:
        y = y.reshape(O, Ho, Wo)

    def bw(g):
        g4 = g[:, None] if not batched else g.transpose(1, 0, 2, 3)
        gm = np.ascontiguousarray(g4).reshape(O, -1)
        gw = (gm @ cols.T).reshape(w.shape)
        gcols = (wmat.T @ gm).reshape(C, kh, kw, B, Ho, Wo)
        if kh == kw == 1 and stride == 1 and padding == 0:
            gxt = gcols.reshape(C, B, H, W)
        else:
            gxp = np.zeros((C, B, H + 2 * padding, W + 2 * padding))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[:, i, j]
            if not padding:
                gxt = gxp
            elif pad_mode == "edge":
                gxt = _fold_edge(gxp, padding)
            else:
                gxt = gxp[:, :, padding : padding + H, padding : padding + W]
        gx = np.ascontiguousarray(gxt[:, 0] if not batched else gxt.transpose(1, 0, 2, 3))
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    return _out("conv2d", y, inputs, bw)


# ---------------------------------------------------------------------------
# sampling

def bilinear_sample(m: Tensor, points: Tensor) -> Tensor:
    """Bilinearly sample ``m[H,W]`` or ``m[C,H,W]`` at pixel coordinates ``points[N,2]`` (x, y).

    Pixel ``(i, j)`` sits at coordinate ``(x=j, y=i)``. Points outside the map
    are clamped to the border. Returns ``[N]`` or ``[N, C]``.
    """
    if m.ndim not in (2, 3) or points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError("bilinear_sample", m.shape, points.shape)
    _check_finite("bilinear_sample", m, points)
    flat = m.ndim == 2
    md = m.data[None] if flat else m.data
    md = np.ascontiguousarray(md)
    px = np.ascontiguousarray(points.data[:, 0])
    py = np.ascontiguousarray(points.data[:, 1])
    y = kernels.bilinear_forward(md, px, py)
    if flat:
        y = y[:, 0].copy()

    def bw(g):
        g2 = np.ascontiguousarray(g[:, None] if flat else g)
        gm, gx, gy = kernels.bilinear_backward(md, px, py, g2, m.requires_grad, points.requires_grad)
        gmap = None if gm is None else (gm[0] if flat else gm)
        gpts = None if gx is None else np.stack([gx, gy], axis=1)
        return gmap, gpts

    return _out("bilinear_sample", y, (m, points), bw)


def bilinear_sample_heads(m: Tensor, points: Tensor) -> Tensor:
    """Grouped :func:`bilinear_sample` on a channel-last map.

    ``m[H, W, G, C]`` holds ``G`` maps of ``C`` channels; group ``h`` is sampled
    at ``points[h]`` (``[G, P, 2]``, pixel x then y). Returns ``[G, P, C]``.
    """
    if m.ndim != 4 or points.ndim != 3 or points.shape[0] != m.shape[2] or points.shape[2] != 2:
        raise ShapeError("bilinear_sample_heads", m.shape, points.shape)
    _check_finite("bilinear_sample_heads", m, points)
    md = np.ascontiguousarray(m.data)
    px = np.ascontiguousarray(points.data[..., 0])
    py = np.ascontiguousarray(points.data[..., 1])
    y = kernels.bilinear_heads_forward(md, px, py)

    def bw(g):
        gm, gx, gy = kernels.bilinear_heads_backward(md, px, py, np.ascontiguousarray(g),
                                                     m.requires_grad, points.requires_grad)
        return gm, (None if gx is None else np.stack([gx, gy], axis=-1))

    return _out("bilinear_sample_heads", y, (m, points), bw)


# ---------------------------------------------------------------------------
# structural

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    old = x.shape
    return _out("reshape", y, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", x.shape, axes, "axes must be a permutation")
    inv = np.argsort(axes)
    return _out("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                lambda g: (g.transpose(inv),))


def getitem(x: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing; gradients scatter back with accumulation."""
    y = x.data[idx]
    y = np.array(y, dtype=np.float64) if not isinstance(y, np.ndarray) else np.ascontiguousarray(y)
    shape = x.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (int, slice)) or p is Ellipsis or p is None for p in parts)

    def bw(g):
        gx = np.zeros(shape)
        if basic:
            gx[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _out("getitem", y, (x,), bw)


def take_rows(x: Tensor, rows) -> Tensor:
    """Gather ``x[rows]`` along axis 0 with an integer index array."""
    rows = np.asarray(rows, dtype=np.int64)
    shape = x.shape
    n = shape[0]

    def bw(g):
        gflat = g.reshape(len(rows), -1)
        width = gflat.shape[1]
        gx = np.zeros((n, width))
        if len(rows):
            for c in range(width):
                gx[:, c] = np.bincount(rows, weights=gflat[:, c], minlength=n)
        return (gx.reshape(shape),)

    return _out("take_rows", np.ascontiguousarray(x.data[rows]), (x,), bw)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    if not ts:
        raise TensorError("concat of an empty list")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError("concat", ts[0].shape, t.shape)
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=ax))

    return _out("concat", np.concatenate([t.data for t in ts], axis=ax), tuple(ts), bw)


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    y = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)
    shp = x.shape

    def bw(g):
        h, w = shp[-2], shp[-1]
        return (g.reshape(shp[:-2] + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _out("upsample2x", y, (x,), bw)


def rot90(x: Tensor, direction: int = 1) -> Tensor:
    """Rotate the last two axes by 90 degrees (``+1`` counter-clockwise as displayed)."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    y = np.ascontiguousarray(np.rot90(x.data, k=direction, axes=(-2, -1)))
    return _out("rot90", y, (x,),
                lambda g: (np.ascontiguousarray(np.rot90(g, k=-direction, axes=(-2, -1))),))


# ---------------------------------------------------------------------------
# serialization

MAGIC = b"RLT1"


def to_bytes(t: Tensor) -> bytes:
    shape = t.shape
    head = MAGIC + struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    return head + t.data.astype("<f8").tobytes()


def from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Decode one tensor starting at ``offset``; returns the tensor and the end offset."""
    if buf[offset : offset + 4] != MAGIC:
        raise TensorError("bad tensor magic")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    shape = struct.unpack_from(f"<{rank}I", buf, offset + 8)
    start = offset + 8 + 4 * rank
    n = int(np.prod(shape)) if rank else 1
    end = start + 8 * n
    if end > len(buf):
        raise TensorError("truncated tensor payload")
    arr = np.frombuffer(buf[start:end], dtype="<f8").astype(np.float64).reshape(shape)
    return Tensor(arr), end


def parameters_finite(ts: Iterable[Tensor]) -> bool:
    return all(bool(np.isfinite(t.data).all()) for t in ts)
