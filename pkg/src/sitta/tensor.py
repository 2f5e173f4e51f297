"""Small reverse-mode autodiff engine over numpy arrays.

Values are float32 NCHW arrays by default. Reductions accumulate in float64.
Gradient checks switch the default dtype to float64 through ``precision``.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

_DTYPE = np.float32
_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def frozen(params: Iterable["Tensor"]):
    """Stop gradient accumulation into ``params`` for the duration of the block."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


class Rng:
    """Seeded PCG64 stream (numpy's bit-stable generator).

    A single instance is threaded explicitly through every stochastic call.
    ``spawn`` derives independent child streams from the seed sequence.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._ss = np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._ss))

    def spawn(self) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._ss = self._ss.spawn(1)[0]
        child.gen = np.random.Generator(np.random.PCG64(child._ss))
        return child

    def normal(self, shape, std=1.0):
        return (self.gen.standard_normal(shape) * std).astype(_DTYPE)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self):
        return float(self.gen.random())

    def permutation(self, n):
        return self.gen.permutation(n)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if needs:
        # the requires_grad mask is fixed now, so params frozen at build time
        # stay out of the backward pass even after the freeze is lifted
        live = tuple(p if p.requires_grad else _INERT for p in parents)
        return Tensor(data, True, live, backward)
    return Tensor(data)


_INERT = Tensor(np.zeros((), dtype=np.float32))


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values produced by {op}")


def parameter(data, name=None) -> Tensor:
    t = Tensor(np.array(data, dtype=_DTYPE), requires_grad=True)
    t.name = name
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    _check_finite(out, "div")

    def backward(g):
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return _unbroadcast(g / bd, ad.shape), gb

    return _make(out, (a, b), backward)


def sqrt(x: Tensor) -> Tensor:
    if (x.data < 0).any():
        raise FloatingPointError("sqrt of negative value")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g / (2.0 * out),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def absolute(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)
    return _make(xd * scale, (x,), lambda g: (g * scale,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(xd):
    return np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                    np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd)))).astype(xd.dtype)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    xd = x.data
    out = (np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))).astype(xd.dtype)
    return _make(out, (x,), lambda g: (g * _stable_sigmoid(xd),))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind in ("leaky_relu", "lrelu"):
        return leaky_relu(x, 0.2)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def pad2d(x: Tensor, pad: int, mode: str = "zeros") -> Tensor:
    """Pad H and W by ``pad`` on each side; mode is 'zeros' or 'reflect'."""
    if pad == 0:
        return x
    _, _, h, w = x.shape
    if mode == "zeros":
        out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        return _make(out, (x,), lambda g: (g[:, :, pad:pad + h, pad:pad + w],))
    if mode != "reflect":
        raise ValueError(f"unknown padding mode {mode!r}")
    if pad >= h or pad >= w:
        raise DimensionError(f"reflect pad {pad} too large for {h}x{w}")
    out = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")

    def backward(g):
        gx = g[:, :, :, pad:pad + w].copy()
        for r in range(1, pad + 1):
            gx[:, :, :, r] += g[:, :, :, pad - r]
            gx[:, :, :, w - 1 - r] += g[:, :, :, pad + w - 1 + r]
        gy = gx[:, :, pad:pad + h, :].copy()
        for r in range(1, pad + 1):
            gy[:, :, r, :] += gx[:, :, pad - r, :]
            gy[:, :, h - 1 - r, :] += gx[:, :, pad + h - 1 + r, :]
        return (gy,)

    return _make(out, (x,), backward)


def _im2col(xh, kh, kw, stride, ho, wo):
    """NHWC input -> (B, Ho, Wo, kh, kw*C) strided patch view (no copy).

    A window row of kw pixels is contiguous in NHWC, so one strided view covers
    every patch; reshaping a slice of it to 2-D performs the only copy.
    """
    b, h, w, c = xh.shape
    # strides from the shape: numpy may report arbitrary strides on length-1 axes
    s3 = xh.itemsize
    s2, s1, s0 = c * s3, w * c * s3, h * w * c * s3
    return as_strided(xh, (b, ho, wo, kh, kw * c), (s0, s1 * stride, s2 * stride, s1, s3))


# output pixels per im2col block; keeps the patch matrix cache-resident
_BLOCK = 8192


def _row_blocks(ho, wo):
    rows = max(1, _BLOCK // max(wo, 1))
    for i in range(0, ho, rows):
        yield slice(i, min(i + rows, ho))


def _conv_nhwc(xh, wm, kh, kw, stride, ho, wo):
    """Correlate contiguous NHWC ``xh`` with a (kh*kw*C, Cout) matrix, block by block."""
    win = _im2col(xh, kh, kw, stride, ho, wo)
    out = np.empty((xh.shape[0], ho, wo, wm.shape[1]), dtype=np.result_type(xh, wm))
    for n in range(xh.shape[0]):
        for rows in _row_blocks(ho, wo):
            blk = win[n, rows]
            out[n, rows] = (blk.reshape(-1, wm.shape[0]) @ wm).reshape(*blk.shape[:2], -1)
    return out


def _conv_weight_grad(xh, gh, kh, kw, stride):
    b, ho, wo, cout = gh.shape
    win = _im2col(xh, kh, kw, stride, ho, wo)
    gw = np.zeros((kh * kw * xh.shape[3], cout), dtype=gh.dtype)
    for n in range(b):
        for rows in _row_blocks(ho, wo):
            gw += win[n, rows].reshape(-1, gw.shape[0]).T @ gh[n, rows].reshape(-1, cout)
    return gw


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and (Cout, Cin, k, k) weight")
    cout, cin, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise DimensionError(f"input has {x.shape[1]} channels, weight expects {cin}")
    xp = pad2d(x, padding, pad_mode) if padding else x
    b, _, hp, wp = xp.shape
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xh = np.ascontiguousarray(xp.data.transpose(0, 2, 3, 1))
    wm = weight.data.transpose(2, 3, 1, 0).reshape(kh * kw * cin, cout)
    out = _conv_nhwc(xh, wm, kh, kw, stride, ho, wo)
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        gh = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gw = None
        if weight.requires_grad:
            gw = np.ascontiguousarray(
                _conv_weight_grad(xh, gh, kh, kw, stride).reshape(kh, kw, cin, cout).transpose(3, 2, 0, 1))
        gb = gh.reshape(-1, cout).sum(axis=0) if bias is not None else None
        gx = None
        if xp.requires_grad:
            if stride > 1:
                # col2im: scatter-add patch gradients; cheaper than a mostly-zero dilated map
                gcols = (gh.reshape(-1, cout) @ wm.T).reshape(b, ho, wo, kh, kw, cin)
                gxh = np.zeros((b, hp, wp, cin), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxh[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, i, j]
            else:
                # full correlation of the output gradient with the flipped kernel
                gd = np.pad(gh, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
                wf = weight.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kw * cout, cin)
                gxh = _conv_nhwc(gd, wf, kh, kw, 1, hp, wp)
            gx = gxh.transpose(0, 3, 1, 2)
        if bias is None:
            return gx, gw
        return gx, gw, gb

    parents = (xp, weight) if bias is None else (xp, weight, bias)
    return _make(out, parents, backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    b, c, h, w = x.shape

    def backward(g):
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)
    shape = x.shape
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kshape), shape),)

    return _make(out, (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)
    shape = x.shape
    kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kshape) / n, shape),)

    return _make(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    return reduce_mean(x, axis=(2, 3), keepdims=True)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return reduce_mean(absolute(sub(a, b)))


def squared_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return reduce_mean(square(sub(a, b)))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (B, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not match")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(labels))
    out = np.asarray(-logp[rows, labels].mean(), dtype=logits.data.dtype)

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return ((g * d / len(labels)).astype(logits.data.dtype),)

    return _make(out, (logits,), backward)


# ---------------------------------------------------------------- verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between autodiff and central differences of ``f`` at ``x``.

    Evaluated in float64. ``f`` must return a single-element tensor.
    """
    with precision(np.float64):
        base = np.array(x.data, dtype=np.float64)
        xt = Tensor(base.copy(), requires_grad=True)
        out = f(xt)
        if out.data.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        if out.requires_grad:
            out.backward()
        analytic = xt.grad if xt.grad is not None else np.zeros_like(base)
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        with no_grad():
            for i in range(base.size):
                xp = base.copy().reshape(-1)
                xp[i] += eps
                fp = f(Tensor(xp.reshape(base.shape))).item()
                xp[i] -= 2 * eps
                fm = f(Tensor(xp.reshape(base.shape))).item()
                flat[i] = (fp - fm) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
