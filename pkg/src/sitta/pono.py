"""Positional normalization: per-position channel moments and their re-injection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

EPS = 1e-5


@dataclass
class MomentPair:
    beta: Tensor   # (B, 1, H, W) channel mean at each position
    gamma: Tensor  # (B, 1, H, W) channel std at each position, eps inside the root
    epsilon: float = EPS

    @property
    def spatial(self):
        return self.beta.shape[2:]


def extract_moments(x: Tensor, eps: float = EPS) -> MomentPair:
    if x.ndim != 4 or x.shape[1] < 1:
        raise DimensionError(f"expected NCHW tensor with C >= 1, got {x.shape}")
    mu = T.reduce_mean(x, axis=1, keepdims=True)
    var = T.reduce_mean(T.square(x - mu), axis=1, keepdims=True)
    sigma = T.sqrt(var + eps)
    return MomentPair(mu, sigma, eps)


def pono_normalize(x: Tensor, eps: float = EPS) -> tuple[Tensor, MomentPair]:
    m = extract_moments(x, eps)
    return (x - m.beta) / m.gamma, m


def _resize_nearest(t: Tensor, size) -> Tensor:
    h, w = t.shape[2:]
    th, tw = size
    if (h, w) == (th, tw):
        return t
    if th % h == 0 and tw % w == 0 and th // h == tw // w:
        return T.upsample_nearest(t, th // h)
    if h % th == 0 and w % tw == 0 and h // th == w // tw:
        f = h // th
        return T.Tensor(t.data[:, :, ::f, ::f]) if not t.requires_grad else _subsample(t, f)
    raise DimensionError(f"cannot resize moments {h}x{w} to {th}x{tw}")


def _subsample(t: Tensor, f: int) -> Tensor:
    shape = t.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[:, :, ::f, ::f] = g
        return (out,)

    return T._make(t.data[:, :, ::f, ::f], (t,), backward)


def inject_moments(f: Tensor, moments: MomentPair) -> Tensor:
    """gamma * f + beta, broadcast over channels.

    Moments are nearest-resized when their grid is an integer multiple or
    divisor of the feature grid.
    """
    if f.ndim != 4:
        raise DimensionError(f"expected NCHW tensor, got {f.shape}")
    size = f.shape[2:]
    gamma = _resize_nearest(moments.gamma, size)
    beta = _resize_nearest(moments.beta, size)
    return gamma * f + beta
