"""Set and pair metrics: Frechet distance, perceptual patch distance, histogram distance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .losses import FeaturePyramid, backbone, loss_perceptual
from .tensor import DimensionError, Tensor

NEG_EIG_TOL = -1e-6


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise DimensionError(f"covariance {self.cov.shape} does not match mean dim {d}")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.cov).all()):
            raise ValueError("non-finite Gaussian statistics")
        if np.abs(self.cov - self.cov.T).max(initial=0.0) > 1e-8:
            raise ValueError("covariance is not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    if vals.min(initial=0.0) < NEG_EIG_TOL:
        raise ValueError(f"covariance has eigenvalue {vals.min():.3g} below {NEG_EIG_TOL}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The root trace equals the nuclear norm of sqrt(S1) @ sqrt(S2), whose squared
    singular values are the eigenvalues of sqrt(S1) S2 sqrt(S1). Taking singular
    values avoids square-rooting eigenvalue noise on rank-deficient covariances.
    """
    if s1.dim != s2.dim:
        raise DimensionError(f"dimension mismatch {s1.dim} vs {s2.dim}")
    diff = s1.mean - s2.mean
    r1, r2 = _psd_sqrt(s1.cov), _psd_sqrt(s2.cov)
    tr_root = np.linalg.svd(r1 @ r2, compute_uv=False).sum()
    value = diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * tr_root
    return float(max(value, 0.0)) if value > -1e-12 else float(value)


def gaussian_stats(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance of an (n, d) feature matrix."""
    feats = np.asarray(features, dtype=np.float64)
    n = feats.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples for covariance")
    mean = feats.mean(axis=0)
    centred = feats - mean
    cov = centred.T @ centred / (n - 1)
    return GaussianStats(mean, (cov + cov.T) / 2, n)


def _as_tensors(images) -> list[Tensor]:
    from .data import ImageSet, to_tensor

    if isinstance(images, ImageSet):
        return [to_tensor(item.load()) for item in images]
    return [im if isinstance(im, Tensor) else T.as_tensor(im) for im in images]


def embed(images, pyramid: FeaturePyramid | None = None) -> np.ndarray:
    """Globally pooled final-level features, one row per image."""
    pyramid = pyramid or backbone()
    rows = []
    with T.no_grad():
        for im in _as_tensors(images):
            feat = pyramid.features(im)[-1].data.astype(np.float64)
            rows.append(feat.mean(axis=(2, 3)).reshape(-1))
    return np.stack(rows)


def embed_for_fid(images, pyramid: FeaturePyramid | None = None) -> GaussianStats:
    feats = embed(images, pyramid)
    if feats.shape[0] < 2:
        raise ValueError("need at least 2 images for Frechet statistics")
    return gaussian_stats(feats)


def fid(set_a, set_b, pyramid: FeaturePyramid | None = None) -> float:
    return frechet_distance(embed_for_fid(set_a, pyramid), embed_for_fid(set_b, pyramid))


def perceptual_patch_distance(x: Tensor, y: Tensor, pyramid: FeaturePyramid | None = None) -> float:
    """Uncalibrated LPIPS-style distance.

    Features are unit-normalised across channels at each position; the squared
    difference is averaged over positions and then over pyramid levels.
    """
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    pyramid = pyramid or backbone()
    with T.no_grad():
        fx, fy = pyramid.features(x), pyramid.features(y)
    total = 0.0
    for a, b in zip(fx, fy):
        a = a.data.astype(np.float64)
        b = b.data.astype(np.float64)
        a = a / (np.sqrt((a * a).sum(axis=1, keepdims=True)) + 1e-10)
        b = b / (np.sqrt((b * b).sum(axis=1, keepdims=True)) + 1e-10)
        total += ((a - b) ** 2).sum(axis=1).mean()
    return float(total / len(fx))


def feature_reconstruction_loss(x: Tensor, y: Tensor, pyramid: FeaturePyramid | None = None) -> float:
    with T.no_grad():
        return loss_perceptual(x, y, pyramid).item()


def channel_histogram(x: Tensor | np.ndarray, bins: int = 32) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    arr = arr.reshape(-1, *arr.shape[-3:])[0] if arr.ndim == 4 else arr
    hists = [np.histogram(ch, bins=bins, range=(-1.0, 1.0))[0] / ch.size for ch in arr]
    return np.stack(hists)


def channel_histogram_distance(x, y, bins: int = 32) -> float:
    """Mean over channels of the L1 distance between normalised value histograms."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    hx, hy = channel_histogram(x, bins), channel_histogram(y, bins)
    if hx.shape != hy.shape:
        raise DimensionError("images have different channel counts")
    return float(np.abs(hx - hy).sum(axis=1).mean())


def nearest_mean(outputs: Sequence[Tensor], targets: Sequence[Tensor], dist) -> float:
    """Mean over outputs of the distance to the closest target image."""
    return float(np.mean([min(dist(o, t) for t in targets) for o in outputs]))


def set_distance(outputs: Iterable[Tensor], targets: Iterable[Tensor], dist) -> float:
    """Mean distance of each output to the whole target set."""
    targets = list(targets)
    return float(np.mean([np.mean([dist(o, t) for t in targets]) for o in outputs]))
