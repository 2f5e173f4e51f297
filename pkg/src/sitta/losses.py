"""Training objective: adversarial, identity, cycle, texture-code and perceptual terms."""
from __future__ import annotations

from dataclasses import dataclass, asdict, fields

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Rng, Tensor

LOG_COLUMNS = ("iter", "adv_g", "adv_d", "idt", "rec", "kl", "perceptual", "total")


@dataclass
class LossWeights:
    lambda_idt: float = 10.0
    lambda_rec: float = 10.0
    lambda_kl: float = 0.01
    lambda_f: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass
class LossReport:
    adv_g: float = 0.0
    adv_d: float = 0.0
    idt: float = 0.0
    rec: float = 0.0
    kl: float = 0.0
    perceptual: float = 0.0
    total: float = 0.0

    def as_row(self, iteration: int) -> dict:
        return {"iter": iteration, **asdict(self)}


class FeaturePyramid:
    """Frozen random conv pyramid 3->16->32->64, stride 2 per level.

    Stands in for a pretrained perceptual backbone. Weights depend only on
    ``seed``; they never require gradients.
    """

    widths = (16, 32, 64)

    def __init__(self, seed: int = 1234):
        self.seed = seed
        rng = Rng(seed)
        self.weights = []
        cin = 3
        for cout in self.widths:
            std = np.sqrt(2.0 / (cin * 9))
            w = rng.gen.standard_normal((cout, cin, 3, 3)) * std
            self.weights.append(w.astype(np.float32))
            cin = cout

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for w in self.weights:
            wt = Tensor(w.astype(x.data.dtype))
            h = T.relu(T.conv2d(h, wt, None, stride=2, padding=1, pad_mode="zeros"))
            feats.append(h)
        return feats

    @property
    def dim(self) -> int:
        return self.widths[-1]


_BACKBONES: dict[int, FeaturePyramid] = {}


def backbone(seed: int = 1234) -> FeaturePyramid:
    if seed not in _BACKBONES:
        _BACKBONES[seed] = FeaturePyramid(seed)
    return _BACKBONES[seed]


def loss_adversarial(d_real: Tensor | None, d_fake: Tensor, side: str) -> Tensor:
    """Cross-entropy GAN loss on patch logits.

    discriminator: mean softplus(-real) + mean softplus(fake)
    generator:     mean softplus(-fake)   (non-saturating)
    """
    if side == "discriminator":
        if d_real is None or d_real.shape != d_fake.shape:
            raise DimensionError("real and fake logit maps must share a shape")
        return T.reduce_mean(T.softplus(-d_real)) + T.reduce_mean(T.softplus(d_fake))
    if side == "generator":
        return T.reduce_mean(T.softplus(-d_fake))
    raise ValueError(f"side must be 'generator' or 'discriminator', got {side!r}")


def loss_identity(i_aa: Tensor, i_a: Tensor, i_bb: Tensor, i_b: Tensor) -> Tensor:
    return T.l1_distance(i_bb, i_b) + T.l1_distance(i_aa, i_a)


def loss_cycle(i_ba: Tensor, i_a: Tensor, i_ab: Tensor, i_b: Tensor) -> Tensor:
    return T.l1_distance(i_ba, i_a) + T.l1_distance(i_ab, i_b)


def loss_kl(t) -> Tensor:
    """Mean square of the texture code, averaged over the batch."""
    v = t.values if hasattr(t, "values") else T.as_tensor(t)
    return T.reduce_mean(T.square(v))


def loss_perceptual(out: Tensor, ref: Tensor, pyramid: FeaturePyramid | None = None) -> Tensor:
    if out.shape != ref.shape:
        raise DimensionError(f"shape mismatch {out.shape} vs {ref.shape}")
    pyramid = pyramid or backbone()
    with T.no_grad():
        ref_feats = pyramid.features(ref.detach())
    total = None
    for fo, fr in zip(pyramid.features(out), ref_feats):
        term = T.squared_distance(fo, fr)
        total = term if total is None else total + term
    return total


def loss_total(adv_g, idt, rec, kl, perceptual, w: LossWeights, adv_d=0.0):
    """Weighted generator objective. Returns (total, LossReport).

    Components may be tensors (the total stays differentiable) or floats.
    """
    for f in fields(w):
        if getattr(w, f.name) < 0:
            raise ValueError(f"{f.name} must be non-negative")
    total = (T.as_tensor(adv_g) + T.as_tensor(idt) * w.lambda_idt + T.as_tensor(rec) * w.lambda_rec
             + T.as_tensor(kl) * w.lambda_kl + T.as_tensor(perceptual) * w.lambda_f)
    report = LossReport(adv_g=_f(adv_g), adv_d=_f(adv_d), idt=_f(idt), rec=_f(rec), kl=_f(kl),
                        perceptual=_f(perceptual), total=_f(total))
    return total, report


def _f(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)
