"""Optimization loop: Adam, input augmentation and alternating D/G updates."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .losses import (LOG_COLUMNS, LossReport, LossWeights, backbone, loss_adversarial,
                     loss_cycle, loss_identity, loss_kl, loss_perceptual, loss_total)
from .model import DomainId, ModelConfig, SittaModel, decode, encode_content, encode_texture, forward_pair
from .tensor import Rng, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    iters: int = 800
    image_side: int = 288
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 100
    base_channels: int = 8
    d_t: int = 8
    n_res: int = 1
    backbone_seed: int = 1234
    augment: bool = True

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.image_side % 8:
            raise ValueError("image_side must be divisible by 8")

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_t=self.d_t, base_channels=self.base_channels, n_res=self.n_res,
                           seed=self.seed)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, component: str):
        super().__init__(f"non-finite {component} loss at iteration {iteration}")
        self.iteration = iteration
        self.component = component


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState | None, lr: float,
              beta1: float, beta2: float, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns (new_param, new_state)."""
    if state is None:
        state = AdamState(np.zeros(param.shape), np.zeros(param.shape), 0)
    if grad.shape != param.shape:
        raise ValueError(f"grad shape {grad.shape} != param shape {param.shape}")
    g = grad.astype(np.float64)
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * g
    v = beta2 * state.v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = param - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new.astype(param.dtype), AdamState(m, v, t)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float, beta2: float, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: list[AdamState | None] = [None] * len(self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            p.data, self.state[i] = adam_step(p.data, p.grad, self.state[i], self.lr,
                                              self.beta1, self.beta2, self.eps)


# ------------------------------------------------------------------ input augmentation


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an (N, C, H, W) array."""
    n, c, h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()

    def coords(n_in, n_out):
        x = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        x = np.clip(x, 0, n_in - 1)
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (x - lo).astype(arr.dtype)

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    top = arr[:, :, y0][:, :, :, x0] * (1 - fx) + arr[:, :, y0][:, :, :, x1] * fx
    bot = arr[:, :, y1][:, :, :, x0] * (1 - fx) + arr[:, :, y1][:, :, :, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def augment_input(image: Tensor, rng: Rng, target_side: int, *, flip: bool | None = None,
                  crop: str | None = None, scale: float | None = None) -> Tensor:
    """Random horizontal flip, then a center or random square crop, then bilinear resize.

    ``flip``, ``crop`` ('center' | 'random') and ``scale`` override the random draws.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    h, w = arr.shape[2:]
    if min(h, w) < 16:
        raise ValueError(f"image {h}x{w} too small to augment")
    # draw every random number unconditionally so the stream position is fixed
    u_flip, u_crop, u_scale = rng.random(), rng.random(), rng.random()
    u_y, u_x = rng.random(), rng.random()
    if flip is None:
        flip = u_flip < 0.5
    if crop is None:
        crop = "center" if u_crop < 0.5 else "random"
    if scale is None:
        scale = 0.7 + 0.3 * u_scale
    if flip:
        arr = arr[:, :, :, ::-1]
    side = max(16, int(round(scale * min(h, w))))
    if crop == "center":
        top, left = (h - side) // 2, (w - side) // 2
    else:
        top, left = int(u_y * (h - side + 1)), int(u_x * (w - side + 1))
    arr = arr[:, :, top:top + side, left:left + side]
    return Tensor(np.ascontiguousarray(resize_bilinear(arr, target_side, target_side)))


def flip_horizontal(image: Tensor) -> Tensor:
    return Tensor(np.ascontiguousarray(image.data[:, :, :, ::-1]))


def _fit(image: Tensor, side: int) -> Tensor:
    if image.shape[2:] == (side, side):
        return image
    return Tensor(resize_bilinear(image.data, side, side))


# ------------------------------------------------------------------ training


def _check(report: LossReport, iteration: int):
    for name in ("adv_d", "adv_g", "idt", "rec", "kl", "perceptual", "total"):
        if not math.isfinite(getattr(report, name)):
            raise TrainingDiverged(iteration, name)


def train_step(model: SittaModel, i_a: Tensor, i_b: Tensor, opt_g: Adam, opt_d: Adam,
               weights: LossWeights, pyramid) -> LossReport:
    """One iteration: discriminator update on detached fakes, then generator update."""
    out = forward_pair(model, i_a, i_b)
    fake_b, fake_a = out["i_a2b"], out["i_b2a"]

    d_b, d_a = model.d_b, model.d_a
    opt_d.zero_grad()
    adv_d = (loss_adversarial(d_b(i_b), d_b(fake_b.detach()), "discriminator")
             + loss_adversarial(d_a(i_a), d_a(fake_a.detach()), "discriminator"))
    adv_d_value = adv_d.item()
    if not math.isfinite(adv_d_value):
        return LossReport(adv_d=adv_d_value)
    adv_d.backward()
    opt_d.step()

    opt_g.zero_grad()
    with T.frozen(model.discriminator_parameters()):
        adv_g = (loss_adversarial(None, d_b(fake_b), "generator")
                 + loss_adversarial(None, d_a(fake_a), "generator"))
    idt = loss_identity(out["i_aa"], i_a, out["i_bb"], i_b)
    rec = loss_cycle(out["i_aba"], i_a, out["i_bab"], i_b)
    kl = loss_kl(out["codes"]["A"]) + loss_kl(out["codes"]["B"])
    perc = loss_perceptual(fake_b, i_a, pyramid) + loss_perceptual(fake_a, i_b, pyramid)
    total, report = loss_total(adv_g, idt, rec, kl, perc, weights, adv_d=adv_d_value)
    if math.isfinite(report.total):
        total.backward()
        opt_g.step()
    return report


def train(contents: Sequence[Tensor], texture: Tensor, cfg: TrainConfig,
          model: SittaModel | None = None,
          callback: Callable[[int, SittaModel, LossReport], None] | None = None,
          checkpoint_path=None):
    """Train one model on a texture image against one or more content images.

    With several content images the iteration budget is spread round-robin
    over them in a freshly shuffled order each pass. If ``checkpoint_path`` is
    given the model is saved there every ``log_every`` iterations.
    Returns (model, history).
    """
    if not contents:
        raise ValueError("need at least one content image")
    rng = Rng(cfg.seed)
    aug_rng = rng.spawn()
    order_rng = rng.spawn()
    model = model or SittaModel(cfg.model_config())
    opt_g = Adam(model.generator_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(model.discriminator_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    pyramid = backbone(cfg.backbone_seed)
    history: list[LossReport] = []
    order: list[int] = []
    for it in range(cfg.iters):
        if not order:
            order = list(order_rng.permutation(len(contents))) if len(contents) > 1 else [0]
        idx = order.pop(0)
        if cfg.augment:
            a = augment_input(contents[idx], aug_rng, cfg.image_side)
            b = augment_input(texture, aug_rng, cfg.image_side)
        else:
            a, b = _fit(contents[idx], cfg.image_side), _fit(texture, cfg.image_side)
        report = train_step(model, a, b, opt_g, opt_d, cfg.weights, pyramid)
        _check(report, it)
        history.append(report)
        if callback is not None:
            callback(it, model, report)
        if cfg.log_every and (it + 1) % cfg.log_every == 0:
            log.info("iter %d total %.4f idt %.4f rec %.4f", it + 1, report.total, report.idt, report.rec)
            if checkpoint_path is not None:
                from .data import save_checkpoint

                save_checkpoint(model, checkpoint_path)
    return model, history


def train_pair(i_a: Tensor, i_b: Tensor, cfg: TrainConfig, **kwargs):
    return train([i_a], i_b, cfg, **kwargs)


def translate(model: SittaModel, content_image: Tensor, texture_image: Tensor,
              direction: DomainId = DomainId.B) -> Tensor:
    """Render ``content_image`` with the texture of ``texture_image`` through the decoder of ``direction``."""
    with T.no_grad():
        t = encode_texture(model, texture_image)
        c = encode_content(model, content_image)
        return decode(model, DomainId(direction), t, c)


def history_csv(history: Sequence[LossReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for i, r in enumerate(history):
        writer.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in r.as_row(i).items()})
    return buf.getvalue()


def write_history(history: Sequence[LossReport], path):
    from .data import atomic_write_bytes

    atomic_write_bytes(Path(path), history_csv(history).encode())
