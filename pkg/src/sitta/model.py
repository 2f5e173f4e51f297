"""Two-domain texture translation network.

One texture encoder and one content encoder are shared by both domains;
each domain owns a decoder and a patch discriminator.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .pono import MomentPair, inject_moments, pono_normalize
from .tensor import DimensionError, Rng, Tensor

INIT_STD = 0.02


class DomainId(str, enum.Enum):
    A = "A"
    B = "B"

    @property
    def other(self) -> "DomainId":
        return DomainId.B if self is DomainId.A else DomainId.A


@dataclass
class ModelConfig:
    d_t: int = 8
    base_channels: int = 8
    n_res: int = 1
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class TextureCode:
    values: Tensor  # (B, d_t, 1, 1)

    @property
    def vector(self) -> np.ndarray:
        return self.values.data.reshape(self.values.shape[0], -1)


@dataclass
class ContentBundle:
    content: Tensor
    stage_moments: list[MomentPair]
    # normalized activations at each downsampling stage, kept for inspection
    stages: list[Tensor] = field(default_factory=list, repr=False)


class Module:
    """Parameter container; subclasses register tensors and submodules as attributes."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]


ACT = "relu"


def _act(x):
    return T.activation(x, ACT)


def _param(rng: Rng, shape, std=INIT_STD) -> Tensor:
    return T.parameter(rng.normal(shape, std))


def _zeros(shape) -> Tensor:
    return T.parameter(np.zeros(shape, dtype=T.default_dtype()))


class Conv(Module):
    def __init__(self, rng, cin, cout, k=3, stride=1, pad=None, pad_mode="reflect"):
        self.weight = _param(rng, (cout, cin, k, k))
        self.bias = _zeros((cout,))
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.pad_mode = pad_mode

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.pad_mode)


class Linear(Module):
    """Dense layer on (B, C, 1, 1) tensors, done as a 1x1 convolution."""

    def __init__(self, rng, cin, cout):
        self.conv = Conv(rng, cin, cout, k=1, pad=0, pad_mode="zeros")

    def __call__(self, x):
        return self.conv(x)


def instance_norm(x: Tensor, eps=1e-5) -> Tensor:
    mu = T.reduce_mean(x, axis=(2, 3), keepdims=True)
    var = T.reduce_mean(T.square(x - mu), axis=(2, 3), keepdims=True)
    return (x - mu) / T.sqrt(var + eps)


class ResBlock(Module):
    def __init__(self, rng, ch):
        self.conv1 = Conv(rng, ch, ch)
        self.conv2 = Conv(rng, ch, ch)

    def __call__(self, x, mod=None):
        # mod: optional [(scale1, shift1), (scale2, shift2)] of shape (B, ch, 1, 1)
        h = self.conv1(x)
        if mod is not None:
            h = instance_norm(h) * (mod[0][0] + 1.0) + mod[0][1]
        h = _act(h)
        h = self.conv2(h)
        if mod is not None:
            h = instance_norm(h) * (mod[1][0] + 1.0) + mod[1][1]
        return x + h


def _check_image(image: Tensor, multiple: int):
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"expected (B, 3, H, W) image, got {image.shape}")
    h, w = image.shape[2:]
    if h % multiple or w % multiple:
        raise DimensionError(f"image sides {h}x{w} must be divisible by {multiple}")


class TextureEncoder(Module):
    def __init__(self, rng, c, d_t):
        self.convs = [Conv(rng, 3, c, stride=2), Conv(rng, c, 2 * c, stride=2),
                      Conv(rng, 2 * c, 4 * c, stride=2)]
        self.head = Linear(rng, 4 * c, d_t)

    def __call__(self, image):
        _check_image(image, 1)
        h = image
        for conv in self.convs:
            h = _act(conv(h))
        return TextureCode(self.head(T.global_avg_pool(h)))


class ContentEncoder(Module):
    def __init__(self, rng, c, n_res):
        self.stem = Conv(rng, 3, c)
        self.down1 = Conv(rng, c, 2 * c, stride=2)
        self.down2 = Conv(rng, 2 * c, 4 * c, stride=2)
        self.res = [ResBlock(rng, 4 * c) for _ in range(n_res)]

    def __call__(self, image):
        _check_image(image, 4)
        h = _act(self.stem(image))
        n1, m1 = pono_normalize(self.down1(h))
        h = _act(n1)
        n2, m2 = pono_normalize(self.down2(h))
        h = _act(n2)
        for block in self.res:
            h = block(h)
        return ContentBundle(h, [m1, m2], [n1, n2])


class Decoder(Module):
    def __init__(self, rng, c, d_t, n_res):
        self.n_res = n_res
        self.ch = 4 * c
        self.mlp1 = Linear(rng, d_t, 4 * c)
        self.mlp2 = Linear(rng, 4 * c, n_res * 4 * 4 * c)
        self.res = [ResBlock(rng, 4 * c) for _ in range(n_res)]
        self.up1 = Conv(rng, 4 * c, 2 * c)
        self.up2 = Conv(rng, 2 * c, c)
        self.out = Conv(rng, c, 3)

    def _modulation(self, t: TextureCode):
        # texture code -> (scale, shift) pairs for each conv in each residual block
        p = self.mlp2(_act(self.mlp1(t.values)))
        ch = self.ch
        chunks = [_channel_slice(p, i * ch, (i + 1) * ch) for i in range(self.n_res * 4)]
        return [[(chunks[4 * r], chunks[4 * r + 1]), (chunks[4 * r + 2], chunks[4 * r + 3])]
                for r in range(self.n_res)]

    def __call__(self, t: TextureCode, bundle: ContentBundle):
        if len(bundle.stage_moments) != 2:
            raise DimensionError("content bundle must carry exactly two moment pairs")
        m1, m2 = bundle.stage_moments
        h = bundle.content
        for block, mod in zip(self.res, self._modulation(t)):
            h = block(h, mod)
        h = _act(inject_moments(h, m2))
        h = self.up1(T.upsample_nearest(h, 2))
        h = _act(inject_moments(h, m1))
        h = _act(self.up2(T.upsample_nearest(h, 2)))
        return T.tanh(self.out(h))


def _channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[:, start:stop] = g
        return (out,)

    return T._make(x.data[:, start:stop], (x,), backward)


class Discriminator(Module):
    """Patch discriminator: three stride-2 convs and a 3x3 logit head, output H/8."""

    def __init__(self, rng, c):
        self.convs = [Conv(rng, 3, c, k=4, stride=2, pad=1, pad_mode="zeros"),
                      Conv(rng, c, 2 * c, k=4, stride=2, pad=1, pad_mode="zeros"),
                      Conv(rng, 2 * c, 4 * c, k=4, stride=2, pad=1, pad_mode="zeros")]
        self.head = Conv(rng, 4 * c, 1, k=3, stride=1, pad=1, pad_mode="zeros")

    def __call__(self, image):
        _check_image(image, 1)
        h = image
        for conv in self.convs:
            h = T.leaky_relu(conv(h), 0.2)
        return self.head(h)


class SittaModel(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg or ModelConfig()
        c, d_t, n_res = self.cfg.base_channels, self.cfg.d_t, self.cfg.n_res
        rng = Rng(self.cfg.seed)
        self.en_t = TextureEncoder(rng, c, d_t)
        self.en_c = ContentEncoder(rng, c, n_res)
        self.de_a = Decoder(rng, c, d_t, n_res)
        self.de_b = Decoder(rng, c, d_t, n_res)
        self.d_a = Discriminator(rng, c)
        self.d_b = Discriminator(rng, c)

    def decoder(self, domain: DomainId) -> Decoder:
        return self.de_a if DomainId(domain) is DomainId.A else self.de_b

    def discriminator(self, domain: DomainId) -> Discriminator:
        return self.d_a if DomainId(domain) is DomainId.A else self.d_b

    def generator_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith(("d_a.", "d_b."))]

    def discriminator_parameters(self):
        return self.d_a.parameters() + self.d_b.parameters()


def encode_texture(model: SittaModel, image: Tensor) -> TextureCode:
    return model.en_t(image)


def encode_content(model: SittaModel, image: Tensor) -> ContentBundle:
    return model.en_c(image)


def decode(model: SittaModel, domain: DomainId, t: TextureCode, c: ContentBundle) -> Tensor:
    return model.decoder(domain)(t, c)


def discriminate(model: SittaModel, domain: DomainId, image: Tensor) -> Tensor:
    return model.discriminator(domain)(image)


def forward_pair(model: SittaModel, i_a: Tensor, i_b: Tensor) -> dict:
    """Translations, identity reconstructions and cycle reconstructions for one pair."""
    if i_a.shape != i_b.shape:
        raise DimensionError(f"pair shapes differ: {i_a.shape} vs {i_b.shape}")
    t_a = encode_texture(model, i_a)
    t_b = encode_texture(model, i_b)
    c_a = encode_content(model, i_a)
    c_b = encode_content(model, i_b)
    i_a2b = decode(model, DomainId.B, t_b, c_a)
    i_b2a = decode(model, DomainId.A, t_a, c_b)
    i_aa = decode(model, DomainId.A, t_a, c_a)
    i_bb = decode(model, DomainId.B, t_b, c_b)
    i_aba = decode(model, DomainId.A, t_a, encode_content(model, i_a2b))
    i_bab = decode(model, DomainId.B, t_b, encode_content(model, i_b2a))
    return {
        "i_a2b": i_a2b, "i_b2a": i_b2a, "i_aa": i_aa, "i_bb": i_bb,
        "i_aba": i_aba, "i_bab": i_bab,
        "codes": {"A": t_a, "B": t_b},
        "bundles": {"A": c_a, "B": c_b},
    }
