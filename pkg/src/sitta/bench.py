"""Desk-scale long-tail classification harness: Baseline vs Repeat vs translated minority data.

A tiny conv classifier is trained on an imbalanced synthetic two-class set
(many majority images, one minority image) under several train-set
compositions and scored on a balanced held-out set.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .augmentor import repeat_baseline
from .data import ImageItem, ImageSet, SyntheticSpec, atomic_write_bytes, make_synthetic_set, to_tensor
from .model import DomainId
from .tensor import Rng, Tensor
from .trainer import TrainConfig, augment_input, train, translate

log = logging.getLogger(__name__)

COMPOSITIONS = ("baseline", "repeat", "sitta", "sitta_plus_repeat")


class ProtocolError(ValueError):
    pass


@dataclass
class ClassifierSpec:
    widths: tuple[int, ...] = (16, 32, 64)
    epochs: int = 15
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    augment: bool = True


@dataclass
class BenchProtocol:
    compositions: tuple[str, ...] = COMPOSITIONS
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    seeds: tuple[int, ...] = (0, 1, 2)
    n_major: int = 64
    n_minor: int = 1
    n_test: int = 40  # per class
    side: int = 64
    major_texture: str = "stripes"
    minor_texture: str = "dots"
    shape: str = "leaf"
    translator_iters: int = 800

    def __post_init__(self):
        bad = [c for c in self.compositions if c not in COMPOSITIONS]
        if bad:
            raise ProtocolError(f"unknown composition(s) {bad}")
        if not self.seeds:
            raise ProtocolError("need at least one seed")


# ------------------------------------------------------------------ classifier


class Classifier:
    """Three stride-2 conv blocks, global average pooling and a linear head."""

    def __init__(self, spec: ClassifierSpec, n_classes: int, seed: int):
        rng = Rng(seed)
        self.spec = spec
        self.convs = []
        cin = 3
        for w in spec.widths:
            std = math.sqrt(2.0 / (cin * 9))
            self.convs.append((T.parameter(rng.normal((w, cin, 3, 3), std)),
                               T.parameter(np.zeros(w, dtype=T.default_dtype()))))
            cin = w
        self.head_w = T.parameter(rng.normal((n_classes, cin, 1, 1), math.sqrt(1.0 / cin)))
        self.head_b = T.parameter(np.zeros(n_classes, dtype=T.default_dtype()))

    def parameters(self) -> list[Tensor]:
        return [p for pair in self.convs for p in pair] + [self.head_w, self.head_b]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for w, b in self.convs:
            h = T.relu(T.conv2d(h, w, b, stride=2, padding=1, pad_mode="zeros"))
        logits = T.conv2d(T.global_avg_pool(h), self.head_w, self.head_b)
        return T.reshape(logits, (x.shape[0], -1))

    def predict(self, images: np.ndarray, batch: int = 64) -> np.ndarray:
        out = []
        with T.no_grad():
            for i in range(0, len(images), batch):
                out.append(self(Tensor(images[i:i + batch])).data.argmax(axis=1))
        return np.concatenate(out)


def cosine_lr(base: float, step: int, total: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * step / max(total, 1)))


def _stack(images: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([im.reshape(1, *im.shape[-3:]) for im in images]).astype(T.default_dtype())


def train_classifier(spec: ClassifierSpec, images: Sequence[np.ndarray], labels: Sequence[int],
                     seed: int, n_classes: int | None = None):
    """SGD with momentum and a cosine schedule. Returns (classifier, per-epoch mean loss)."""
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = n_classes or int(labels.max()) + 1
    counts = np.bincount(labels, minlength=n_classes)
    if len(labels) == 0 or (counts == 0).any():
        raise ProtocolError(f"every class needs at least one training example, counts {counts.tolist()}")
    data = _stack(images)
    side = data.shape[-1]
    rng = Rng(seed)
    model = Classifier(spec, n_classes, seed)
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    steps_per_epoch = math.ceil(len(data) / spec.batch_size)
    total = spec.epochs * steps_per_epoch
    step = 0
    epoch_losses = []
    for _ in range(spec.epochs):
        order = rng.permutation(len(data))
        losses = []
        for i in range(0, len(order), spec.batch_size):
            idx = order[i:i + spec.batch_size]
            if spec.augment:
                batch = np.concatenate([augment_input(Tensor(data[j:j + 1]), rng, side).data for j in idx])
            else:
                batch = data[idx]
            for p in params:
                p.grad = None
            loss = T.cross_entropy(model(Tensor(batch)), labels[idx])
            loss.backward()
            lr = cosine_lr(spec.lr, step, total)
            for k, p in enumerate(params):
                g = p.grad + spec.weight_decay * p.data
                velocity[k] = spec.momentum * velocity[k] + g
                p.data = (p.data - lr * velocity[k]).astype(p.data.dtype)
            losses.append(loss.item())
            step += 1
        epoch_losses.append(float(np.mean(losses)))
    return model, epoch_losses


def accuracy(model: Classifier, images: Sequence[np.ndarray], labels: Sequence[int]) -> float:
    pred = model.predict(_stack(images))
    return float((pred == np.asarray(labels)).mean())


# ------------------------------------------------------------------ protocol data


@dataclass
class BenchData:
    major: list[np.ndarray]
    minor: list[np.ndarray]
    test_images: list[np.ndarray]
    test_labels: list[int]
    train_paths: set[str] = field(default_factory=set)
    test_paths: set[str] = field(default_factory=set)


def make_bench_data(protocol: BenchProtocol, seed: int) -> BenchData:
    """Synthetic majority/minority classes; test images come from a disjoint index range."""
    spec = lambda tex, n: SyntheticSpec(tex, protocol.shape, protocol.side, n, seed)
    major = make_synthetic_set(spec(protocol.major_texture, protocol.n_major), "major")
    minor = make_synthetic_set(spec(protocol.minor_texture, protocol.n_minor), "minor")
    offset = 100_000
    test_major = make_synthetic_set(spec(protocol.major_texture, protocol.n_test), "major", offset)
    test_minor = make_synthetic_set(spec(protocol.minor_texture, protocol.n_test), "minor", offset)
    train_paths = {i.path for i in major} | {i.path for i in minor}
    test_paths = {i.path for i in test_major} | {i.path for i in test_minor}
    if train_paths & test_paths:
        raise ProtocolError("train and test sets overlap")
    px = lambda s: [to_tensor(i.load()).data for i in s]
    return BenchData(px(major), px(minor), px(test_major) + px(test_minor),
                     [0] * protocol.n_test + [1] * protocol.n_test, train_paths, test_paths)


def translate_minority(data: BenchData, protocol: BenchProtocol, seed: int) -> list[np.ndarray]:
    """Render every majority image with the minority texture using one trained model."""
    cfg = TrainConfig(iters=protocol.translator_iters, image_side=protocol.side, seed=seed, log_every=0)
    contents = [Tensor(im) for im in data.major]
    out = []
    for tex in data.minor:
        model, _ = train(contents, Tensor(tex), cfg)
        out.extend(translate(model, c, Tensor(tex), DomainId.B).data for c in contents)
    return out


def composition(name: str, data: BenchData, synth: list[np.ndarray] | None):
    """Return (images, labels) for one train-set composition; label 1 is the minority."""
    major, minor = list(data.major), list(data.minor)
    if name in ("repeat", "sitta_plus_repeat"):
        items = ImageSet([ImageItem(str(i), "minor") for i in range(len(minor))])
        minor = [minor[int(it.path)] for it in repeat_baseline(items, len(major))]
    if name in ("sitta", "sitta_plus_repeat"):
        if synth is None:
            raise ProtocolError(f"composition {name!r} needs translated images")
        minor = minor + list(synth)
    return major + minor, [0] * len(major) + [1] * len(minor)


@dataclass
class BenchResult:
    rows: list[dict]

    def mean(self, comp: str) -> float:
        return float(np.mean([r["accuracy"] for r in self.rows if r["composition"] == comp]))

    def means(self) -> dict[str, float]:
        comps = dict.fromkeys(r["composition"] for r in self.rows)
        return {c: self.mean(c) for c in comps}

    def csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=("composition", "seed", "accuracy"), lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({**r, "accuracy": f"{r['accuracy']:.6f}"})
        for comp, value in self.means().items():
            writer.writerow({"composition": comp, "seed": "mean", "accuracy": f"{value:.6f}"})
        return buf.getvalue()

    def write(self, path):
        atomic_write_bytes(Path(path), self.csv().encode())


def run_bench(protocol: BenchProtocol) -> BenchResult:
    rows = []
    needs_synth = any(c.startswith("sitta") for c in protocol.compositions)
    for seed in protocol.seeds:
        data = make_bench_data(protocol, seed)
        synth = translate_minority(data, protocol, seed) if needs_synth else None
        for comp in protocol.compositions:
            images, labels = composition(comp, data, synth)
            model, _ = train_classifier(protocol.classifier, images, labels, seed, n_classes=2)
            acc = accuracy(model, data.test_images, data.test_labels)
            log.info("seed %d %s accuracy %.4f", seed, comp, acc)
            rows.append({"composition": comp, "seed": seed, "accuracy": acc})
    return BenchResult(rows)
