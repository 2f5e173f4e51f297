"""Dataset augmentation workflows built on single-pair texture translation.

SingleToSingle trains one fresh model per (content, texture) pair.
SingleToMulti trains one model per texture image over every content image
and then translates the whole content set with it.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (ImageItem, ImageSet, apply_config, atomic_write_bytes, image_set_from_dir,
                   image_set_from_paths, read_config, to_tensor, write_pixels, to_pixels)
from .losses import LossWeights
from .model import DomainId
from .tensor import Tensor
from .trainer import TrainConfig, _fit, train, train_pair, translate

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("output_path", "content_path", "texture_path", "label", "seed", "mode")


class Mode(str, enum.Enum):
    SINGLE_TO_SINGLE = "SingleToSingle"
    SINGLE_TO_MULTI = "SingleToMulti"


class LabelPolicy(str, enum.Enum):
    TEXTURE_LABEL = "texture_label"
    CONTENT_LABEL = "content_label"


class AugmentError(RuntimeError):
    pass


class JobSpecError(ValueError):
    """Malformed job file: missing key or invalid enum value."""


@dataclass
class AugJob:
    content_set: ImageSet
    texture_set: ImageSet
    mode: Mode
    label_policy: LabelPolicy
    train_cfg: TrainConfig
    output_dir: Path

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.label_policy = LabelPolicy(self.label_policy)
        self.output_dir = Path(self.output_dir)
        if len(self.content_set) == 0:
            raise ValueError("content set is empty")
        if len(self.texture_set) == 0:
            raise ValueError("texture set is empty")


@dataclass
class AugResult:
    images: ImageSet
    rows: list[dict] = field(default_factory=list)
    models_trained: int = 0
    skipped: list[str] = field(default_factory=list)


def output_name(content_path: str, texture_path: str, seed: int) -> str:
    return f"{Path(content_path).stem}__x__{Path(texture_path).stem}__{seed}.png"


def _label(policy: LabelPolicy, content: ImageItem, texture: ImageItem) -> str:
    return texture.label if policy is LabelPolicy.TEXTURE_LABEL else content.label


def _try_load(item: ImageItem, skipped: list[str]) -> Tensor | None:
    try:
        return to_tensor(item.load())
    except (OSError, ValueError) as exc:
        log.warning("skipping unreadable image %s: %s", item.path, exc)
        skipped.append(item.path)
        return None


def _emit(job: AugJob, result: AugResult, model, content: ImageItem, c_img: Tensor,
          texture: ImageItem, t_img: Tensor):
    side = job.train_cfg.image_side
    out = translate(model, _fit(c_img, side), _fit(t_img, side), DomainId.B)
    path = job.output_dir / output_name(content.path, texture.path, job.train_cfg.seed)
    write_pixels(to_pixels(out), path)
    label = _label(job.label_policy, content, texture)
    result.images.items.append(ImageItem(str(path), label))
    result.rows.append({"output_path": str(path), "content_path": content.path,
                        "texture_path": texture.path, "label": label,
                        "seed": job.train_cfg.seed, "mode": job.mode.value})


def augment_single_to_single(job: AugJob) -> AugResult:
    if job.mode is not Mode.SINGLE_TO_SINGLE:
        raise ValueError(f"job mode is {job.mode.value}, expected SingleToSingle")
    result = AugResult(ImageSet([], "aug"))
    contents = [(c, _try_load(c, result.skipped)) for c in job.content_set]
    textures = [(t, _try_load(t, result.skipped)) for t in job.texture_set]
    try:
        for content, c_img in contents:
            if c_img is None:
                continue
            for texture, t_img in textures:
                if t_img is None:
                    continue
                # every pair starts from a fresh initialization
                model, _ = train_pair(c_img, t_img, job.train_cfg)
                result.models_trained += 1
                _emit(job, result, model, content, c_img, texture, t_img)
    finally:
        write_manifest(result.rows, job.output_dir / "manifest.csv")
    _finish(result)
    return result


def augment_single_to_multi(job: AugJob) -> AugResult:
    if job.mode is not Mode.SINGLE_TO_MULTI:
        raise ValueError(f"job mode is {job.mode.value}, expected SingleToMulti")
    result = AugResult(ImageSet([], "aug"))
    contents = [(c, img) for c in job.content_set
                if (img := _try_load(c, result.skipped)) is not None]
    try:
        for texture in job.texture_set:
            t_img = _try_load(texture, result.skipped)
            if t_img is None or not contents:
                continue
            model, _ = train([img for _, img in contents], t_img, job.train_cfg)
            result.models_trained += 1
            for content, c_img in contents:
                _emit(job, result, model, content, c_img, texture, t_img)
    finally:
        write_manifest(result.rows, job.output_dir / "manifest.csv")
    _finish(result)
    return result


def _finish(result: AugResult):
    if not result.rows:
        raise AugmentError("augmentation produced no outputs")


def run_job(job: AugJob) -> AugResult:
    if job.mode is Mode.SINGLE_TO_SINGLE:
        return augment_single_to_single(job)
    return augment_single_to_multi(job)


def manifest_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_manifest(rows: Sequence[dict], path):
    atomic_write_bytes(Path(path), manifest_csv(rows).encode())


# ------------------------------------------------------------------ few-shot and repeat


def fewshot_within_class_augment(class_images: Sequence, k: int, cfg: TrainConfig,
                                 label: str | None = None) -> list[tuple[Tensor, str]]:
    """Each image lends its texture to ``k`` other images of the same class.

    Content partners are the next ``k`` images in cyclic order. Returns
    (image, label) pairs; the originals are not included.
    """
    n = len(class_images)
    if k < 0:
        raise ValueError("k must be non-negative")
    if n < 2:
        log.warning("class %s has %d image(s); skipping within-class augmentation", label, n)
        return []
    if k > n - 1:
        raise ValueError(f"k={k} exceeds the {n - 1} available partners")
    images = [im if isinstance(im, Tensor) else to_tensor(np.asarray(im)) for im in class_images]
    out = []
    for i, texture in enumerate(images):
        for j in range(1, k + 1):
            content = images[(i + j) % n]
            model, _ = train_pair(content, texture, cfg)
            side = cfg.image_side
            out.append((translate(model, _fit(content, side), _fit(texture, side)), label))
    return out


def repeat_baseline(image_set: ImageSet, target_count: int) -> ImageSet:
    """Cyclic oversampling to exactly ``target_count`` items."""
    n = len(image_set)
    if n == 0:
        raise ValueError("cannot repeat an empty set")
    if target_count < n:
        raise ValueError(f"target_count {target_count} is below the set size {n}")
    return ImageSet([image_set.items[i % n] for i in range(target_count)], image_set.domain_tag)


# ------------------------------------------------------------------ job files

# Job file keys (flat key = value):
#   content_dir, texture_dir          directories of .png/.ppm images
#   content_label, texture_label      optional label overrides (default: directory name)
#   mode                              SingleToSingle | SingleToMulti
#   label_policy                      texture_label | content_label
#   output_dir                        where images and manifest.csv go
#   any TrainConfig or LossWeights field, e.g. iters = 200, lambda_idt = 10


def job_from_config(values: dict, base: Path | None = None, seed: int | None = None) -> AugJob:
    for key in ("content_dir", "texture_dir", "mode", "label_policy", "output_dir"):
        if key not in values:
            raise JobSpecError(f"job file is missing required key {key!r}")
    base = base or Path(".")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        mode = Mode(values["mode"])
    except ValueError:
        raise JobSpecError(f"invalid mode {values['mode']!r}; expected one of "
                         f"{[m.value for m in Mode]}") from None
    try:
        policy = LabelPolicy(values["label_policy"])
    except ValueError:
        raise JobSpecError(f"invalid label_policy {values['label_policy']!r}") from None
    cfg = apply_config(TrainConfig(), values)
    if seed is not None:
        cfg = apply_config(cfg, {"seed": seed})
    cfg.weights = apply_config(LossWeights(), values)
    content = image_set_from_dir(resolve(values["content_dir"]), values.get("content_label"))
    texture = image_set_from_dir(resolve(values["texture_dir"]), values.get("texture_label"))
    return AugJob(content, texture, mode, policy, cfg, resolve(values["output_dir"]))


def read_job(path, seed: int | None = None) -> AugJob:
    path = Path(path)
    return job_from_config(read_config(path), path.parent, seed)


__all__ = ["Mode", "LabelPolicy", "AugJob", "AugResult", "AugmentError", "JobSpecError", "augment_single_to_single",
           "augment_single_to_multi", "run_job", "fewshot_within_class_augment", "repeat_baseline",
           "output_name", "write_manifest", "read_job", "job_from_config", "image_set_from_paths"]
