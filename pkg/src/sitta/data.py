"""Image codecs, synthetic texture domains, checkpoints and flat config files."""
from __future__ import annotations

import dataclasses
import io
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Rng, Tensor

# ------------------------------------------------------------------ atomic writes


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------------ images


def to_tensor(pixels: np.ndarray) -> Tensor:
    """uint8 HxWx3 -> float (1, 3, H, W) in [-1, 1]."""
    arr = pixels.astype(np.float32).transpose(2, 0, 1)[None]
    return Tensor(arr / 127.5 - 1.0)


def to_pixels(t: Tensor | np.ndarray) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) float in [-1, 1] -> uint8 HxWx3 (clamped)."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError("to_pixels expects a single image")
        arr = arr[0]
    arr = np.clip(arr.astype(np.float64), -1.0, 1.0)
    return np.rint((arr + 1.0) * 127.5).astype(np.uint8).transpose(1, 2, 0)


def _read_ppm(raw: bytes, path) -> np.ndarray:
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise OSError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise OSError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise OSError(f"{path}: unsupported PPM bit depth (maxval {maxval})")
    body = raw[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise OSError(f"{path}: truncated PPM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def read_pixels(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    if raw[:2] == b"P6":
        return _read_ppm(raw, path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        try:
            with Image.open(io.BytesIO(raw)) as img:
                img.load()
                if img.mode not in ("RGB", "RGBA", "L", "LA", "P"):
                    raise OSError(f"{path}: unsupported PNG mode {img.mode}")
                return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
        except (OSError, SyntaxError, ValueError) as exc:
            raise OSError(f"{path}: cannot decode PNG ({exc})") from exc
    raise OSError(f"{path}: unsupported image format")


def encode_pixels(pixels: np.ndarray, suffix: str) -> bytes:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if suffix.lower() == ".ppm":
        h, w, _ = pixels.shape
        return f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes()
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_pixels(pixels: np.ndarray, path):
    atomic_write_bytes(path, encode_pixels(pixels, Path(path).suffix))


def load_image(path) -> Tensor:
    return to_tensor(read_pixels(path))


def save_image(t: Tensor, path):
    write_pixels(to_pixels(t), path)


# ------------------------------------------------------------------ image sets


@dataclass
class ImageItem:
    path: str
    label: str
    pixels: np.ndarray | None = field(default=None, repr=False, compare=False)

    def load(self) -> np.ndarray:
        return self.pixels if self.pixels is not None else read_pixels(self.path)


@dataclass
class ImageSet:
    items: list[ImageItem]
    domain_tag: str = ""

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def write(self, directory) -> "ImageSet":
        """Save in-memory items as PNG files under ``directory``; returns the on-disk set."""
        directory = Path(directory)
        out = []
        for item in self.items:
            path = directory / Path(item.path).name
            write_pixels(item.load(), path)
            out.append(ImageItem(str(path), item.label))
        return ImageSet(out, self.domain_tag)


def image_set_from_paths(paths, label: str, domain_tag: str = "") -> ImageSet:
    return ImageSet([ImageItem(str(p), label) for p in paths], domain_tag or label)


def image_set_from_dir(directory, label: str | None = None) -> ImageSet:
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".ppm"))
    label = label or directory.name
    return image_set_from_paths(paths, label, label)


# ------------------------------------------------------------------ synthetic domains

TEXTURE_KINDS = ("stripes", "dots", "checker", "noise")
SHAPE_KINDS = ("disc", "blob", "leaf")

# two-color palettes per texture kind (foreground, accent)
_PALETTES = {
    "stripes": ((40, 150, 60), (220, 210, 60)),
    "dots": ((170, 60, 40), (240, 200, 170)),
    "checker": ((50, 70, 170), (200, 200, 230)),
    "noise": ((120, 90, 50), (220, 170, 90)),
}
_BACKGROUND = (128, 128, 128)


@dataclass
class SyntheticSpec:
    texture: str = "stripes"
    shape: str = "disc"
    side: int = 64
    count: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.texture not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.texture!r}")
        if self.shape not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.shape!r}")


def _shape_mask(kind: str, side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side
    cy, cx = rng.uniform(0.35, 0.65, size=2)
    r = rng.uniform(0.22, 0.34)
    if kind == "disc":
        return (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
    ang = np.arctan2(yy - cy, xx - cx)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    if kind == "blob":
        amps = rng.uniform(0.05, 0.18, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        rad = r * (1 + sum(a * np.sin((k + 2) * ang + p) for k, (a, p) in enumerate(zip(amps, phases))))
        return dist < rad
    # leaf: pointed ellipse, rotated
    theta = rng.uniform(0, np.pi)
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    half = r * 1.3
    width = r * 0.6 * np.clip(1 - (u / half) ** 2, 0, None) ** 0.7
    return (np.abs(u) < half) & (np.abs(v) < width)


def _texture(kind: str, side: int, rng: np.random.Generator) -> np.ndarray:
    """Return a [0, 1] mixing field between the palette's two colors."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    if kind == "stripes":
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(5.0, 9.0) * side / 64
        phase = rng.uniform(0, 2 * np.pi)
        s = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        return (s > 0).astype(np.float64)
    if kind == "dots":
        spacing = rng.uniform(7.0, 10.0) * side / 64
        rad = spacing * rng.uniform(0.25, 0.35)
        oy, ox = rng.uniform(0, spacing, size=2)
        dy = (yy + oy) % spacing - spacing / 2
        dx = (xx + ox) % spacing - spacing / 2
        return (dy * dy + dx * dx < rad * rad).astype(np.float64)
    if kind == "checker":
        cell = rng.uniform(5.0, 9.0) * side / 64
        oy, ox = rng.uniform(0, cell, size=2)
        return ((np.floor((yy + oy) / cell) + np.floor((xx + ox) / cell)) % 2).astype(np.float64)
    # value noise: bilinear interpolation of a coarse random grid
    cells = int(rng.integers(4, 8))
    grid = rng.uniform(0, 1, size=(cells + 1, cells + 1))
    gy, gx = yy / side * cells, xx / side * cells
    iy, ix = np.floor(gy).astype(int), np.floor(gx).astype(int)
    fy, fx = gy - iy, gx - ix
    fy, fx = fy * fy * (3 - 2 * fy), fx * fx * (3 - 2 * fx)
    top = grid[iy, ix] * (1 - fx) + grid[iy, ix + 1] * fx
    bot = grid[iy + 1, ix] * (1 - fx) + grid[iy + 1, ix + 1] * fx
    return top * (1 - fy) + bot * fy


def render_synthetic(texture: str, shape: str, side: int, rng: np.random.Generator) -> np.ndarray:
    mask = _shape_mask(shape, side, rng)
    mix = _texture(texture, side, rng)[..., None]
    fg, accent = (np.array(c, dtype=np.float64) for c in _PALETTES[texture])
    jitter = rng.uniform(-12, 12, size=3)
    fill = fg * (1 - mix) + accent * mix + jitter
    img = np.empty((side, side, 3), dtype=np.float64)
    img[:] = _BACKGROUND
    img[mask] = fill[mask]
    img += rng.normal(0, 2.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_synthetic_set(spec: SyntheticSpec, tag: str | None = None, offset: int = 0) -> ImageSet:
    tag = tag or spec.texture
    items = []
    for i in range(spec.count):
        # one independent stream per image so subsets are stable
        rng = np.random.default_rng([spec.seed, _kind_id(spec.texture), offset + i])
        px = render_synthetic(spec.texture, spec.shape, spec.side, rng)
        items.append(ImageItem(f"{tag}_{offset + i:04d}.png", tag, px))
    return ImageSet(items, tag)


def _kind_id(kind: str) -> int:
    return TEXTURE_KINDS.index(kind)


def make_synthetic_domain_pair(spec_a: SyntheticSpec, spec_b: SyntheticSpec,
                               tag_a: str | None = None, tag_b: str | None = None):
    if spec_a.shape != spec_b.shape or spec_a.side != spec_b.side:
        raise ValueError("domain specs must share shape kind and side")
    return make_synthetic_set(spec_a, tag_a), make_synthetic_set(spec_b, tag_b)


# ------------------------------------------------------------------ checkpoints

MAGIC = b"SITT"
VERSION = 1


class CheckpointError(OSError):
    pass


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def checkpoint_bytes(model) -> bytes:
    hyper = model.cfg.to_dict()
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<H", len(hyper))]
    for k, v in hyper.items():
        out.append(_pack_str(k) + struct.pack("<q", int(v)))
    named = list(model.named_parameters())
    out.append(struct.pack("<I", len(named)))
    for name, p in named:
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        out.append(_pack_str(name))
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(model, path):
    atomic_write_bytes(path, checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def load_checkpoint(path):
    from .model import ModelConfig, SittaModel

    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 2 + 4:
        raise CheckpointError(f"{path}: not a checkpoint (too short)")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: CRC mismatch")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (nh,) = r.unpack("<H")
    hyper = {}
    for _ in range(nh):
        k = r.string()
        (hyper[k],) = r.unpack("<q")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    model = SittaModel(ModelConfig(**{k: v for k, v in hyper.items() if k in known}))
    params = dict(model.named_parameters())
    (n,) = r.unpack("<I")
    if n != len(params):
        raise CheckpointError(f"{path}: expected {len(params)} parameter blocks, found {n}")
    for _ in range(n):
        name = r.string()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        if name not in params or params[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: unexpected parameter block {name} {shape}")
        params[name].data = arr.astype(np.float32)
    return model


# ------------------------------------------------------------------ flat config files


def parse_config(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _coerce(value: str, typ):
    typ = _TYPES.get(typ, typ) if isinstance(typ, str) else typ
    if typ is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return typ(value)


def apply_config(obj, values: dict):
    """Return a copy of dataclass ``obj`` with matching keys from ``values`` applied."""
    kwargs = {}
    for f in dataclasses.fields(obj):
        if f.name in values:
            kwargs[f.name] = _coerce(str(values[f.name]), f.type)
    return dataclasses.replace(obj, **kwargs)
