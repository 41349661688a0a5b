"""Image decoding, preprocessing, augmentation, manifests, and the 80/20 split.

Images flow through the pipeline as [3, h, w] float tensors: raw decode
yields values in [0, 255], intensity rescaling (x 1/255) brings them to
[0, 1], and every augmented output stays in [0, 1].

The P6 (binary PPM, maxval 255) codec is implemented here; PNG and JPEG
decoding is delegated to Pillow.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DecodeError, UnsupportedFormatError, ValidationError
from .fileio import atomic_write_text
from .tensor import SINGLE, Tensor

DEFAULT_CLASS_LABELS = ("leaf_blast", "brown_spot", "hispa")
DEFAULT_IMAGE_SIZE = (500, 500)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm")

TRAIN = "train"
VAL = "val"


@dataclass
class ManifestRecord:
    path: str
    label: str
    split: str | None = None


class DatasetManifest:
    """Image records with labels, an ordered class vocabulary, and split tags."""

    def __init__(self, records, class_labels=DEFAULT_CLASS_LABELS, seed=None):
        self.class_labels = tuple(str(c) for c in class_labels)
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValidationError(f"duplicate class labels: {list(self.class_labels)}")
        self.records = list(records)
        for r in self.records:
            if r.label not in self.class_labels:
                raise ValidationError(
                    f"record {r.path!r} has label {r.label!r} not in vocabulary "
                    f"{list(self.class_labels)}"
                )
            if r.split not in (None, TRAIN, VAL):
                raise ValidationError(f"record {r.path!r} has invalid split tag {r.split!r}")
        self.seed = seed

    def __len__(self):
        return len(self.records)

    def label_index(self, label) -> int:
        return self.class_labels.index(label)

    def counts(self) -> dict:
        out = {c: 0 for c in self.class_labels}
        for r in self.records:
            out[r.label] += 1
        return out

    def split_records(self, split):
        return [r for r in self.records if r.split == split]

    def to_tsv(self) -> str:
        lines = []
        for r in self.records:
            fields = [r.path, r.label] + ([r.split] if r.split else [])
            lines.append("\t".join(fields))
        return "\n".join(lines) + "\n" if lines else ""

    def save(self, path):
        """Write the TSV manifest plus the ordered-vocabulary sidecar file."""
        path = str(path)
        atomic_write_text(path, self.to_tsv())
        atomic_write_text(sidecar_path(path), "".join(c + "\n" for c in self.class_labels))

    @classmethod
    def load(cls, path, class_labels=None):
        path = str(path)
        records = []
        with open(path, "r", encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) not in (2, 3):
                    raise ValidationError(f"{path}:{ln}: expected 2 or 3 tab-separated fields")
                split = fields[2] if len(fields) == 3 else None
                records.append(ManifestRecord(fields[0], fields[1], split))
        if class_labels is None:
            side = sidecar_path(path)
            if os.path.exists(side):
                with open(side, "r", encoding="utf-8") as f:
                    class_labels = tuple(line.strip() for line in f if line.strip())
            else:
                found = {r.label for r in records}
                if found <= set(DEFAULT_CLASS_LABELS):
                    class_labels = tuple(c for c in DEFAULT_CLASS_LABELS if c in found)
                else:
                    class_labels = tuple(sorted(found))
        return cls(records, class_labels)


def sidecar_path(manifest_path: str) -> str:
    base, _ = os.path.splitext(str(manifest_path))
    return base + ".labels"


@dataclass
class AugmentSpec:
    """Which augmentations to draw: horizontal flip (p=0.5 when on) and a
    shear with factor uniform in [-shear_range, shear_range]."""

    horizontal_flip: bool = True
    shear: bool = True
    shear_range: float = 0.2

    def __post_init__(self):
        if not math.isfinite(self.shear_range) or self.shear_range < 0:
            raise ConfigError(f"shear_range must be a finite non-negative number, got {self.shear_range}")


# ── decoding ───────────────────────────────────────────────────────────

_HINTS = {
    "ppm": "ppm",
    "image/x-portable-pixmap": "ppm",
    "png": "png",
    "image/png": "png",
    "jpg": "jpeg",
    "jpeg": "jpeg",
    "image/jpeg": "jpeg",
}


def _sniff_format(data: bytes) -> str | None:
    if data.startswith(b"P6"):
        return "ppm"
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return "png"
    if data.startswith(b"\xff\xd8"):
        return "jpeg"
    return None


def decode_image(data: bytes, format_hint: str | None = None) -> Tensor:
    """Decode bytes to a raw [3, h, w] float32 tensor with values in [0, 255]."""
    if not data:
        raise DecodeError("empty byte stream", offset=0)
    fmt = _HINTS.get(format_hint.lower()) if format_hint else None
    if fmt is None:
        fmt = _sniff_format(data)
    if fmt is None:
        raise UnsupportedFormatError(
            f"unrecognised image format (leading bytes {data[:4]!r})", offset=0
        )
    if fmt == "ppm":
        return _decode_p6(data)
    try:
        with Image.open(io.BytesIO(data)) as im:
            rgb = im.convert("RGB")
            a = np.asarray(rgb, dtype=np.float32)  # [h, w, 3]
    except UnidentifiedImageError as e:
        raise DecodeError(f"undecodable {fmt} stream: {e}", offset=0) from None
    except OSError as e:
        raise DecodeError(f"truncated or invalid {fmt} stream: {e}", offset=len(data)) from None
    return Tensor.wrap(np.ascontiguousarray(a.transpose(2, 0, 1)))


def _decode_p6(data: bytes) -> Tensor:
    pos = 0

    def skip_space():
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":  # comment runs to end of line
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                return

    def read_int(what):
        nonlocal pos
        skip_space()
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise DecodeError(f"expected {what} in P6 header", offset=start)
        return int(data[start:pos])

    if data[:2] != b"P6":
        raise DecodeError("not a P6 stream", offset=0)
    pos = 2
    width = read_int("width")
    height = read_int("height")
    maxval = read_int("maxval")
    if width < 1 or height < 1:
        raise DecodeError(f"invalid P6 dimensions {width}x{height}", offset=pos)
    if maxval != 255:
        raise UnsupportedFormatError(f"P6 maxval {maxval} unsupported (only 255)", offset=pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError("expected single whitespace after P6 maxval", offset=pos)
    pos += 1
    need = width * height * 3
    pixels = data[pos : pos + need]
    if len(pixels) < need:
        raise DecodeError(
            f"P6 pixel data truncated: need {need} bytes, have {len(pixels)}",
            offset=len(data),
        )
    a = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    return Tensor.wrap(np.ascontiguousarray(a.transpose(2, 0, 1)).astype(np.float32))


def encode_ppm(img: Tensor) -> bytes:
    """Serialise a [3, h, w] image in [0, 1] as a binary P6 (maxval 255) file."""
    if len(img.shape) != 3 or img.shape[0] != 3:
        raise ValidationError(f"P6 writer needs a [3, h, w] image, got {list(img.shape)}")
    _, h, w = img.shape
    quant = np.clip(np.rint(img.array * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + quant.transpose(1, 2, 0).tobytes()


# ── preprocessing ──────────────────────────────────────────────────────

def rescale_intensity(img: Tensor) -> Tensor:
    """Map raw [0, 255] values to [0, 1] (the 'rescaling' step)."""
    return Tensor.wrap(img.array * img.dtype.type(1.0 / 255.0))


def resize(img: Tensor, target_h: int, target_w: int) -> Tensor:
    """Bilinear resample to (target_h, target_w) with edge clamping.

    Plain resample: aspect ratio is not preserved. Constant images come
    out exactly constant (the lerp form keeps a + f*(b-a) == a when b == a).
    """
    if target_h < 1 or target_w < 1:
        raise ConfigError(f"resize target must be positive, got {target_h}x{target_w}")
    if len(img.shape) != 3:
        raise ValidationError(f"resize needs a [ch, h, w] image, got {list(img.shape)}")
    a = img.array
    c, h, w = a.shape
    if h == target_h and w == target_w:
        return img
    dt = a.dtype

    ys = (np.arange(target_h, dtype=np.float64) + 0.5) * (h / target_h) - 0.5
    xs = (np.arange(target_w, dtype=np.float64) + 0.5) * (w / target_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = np.clip(ys - y0, 0.0, 1.0).astype(dt)
    fx = np.clip(xs - x0, 0.0, 1.0).astype(dt)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    ia = a[:, y0c[:, None], x0c[None, :]]
    ib = a[:, y0c[:, None], x1c[None, :]]
    ic = a[:, y1c[:, None], x0c[None, :]]
    idd = a[:, y1c[:, None], x1c[None, :]]
    fxr = fx[None, None, :]
    fyr = fy[None, :, None]
    top = ia + fxr * (ib - ia)
    bottom = ic + fxr * (idd - ic)
    return Tensor.wrap(top + fyr * (bottom - top))


def preprocess(raw: Tensor, size=DEFAULT_IMAGE_SIZE) -> Tensor:
    """Raw decode ([0,255]) -> intensity rescale -> resize to (h, w)."""
    return resize(rescale_intensity(raw), size[0], size[1])


# ── augmentation ───────────────────────────────────────────────────────

def flip_horizontal(img: Tensor) -> Tensor:
    return Tensor.wrap(np.ascontiguousarray(img.array[:, :, ::-1]))


def shear_x(img: Tensor, factor: float) -> Tensor:
    """Horizontal shear: output(y, x) samples input(y, x - factor*y), so
    row y's content shifts by factor*y pixels. Bilinear, zero outside."""
    a = img.array
    c, h, w = a.shape
    dt = a.dtype
    out = np.empty_like(a)
    xs = np.arange(w, dtype=np.float64)
    for y in range(h):
        src = xs - factor * y
        x0 = np.floor(src).astype(np.int64)
        f = (src - x0).astype(dt)
        x1 = x0 + 1
        in0 = (x0 >= 0) & (x0 < w)
        in1 = (x1 >= 0) & (x1 < w)
        v0 = np.where(in0, a[:, y, np.clip(x0, 0, w - 1)], dt.type(0))
        v1 = np.where(in1, a[:, y, np.clip(x1, 0, w - 1)], dt.type(0))
        out[:, y, :] = v0 + f * (v1 - v0)
    return Tensor.wrap(out)


def augment(img: Tensor, spec: AugmentSpec, rng: np.random.Generator) -> Tensor:
    """Seeded augmentation draw: optional flip, then optional shear.

    Output has the source shape and values clipped to [0, 1].
    """
    out = img
    if spec.horizontal_flip and rng.random() < 0.5:
        out = flip_horizontal(out)
    if spec.shear:
        s = rng.uniform(-spec.shear_range, spec.shear_range)
        out = shear_x(out, s)
    return Tensor.wrap(np.clip(out.array, 0.0, 1.0))


# ── split ──────────────────────────────────────────────────────────────

def split_dataset(manifest: DatasetManifest, train_fraction=0.8, seed=0) -> DatasetManifest:
    """Stratified deterministic split: per class, floor(train_fraction * n)
    records go to train after a seeded shuffle, the rest to val."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    tags = [None] * len(manifest.records)
    for label in manifest.class_labels:
        idx = [i for i, r in enumerate(manifest.records) if r.label == label]
        if not idx:
            raise ConfigError(f"class {label!r} has no records; cannot split")
        idx = np.array(idx)
        rng.shuffle(idx)
        n_train = int(math.floor(train_fraction * len(idx)))
        for j, i in enumerate(idx):
            tags[i] = TRAIN if j < n_train else VAL
    records = [
        ManifestRecord(r.path, r.label, tags[i]) for i, r in enumerate(manifest.records)
    ]
    return DatasetManifest(records, manifest.class_labels, seed=seed)


# ── directory scan ─────────────────────────────────────────────────────

def scan_directory(data_dir, expected_labels=None):
    """Build a manifest from a directory-per-class tree.

    Returns (manifest, skipped_count, warnings). Paths are stored relative
    to data_dir. Non-image files are skipped and counted.
    """
    data_dir = str(data_dir)
    if not os.path.isdir(data_dir):
        raise ConfigError(f"not a directory: {data_dir}")
    class_dirs = sorted(
        d for d in os.listdir(data_dir) if os.path.isdir(os.path.join(data_dir, d))
    )
    found = {}
    skipped = 0
    for d in class_dirs:
        label = d.strip().lower().replace(" ", "_").replace("-", "_")
        files = []
        for name in sorted(os.listdir(os.path.join(data_dir, d))):
            full = os.path.join(data_dir, d, name)
            if not os.path.isfile(full):
                continue
            if os.path.splitext(name)[1].lower() in IMAGE_SUFFIXES:
                files.append(os.path.join(d, name))
            else:
                skipped += 1
        if files:
            found[label] = files
    if not found:
        raise ConfigError(f"no class directories with images under {data_dir}")

    warnings = []
    if expected_labels is None and set(found) <= set(DEFAULT_CLASS_LABELS):
        expected_labels = DEFAULT_CLASS_LABELS
    if expected_labels is not None:
        order = [c for c in expected_labels if c in found]
        extra = sorted(set(found) - set(expected_labels))
        order += extra
        for c in expected_labels:
            if c not in found:
                warnings.append(f"expected class {c!r} has no images")
        for c in extra:
            warnings.append(f"unexpected class directory {c!r} included")
    else:
        order = sorted(found)

    records = [
        ManifestRecord(path, label) for label in order for path in found[label]
    ]
    return DatasetManifest(records, tuple(order)), skipped, warnings


# ── batching and datasets ──────────────────────────────────────────────

def one_hot(indices, n_classes, dtype=SINGLE) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
        raise ValidationError(f"class index out of range for {n_classes} classes")
    out = np.zeros((idx.size, n_classes), dtype=dtype)
    out[np.arange(idx.size), idx] = 1
    return Tensor.wrap(out)


def _load_record(record: ManifestRecord, root, size) -> np.ndarray:
    full = os.path.join(root, record.path)
    try:
        with open(full, "rb") as f:
            data = f.read()
        raw = decode_image(data, format_hint=os.path.splitext(full)[1].lstrip("."))
    except (OSError, DecodeError) as e:
        raise DecodeError(f"cannot load {full}: {e}") from None
    return preprocess(raw, size).array


def batches(manifest, split, batch_size, *, root=".", image_size=DEFAULT_IMAGE_SIZE,
            augment_spec=None, seed=0, rng=None):
    """Seeded shuffled minibatches of (images [b,3,h,w], one-hot labels).

    The final short batch is included. Augmentation is applied only when a
    spec is passed (callers enable it for the training split only).
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    recs = manifest.split_records(split)
    if not recs:
        raise ConfigError(f"no records with split tag {split!r}")
    if rng is None:
        rng = np.random.default_rng(seed)
    order = rng.permutation(len(recs))
    n = len(manifest.class_labels)
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        imgs, labels = [], []
        for i in chunk:
            r = recs[i]
            img = _load_record(r, root, image_size)
            if augment_spec is not None:
                img = augment(Tensor.wrap(img), augment_spec, rng).array
            imgs.append(img)
            labels.append(manifest.label_index(r.label))
        yield Tensor.wrap(np.stack(imgs)), one_hot(labels, n)


class ArrayDataset:
    """In-memory dataset: images [n,3,h,w] in [0,1] plus integer labels."""

    def __init__(self, images, labels, class_labels, augment_spec=None):
        self.images = np.asarray(images, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"images {list(self.images.shape)} and labels {list(self.labels.shape)} disagree"
            )
        self.class_labels = tuple(class_labels)
        self.augment_spec = augment_spec

    def __len__(self):
        return self.images.shape[0]

    @property
    def n_classes(self):
        return len(self.class_labels)

    def _batch(self, idx, rng=None, augmented=False):
        imgs = self.images[idx]
        if augmented and self.augment_spec is not None:
            imgs = np.stack(
                [augment(Tensor.wrap(im), self.augment_spec, rng).array for im in imgs]
            )
        return Tensor.wrap(imgs), one_hot(self.labels[idx], self.n_classes)

    def epoch_batches(self, batch_size, rng, augment=False):
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield self._batch(order[start : start + batch_size], rng, augment)

    def sequential_batches(self, batch_size):
        for start in range(0, len(self), batch_size):
            yield self._batch(np.arange(start, min(start + batch_size, len(self))))


class ManifestDataset:
    """Manifest-backed dataset that decodes, rescales, and resizes on demand.

    With cache=True every preprocessed image is kept in memory after first
    load (augmentation still happens per epoch, on top of the cache).
    """

    def __init__(self, manifest, split, *, root=".", image_size=DEFAULT_IMAGE_SIZE,
                 augment_spec=None, cache=True):
        self.manifest = manifest
        self.split = split
        self.root = str(root)
        self.image_size = tuple(image_size)
        self.augment_spec = augment_spec
        self.records = manifest.split_records(split)
        if not self.records:
            raise ConfigError(f"no records with split tag {split!r}")
        self._cache = [None] * len(self.records) if cache else None

    def __len__(self):
        return len(self.records)

    @property
    def class_labels(self):
        return self.manifest.class_labels

    @property
    def n_classes(self):
        return len(self.manifest.class_labels)

    def _image(self, i) -> np.ndarray:
        if self._cache is not None and self._cache[i] is not None:
            return self._cache[i]
        img = _load_record(self.records[i], self.root, self.image_size)
        if self._cache is not None:
            self._cache[i] = img
        return img

    def _batch(self, idx, rng=None, augmented=False):
        imgs = []
        for i in idx:
            img = self._image(i)
            if augmented and self.augment_spec is not None:
                img = augment(Tensor.wrap(img), self.augment_spec, rng).array
            imgs.append(img)
        labels = [self.manifest.label_index(self.records[i].label) for i in idx]
        return Tensor.wrap(np.stack(imgs)), one_hot(labels, self.n_classes)

    def epoch_batches(self, batch_size, rng, augment=False):
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield self._batch(order[start : start + batch_size], rng, augment)

    def sequential_batches(self, batch_size):
        for start in range(0, len(self), batch_size):
            yield self._batch(range(start, min(start + batch_size, len(self))))
