"""Shared test utilities: finite-difference oracles, synthetic datasets,
and P6 fixture builders. These stay independent of the code paths they
check (pure numpy, no calls into the analytic backward passes)."""

from __future__ import annotations

import numpy as np

from riceleaf.data import ArrayDataset
from riceleaf.nn import model_forward
from riceleaf.tensor import Tensor
from riceleaf.train import categorical_cross_entropy


def rel_err(a, b, floor=1e-8):
    """Max elementwise relative error, guarded for near-zero pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    denom = np.maximum(np.abs(a), np.abs(b))
    out = np.where(denom < floor, diff, diff / np.maximum(denom, floor))
    return float(out.max()) if out.size else 0.0


def fd_grad(f, x: np.ndarray, h=1e-5) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def model_loss(model, xb: Tensor, yb: Tensor) -> float:
    probs, _ = model_forward(model, xb)
    loss, _ = categorical_cross_entropy(probs, yb)
    return loss


def fd_param_grad(model, xb, yb, layer_name, param_name, h=1e-5) -> np.ndarray:
    """Finite-difference gradient of the cross-entropy loss w.r.t. one
    parameter tensor, by perturbing its entries through model_forward."""
    layer = model.layer(layer_name)
    original = layer.params[param_name]
    base = original.array.astype(np.float64).copy()

    def loss_at(values):
        layer.params[param_name] = Tensor.wrap(values.astype(original.dtype))
        return model_loss(model, xb, yb)

    try:
        return fd_grad(loss_at, base, h)
    finally:
        layer.params[param_name] = original


# ── synthetic image datasets ───────────────────────────────────────────

def _draw_disk(img, color, rng, size):
    cy, cx = rng.integers(size // 3, 2 * size // 3, 2)
    r = rng.integers(size // 5, size // 3)
    yy, xx = np.ogrid[:size, :size]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    img[:, mask] = color[:, None]


def _draw_square(img, color, rng, size):
    half = rng.integers(size // 6, size // 4)
    cy, cx = rng.integers(half + 1, size - half - 1, 2)
    img[:, cy - half : cy + half, cx - half : cx + half] = color[:, None, None]


def _draw_stripes(img, color, rng, size):
    period = int(rng.integers(3, 6))
    phase = int(rng.integers(0, period))
    rows = (np.arange(size) + phase) % period < max(period // 2, 1)
    img[:, rows, :] = color[:, None, None]


_SHAPES = (_draw_disk, _draw_square, _draw_stripes)

WARM_PALETTE = np.array(
    [[0.9, 0.2, 0.1], [0.9, 0.7, 0.1], [0.8, 0.4, 0.3]], dtype=np.float32
)
COOL_PALETTE = np.array(
    [[0.1, 0.3, 0.9], [0.2, 0.8, 0.7], [0.5, 0.2, 0.8]], dtype=np.float32
)
RGB_PALETTE = np.array(
    [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]], dtype=np.float32
)


def blob_dataset(n, size=32, seed=0, class_labels=("leaf_blast", "brown_spot", "hispa")):
    """Colored geometric blobs: class i draws shape i in color i (easy)."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        cls = i % 3
        img = rng.uniform(0.0, 0.15, (3, size, size)).astype(np.float32)
        _SHAPES[cls](img, RGB_PALETTE[cls], rng, size)
        images[i] = img
        labels[i] = cls
    return ArrayDataset(images, labels, class_labels)


def shape_dataset(n, size=24, seed=0, palette=None,
                  class_labels=("disk", "square", "stripes")):
    """Shape-classification task: the class is the SHAPE; color carries no
    label signal. With palette=None every sample gets a broad random color
    (forcing color-invariant features); a fixed palette recolors the task."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        cls = i % 3
        img = rng.uniform(0.0, 0.1, (3, size, size)).astype(np.float32)
        if palette is None:
            color = rng.uniform(0.3, 1.0, 3).astype(np.float32)
        else:
            color = palette[rng.integers(0, len(palette))]
        _SHAPES[cls](img, color, rng, size)
        images[i] = img
        labels[i] = cls
    return ArrayDataset(images, labels, class_labels)


# ── P6 fixtures ────────────────────────────────────────────────────────

def write_class_tree(root, per_class=4, size=12, seed=0,
                     labels=("leaf_blast", "brown_spot", "hispa")):
    """Write a directory-per-class tree of learnable P6 images (class i is
    dominated by color channel i plus noise)."""
    from riceleaf.data import encode_ppm

    rng = np.random.default_rng(seed)
    root = str(root)
    import os

    for cls, label in enumerate(labels):
        d = os.path.join(root, label)
        os.makedirs(d, exist_ok=True)
        for i in range(per_class):
            img = rng.uniform(0.0, 0.2, (3, size, size)).astype(np.float32)
            img[cls % 3] += 0.7
            img = np.clip(img, 0.0, 1.0)
            with open(os.path.join(d, f"img_{i}.ppm"), "wb") as f:
                f.write(encode_ppm(Tensor.wrap(img)))
    return root


def p6_bytes(width, height, pixels: bytes, maxval=255) -> bytes:
    return f"P6\n{width} {height}\n{maxval}\n".encode("ascii") + pixels


def p6_gradient(width=8, height=6) -> bytes:
    """A small deterministic non-constant fixture image."""
    px = bytearray()
    for y in range(height):
        for x in range(width):
            px += bytes(((x * 37 + y * 11) % 256, (x * 5) % 256, (y * 29) % 256))
    return p6_bytes(width, height, bytes(px))
