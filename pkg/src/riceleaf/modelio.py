"""Model serialization (the RDN1 container) and transfer-learning surgery.

File layout:

    bytes 0..3    magic "RDN1"
    bytes 4..7    manifest length, 32-bit little-endian unsigned
    manifest      UTF-8 JSON: format version, input shape, class labels,
                  metadata, ordered layer descriptors with parameter
                  shapes and byte offsets into the blob
    padding       zero bytes up to the next 16-byte boundary
    blob          each tensor as raw 32-bit little-endian floats,
                  row-major, in manifest order, 16-byte aligned

Saving is deterministic: the same model produces identical bytes.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ModelCorruptionError, ModelFormatError, ShapeError
from .fileio import atomic_write_bytes
from .nn import (
    CONV2D,
    DENSE,
    FLATTEN,
    GLOBAL_AVG_POOL,
    MAXPOOL,
    SOFTMAX,
    ConvSpec,
    DenseSpec,
    Layer,
    Model,
    PoolSpec,
    dense,
    global_avg_pool_layer,
    softmax_layer,
)
from .tensor import SINGLE, Tensor

MAGIC = b"RDN1"
FORMAT_VERSION = 1
_ALIGN = 16

_DROPPABLE_HEAD_KINDS = (SOFTMAX, DENSE, FLATTEN, GLOBAL_AVG_POOL)


def _align(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN


def _spec_to_dict(layer: Layer):
    if layer.kind == CONV2D:
        s = layer.spec
        return {
            "in_channels": s.in_channels,
            "out_channels": s.out_channels,
            "kernel_h": s.kernel_h,
            "kernel_w": s.kernel_w,
            "stride": s.stride,
            "padding": s.padding,
        }
    if layer.kind == MAXPOOL:
        s = layer.spec
        return {"window_h": s.window_h, "window_w": s.window_w, "stride": s.stride}
    if layer.kind == DENSE:
        s = layer.spec
        return {"in_features": s.in_features, "out_features": s.out_features}
    return None


def _spec_from_dict(kind, d):
    try:
        if kind == CONV2D:
            return ConvSpec(**d)
        if kind == MAXPOOL:
            return PoolSpec(**d)
        if kind == DENSE:
            return DenseSpec(**d)
    except (TypeError, ShapeError) as e:
        raise ModelCorruptionError(f"invalid layer spec: {e}", field=f"{kind}.spec") from None
    if d is not None:
        raise ModelCorruptionError(f"layer kind {kind!r} takes no spec", field=f"{kind}.spec")
    return None


def save_model(model: Model, destination=None) -> bytes:
    """Serialise a model; returns the bytes and writes them when a
    destination path is given (atomically: temp file + rename)."""
    if model.dtype != SINGLE:
        raise ConfigError(
            "only single-precision models are serialisable; double precision is for gradient checks"
        )
    blob = bytearray()
    layer_entries = []
    for layer in model.layers:
        params = []
        for pname, t in layer.params.items():
            if len(blob) % _ALIGN:
                blob.extend(b"\0" * (_ALIGN - len(blob) % _ALIGN))
            raw = t.array.astype("<f4", copy=False).tobytes(order="C")
            params.append(
                {
                    "name": pname,
                    "shape": list(t.shape),
                    "offset": len(blob),
                    "length": len(raw),
                }
            )
            blob.extend(raw)
        layer_entries.append(
            {
                "name": layer.name,
                "kind": layer.kind,
                "frozen": layer.frozen,
                "spec": _spec_to_dict(layer),
                "params": params,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "class_labels": list(model.class_labels),
        "metadata": dict(sorted(model.metadata.items())),
        "layers": layer_entries,
    }
    mbytes = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<I", len(mbytes)) + mbytes
    head += b"\0" * (_align(len(head)) - len(head))
    data = bytes(head) + bytes(blob)
    if destination is not None:
        atomic_write_bytes(destination, data)
    return data


def load_model(source) -> Model:
    """Reconstruct a model from RDN1 bytes or a file path."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            data = f.read()
    else:
        data = bytes(source)
    if len(data) < 8 or data[:4] != MAGIC:
        raise ModelFormatError(
            f"not an RDN1 model file (magic {data[:4]!r})" if data else "empty model file"
        )
    (mlen,) = struct.unpack("<I", data[4:8])
    if 8 + mlen > len(data):
        raise ModelCorruptionError(
            f"declared manifest length {mlen} exceeds file size {len(data)}",
            field="manifest_length",
        )
    try:
        manifest = json.loads(data[8 : 8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelCorruptionError(f"manifest is not valid JSON: {e}", field="manifest") from None

    for key in ("format_version", "input_shape", "class_labels", "layers"):
        if key not in manifest:
            raise ModelCorruptionError(f"manifest missing key {key!r}", field=key)
    if manifest["format_version"] != FORMAT_VERSION:
        raise ModelCorruptionError(
            f"unsupported format version {manifest['format_version']}", field="format_version"
        )
    blob = data[_align(8 + mlen):]

    layers = []
    for entry in manifest["layers"]:
        for key in ("name", "kind", "frozen", "params"):
            if key not in entry:
                raise ModelCorruptionError(
                    f"layer descriptor missing key {key!r}", field=f"layers.{key}"
                )
        spec = _spec_from_dict(entry["kind"], entry.get("spec"))
        params = {}
        for p in entry["params"]:
            pname = f"{entry['name']}.{p.get('name', '?')}"
            shape = tuple(int(n) for n in p["shape"])
            count = math.prod(shape)
            if p["length"] != count * 4:
                raise ModelCorruptionError(
                    f"declared length {p['length']} != shape {list(shape)} x 4 bytes",
                    field=pname,
                )
            if p["offset"] % _ALIGN:
                raise ModelCorruptionError(
                    f"tensor offset {p['offset']} is not 16-byte aligned", field=pname
                )
            if p["offset"] + p["length"] > len(blob):
                raise ModelCorruptionError(
                    f"tensor data [{p['offset']}, {p['offset'] + p['length']}) "
                    f"lies outside the {len(blob)}-byte blob",
                    field=pname,
                )
            a = np.frombuffer(blob, dtype="<f4", count=count, offset=p["offset"])
            params[p["name"]] = Tensor.wrap(a.reshape(shape).copy())
        try:
            layers.append(
                Layer(entry["kind"], entry["name"], spec=spec, params=params,
                      frozen=bool(entry["frozen"]))
            )
        except ShapeError as e:
            raise ModelCorruptionError(str(e), field=entry["name"]) from None

    try:
        return Model(
            layers,
            manifest["input_shape"],
            manifest["class_labels"],
            manifest.get("metadata", {}),
        )
    except ShapeError as e:
        raise ModelCorruptionError(f"model fails shape validation: {e}", field="layers") from None


# ── transfer-learning surgery ──────────────────────────────────────────

@dataclass(frozen=True)
class HeadSpec:
    """A fresh classification head: global average pool -> dense -> softmax."""

    num_classes: int
    class_labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "class_labels", tuple(str(c) for c in self.class_labels))
        if self.num_classes < 2:
            raise ConfigError(f"a classifier needs >= 2 classes, got {self.num_classes}")
        if len(self.class_labels) != self.num_classes:
            raise ConfigError(
                f"{self.num_classes} classes but {len(self.class_labels)} labels"
            )
        if len(set(self.class_labels)) != self.num_classes:
            raise ConfigError(f"class labels must be unique: {list(self.class_labels)}")


def attach_head(backbone: Model, head: HeadSpec, freeze_backbone: bool, seed=0) -> Model:
    """Drop the backbone's classifier (if any), keep its convolutional trunk
    as frozen-or-not "base.*" layers, and attach a freshly initialised
    "head.*" stack for the new class vocabulary.

    Backbone parameter values are shared bit-exactly (tensors are immutable).
    """
    trunk = list(backbone.layers)
    while trunk and trunk[-1].kind in _DROPPABLE_HEAD_KINDS:
        # relu directly under the old head belongs to the trunk; stop there
        trunk.pop()
    if not trunk:
        raise ConfigError(
            "backbone has no feature-extractor layers left after dropping its head; "
            "load or build the backbone with the top excluded"
        )
    probe = Model(trunk, backbone.input_shape)
    feat = probe.output_shape
    if len(feat) != 3:
        raise ConfigError(
            f"backbone must end in a rank-4 feature map, got per-sample shape {list(feat)}; "
            "load or build the backbone with the top excluded"
        )

    base_layers = []
    for l in trunk:
        name = l.name if l.name.startswith("base.") else f"base.{l.name}"
        base_layers.append(l.clone(name=name, frozen=freeze_backbone))

    rng = np.random.default_rng(seed)
    head_layers = [
        global_avg_pool_layer("head.pool"),
        dense("head.fc", DenseSpec(feat[0], head.num_classes), rng=rng, dtype=backbone.dtype),
        softmax_layer("head.softmax"),
    ]
    metadata = dict(backbone.metadata)
    metadata["head_seed"] = str(seed)
    return Model(base_layers + head_layers, backbone.input_shape, head.class_labels, metadata)
