"""Ready-made architectures: a small configurable backbone and classifiers.

The backbone is a plain conv/relu/maxpool stack ending in a feature map,
so a classification head can be attached (and the trunk frozen) for
transfer learning.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .modelio import HeadSpec, attach_head
from .nn import ConvSpec, Model, PoolSpec, conv2d, maxpool, relu_layer
from .tensor import SINGLE


def build_backbone(input_shape=(3, 64, 64), conv_channels=(8, 16, 32), seed=0,
                   dtype=SINGLE) -> Model:
    """Feature extractor: [conv 3x3 same -> relu -> maxpool 2x2/2] per stage."""
    if not conv_channels:
        raise ConfigError("conv_channels must name at least one stage")
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = input_shape[0]
    for i, out_ch in enumerate(conv_channels, 1):
        layers.append(
            conv2d(
                f"conv{i}",
                ConvSpec(in_ch, out_ch, 3, 3, stride=1, padding="same"),
                rng=rng,
                dtype=dtype,
            )
        )
        layers.append(relu_layer(f"relu{i}"))
        layers.append(maxpool(f"pool{i}", PoolSpec(2, 2, 2)))
        in_ch = out_ch
    return Model(layers, input_shape, class_labels=(), metadata={"arch": "small-backbone"})


def build_classifier(input_shape, class_labels, conv_channels=(8, 16, 32), seed=0,
                     dtype=SINGLE) -> Model:
    """A backbone plus a fresh head, all trainable."""
    backbone = build_backbone(input_shape, conv_channels, seed=seed, dtype=dtype)
    head = HeadSpec(len(class_labels), tuple(class_labels))
    return attach_head(backbone, head, freeze_backbone=False, seed=seed + 1)
