"""Differentiable layers and sequential models.

Layer zoo: conv2d, maxpool, relu, flatten, dense, global_avg_pool, softmax.
Every layer has a forward map and an exact backward map; convolution ships
two implementations, a naive nested-loop reference and an im2col+matmul
fast path, which must agree (see tests).

"Convolution" here is cross-correlation: no kernel flip. Learned kernels
make the flip unobservable and this is what CNN frameworks compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InternalError, ShapeError
from .tensor import SINGLE, Tensor, resolve_dtype
from .tensor import reshape as tensor_reshape

CONV2D = "conv2d"
MAXPOOL = "maxpool"
RELU = "relu"
FLATTEN = "flatten"
DENSE = "dense"
GLOBAL_AVG_POOL = "global_avg_pool"
SOFTMAX = "softmax"

LAYER_KINDS = (CONV2D, MAXPOOL, RELU, FLATTEN, DENSE, GLOBAL_AVG_POOL, SOFTMAX)

VALID = "valid"
SAME = "same"


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: str = VALID

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, field) < 1:
                raise ShapeError(f"ConvSpec.{field} must be >= 1, got {getattr(self, field)}")
        if self.padding not in (VALID, SAME):
            raise ShapeError(f"ConvSpec.padding must be 'valid' or 'same', got {self.padding!r}")


@dataclass(frozen=True)
class PoolSpec:
    window_h: int
    window_w: int
    stride: int

    def __post_init__(self):
        for field in ("window_h", "window_w", "stride"):
            if getattr(self, field) < 1:
                raise ShapeError(f"PoolSpec.{field} must be >= 1, got {getattr(self, field)}")


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int

    def __post_init__(self):
        for field in ("in_features", "out_features"):
            if getattr(self, field) < 1:
                raise ShapeError(f"DenseSpec.{field} must be >= 1, got {getattr(self, field)}")


class Layer:
    """One parameterised (or parameter-free) transform in a model.

    ``params`` maps parameter name to Tensor; the dict is mutated only by
    the optimizer between batches (single writer). ``frozen`` layers are
    never updated.
    """

    def __init__(self, kind, name, spec=None, params=None, frozen=False):
        if kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {kind!r}")
        self.kind = kind
        self.name = name
        self.spec = spec
        self.params = dict(params) if params else {}
        self.frozen = bool(frozen)

    def clone(self, name=None, frozen=None) -> "Layer":
        return Layer(
            self.kind,
            self.name if name is None else name,
            spec=self.spec,
            params=self.params,
            frozen=self.frozen if frozen is None else frozen,
        )

    def __repr__(self):
        return f"Layer({self.kind!r}, name={self.name!r}, frozen={self.frozen})"


def glorot_uniform(rng: np.random.Generator, shape, fan_in, fan_out, dtype=SINGLE) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor.wrap(rng.uniform(-limit, limit, size=shape).astype(resolve_dtype(dtype)))


def conv2d(name, spec: ConvSpec, *, rng=None, kernel=None, bias=None, dtype=SINGLE) -> Layer:
    dt = resolve_dtype(dtype)
    kshape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    if kernel is None:
        if rng is None:
            raise ShapeError(f"layer {name!r}: either rng or explicit kernel required")
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w
        kernel = glorot_uniform(rng, kshape, fan_in, fan_out, dt)
    if bias is None:
        bias = Tensor.wrap(np.zeros(spec.out_channels, dtype=dt))
    if kernel.shape != kshape:
        raise ShapeError(f"layer {name!r}: kernel shape {list(kernel.shape)} != {list(kshape)}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"layer {name!r}: bias shape {list(bias.shape)} != [{spec.out_channels}]")
    return Layer(CONV2D, name, spec=spec, params={"kernel": kernel, "bias": bias})


def dense(name, spec: DenseSpec, *, rng=None, weight=None, bias=None, dtype=SINGLE) -> Layer:
    dt = resolve_dtype(dtype)
    wshape = (spec.in_features, spec.out_features)
    if weight is None:
        if rng is None:
            raise ShapeError(f"layer {name!r}: either rng or explicit weight required")
        weight = glorot_uniform(rng, wshape, spec.in_features, spec.out_features, dt)
    if bias is None:
        bias = Tensor.wrap(np.zeros(spec.out_features, dtype=dt))
    if weight.shape != wshape:
        raise ShapeError(f"layer {name!r}: weight shape {list(weight.shape)} != {list(wshape)}")
    if bias.shape != (spec.out_features,):
        raise ShapeError(f"layer {name!r}: bias shape {list(bias.shape)} != [{spec.out_features}]")
    return Layer(DENSE, name, spec=spec, params={"weight": weight, "bias": bias})


def maxpool(name, spec: PoolSpec) -> Layer:
    return Layer(MAXPOOL, name, spec=spec)


def relu_layer(name) -> Layer:
    return Layer(RELU, name)


def flatten_layer(name) -> Layer:
    return Layer(FLATTEN, name)


def global_avg_pool_layer(name) -> Layer:
    return Layer(GLOBAL_AVG_POOL, name)


def softmax_layer(name) -> Layer:
    return Layer(SOFTMAX, name)


# ── shape propagation ──────────────────────────────────────────────────

def conv_output_hw(h, w, spec: ConvSpec):
    """Output spatial size plus zero-padding amounts (top, bottom, left, right).

    'same' pads so that output = ceil(input / stride), with the extra pixel
    on the bottom/right when the total is odd.
    """
    if spec.padding == SAME:
        oh = -(-h // spec.stride)
        ow = -(-w // spec.stride)
        pad_h = max((oh - 1) * spec.stride + spec.kernel_h - h, 0)
        pad_w = max((ow - 1) * spec.stride + spec.kernel_w - w, 0)
        pt, pl = pad_h // 2, pad_w // 2
        return oh, ow, pt, pad_h - pt, pl, pad_w - pl
    if h < spec.kernel_h or w < spec.kernel_w:
        raise ShapeError(
            f"kernel {spec.kernel_h}x{spec.kernel_w} larger than input {h}x{w} (valid padding)"
        )
    oh = (h - spec.kernel_h) // spec.stride + 1
    ow = (w - spec.kernel_w) // spec.stride + 1
    return oh, ow, 0, 0, 0, 0


def output_shape(layer: Layer, in_shape: tuple) -> tuple:
    """Per-sample output shape of ``layer`` given per-sample ``in_shape``."""
    kind = layer.kind
    if kind == CONV2D:
        if len(in_shape) != 3:
            raise ShapeError(f"layer {layer.name!r}: conv2d needs [ch,h,w] input, got {list(in_shape)}")
        c, h, w = in_shape
        if c != layer.spec.in_channels:
            raise ShapeError(
                f"layer {layer.name!r}: expects {layer.spec.in_channels} input channels, got {c}"
            )
        oh, ow, *_ = conv_output_hw(h, w, layer.spec)
        return (layer.spec.out_channels, oh, ow)
    if kind == MAXPOOL:
        if len(in_shape) != 3:
            raise ShapeError(f"layer {layer.name!r}: maxpool needs [ch,h,w] input, got {list(in_shape)}")
        c, h, w = in_shape
        s = layer.spec
        if s.window_h > h or s.window_w > w:
            raise ShapeError(
                f"layer {layer.name!r}: window {s.window_h}x{s.window_w} larger than input {h}x{w}"
            )
        return (c, (h - s.window_h) // s.stride + 1, (w - s.window_w) // s.stride + 1)
    if kind == RELU:
        return in_shape
    if kind == FLATTEN:
        return (math.prod(in_shape),)
    if kind == DENSE:
        if len(in_shape) != 1:
            raise ShapeError(f"layer {layer.name!r}: dense needs flat input, got {list(in_shape)}")
        if in_shape[0] != layer.spec.in_features:
            raise ShapeError(
                f"layer {layer.name!r}: expects width {layer.spec.in_features}, got {in_shape[0]}"
            )
        return (layer.spec.out_features,)
    if kind == GLOBAL_AVG_POOL:
        if len(in_shape) != 3:
            raise ShapeError(
                f"layer {layer.name!r}: global_avg_pool needs [ch,h,w] input, got {list(in_shape)}"
            )
        return (in_shape[0],)
    if kind == SOFTMAX:
        if len(in_shape) != 1:
            raise ShapeError(f"layer {layer.name!r}: softmax needs flat input, got {list(in_shape)}")
        return in_shape
    raise ShapeError(f"unknown layer kind {kind!r}")


# ── convolution ────────────────────────────────────────────────────────

def _pad_input(x: np.ndarray, pt, pb, pl, pr) -> np.ndarray:
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))


def _im2col(sample: np.ndarray, kh, kw, stride, oh, ow) -> np.ndarray:
    """Unfold one padded [ch,H,W] sample into columns [ch*kh*kw, oh*ow]."""
    c = sample.shape[0]
    cols = np.empty((c * kh * kw, oh * ow), dtype=sample.dtype)
    row = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = sample[ci, i : i + stride * oh : stride, j : j + stride * ow : stride]
                cols[row] = patch.reshape(-1)
                row += 1
    return cols


def _col2im(cols: np.ndarray, c, h, w, kh, kw, stride, oh, ow) -> np.ndarray:
    """Scatter-add columns back onto one padded [ch,h,w] sample."""
    out = np.zeros((c, h, w), dtype=cols.dtype)
    row = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                out[ci, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[
                    row
                ].reshape(oh, ow)
                row += 1
    return out


def _check_conv_input(x: Tensor, layer: Layer):
    if len(x.shape) != 4:
        raise ShapeError(f"layer {layer.name!r}: conv input must be [batch,ch,h,w], got {list(x.shape)}")
    if x.shape[1] != layer.spec.in_channels:
        raise ShapeError(
            f"layer {layer.name!r}: expects {layer.spec.in_channels} input channels, "
            f"got {x.shape[1]} (input shape {list(x.shape)})"
        )


def conv2d_forward(x: Tensor, layer: Layer, impl="im2col") -> Tensor:
    """Cross-correlate x [b,ci,h,w] with the layer kernel [co,ci,kh,kw]."""
    _check_conv_input(x, layer)
    spec = layer.spec
    b, _, h, w = x.shape
    oh, ow, pt, pb, pl, pr = conv_output_hw(h, w, spec)
    kernel = layer.params["kernel"].array
    bias = layer.params["bias"].array
    xp = _pad_input(x.array, pt, pb, pl, pr)

    if impl == "naive":
        out = np.empty((b, spec.out_channels, oh, ow), dtype=x.dtype)
        for bi in range(b):
            for o in range(spec.out_channels):
                for y in range(oh):
                    ys = y * spec.stride
                    for xo in range(ow):
                        xs = xo * spec.stride
                        window = xp[bi, :, ys : ys + spec.kernel_h, xs : xs + spec.kernel_w]
                        out[bi, o, y, xo] = np.sum(window * kernel[o]) + bias[o]
        return Tensor.wrap(out)
    if impl != "im2col":
        raise ShapeError(f"unknown conv implementation {impl!r}")

    kflat = kernel.reshape(spec.out_channels, -1)
    out = np.empty((b, spec.out_channels, oh, ow), dtype=x.dtype)
    for bi in range(b):
        cols = _im2col(xp[bi], spec.kernel_h, spec.kernel_w, spec.stride, oh, ow)
        out[bi] = (kflat @ cols).reshape(spec.out_channels, oh, ow)
    out += bias[None, :, None, None]
    return Tensor.wrap(out)


def conv2d_backward(x: Tensor, layer: Layer, grad_out: Tensor):
    """Exact gradients of conv2d_forward: (grad_input, grad_kernel, grad_bias)."""
    _check_conv_input(x, layer)
    spec = layer.spec
    b, c, h, w = x.shape
    oh, ow, pt, pb, pl, pr = conv_output_hw(h, w, spec)
    expect = (b, spec.out_channels, oh, ow)
    if grad_out.shape != expect:
        raise ShapeError(
            f"layer {layer.name!r}: grad_out shape {list(grad_out.shape)} != forward output {list(expect)}"
        )
    kernel = layer.params["kernel"].array
    kflat = kernel.reshape(spec.out_channels, -1)
    xp = _pad_input(x.array, pt, pb, pl, pr)
    g = grad_out.array

    grad_kernel = np.zeros_like(kflat)
    grad_xp = np.zeros_like(xp)
    for bi in range(b):
        cols = _im2col(xp[bi], spec.kernel_h, spec.kernel_w, spec.stride, oh, ow)
        g_flat = g[bi].reshape(spec.out_channels, -1)
        grad_kernel += g_flat @ cols.T
        grad_cols = kflat.T @ g_flat
        grad_xp[bi] = _col2im(
            grad_cols, xp.shape[1], xp.shape[2], xp.shape[3],
            spec.kernel_h, spec.kernel_w, spec.stride, oh, ow,
        )
    grad_bias = g.sum(axis=(0, 2, 3))
    grad_input = grad_xp[:, :, pt : pt + h, pl : pl + w]
    return (
        Tensor.wrap(np.ascontiguousarray(grad_input)),
        Tensor.wrap(grad_kernel.reshape(kernel.shape)),
        Tensor.wrap(grad_bias),
    )


# ── pooling ────────────────────────────────────────────────────────────

def maxpool_forward(x: Tensor, spec: PoolSpec):
    """Patch-wise maximum. Returns (output, argmax) where argmax holds, per
    output element, the flat index into x of the first (row-major) maximum."""
    if len(x.shape) != 4:
        raise ShapeError(f"maxpool input must be [batch,ch,h,w], got {list(x.shape)}")
    b, c, h, w = x.shape
    if spec.window_h > h or spec.window_w > w:
        raise ShapeError(f"pool window {spec.window_h}x{spec.window_w} larger than input {h}x{w}")
    oh = (h - spec.window_h) // spec.stride + 1
    ow = (w - spec.window_w) // spec.stride + 1
    a = x.array
    out = np.empty((b, c, oh, ow), dtype=x.dtype)
    argmax = np.empty((b, c, oh, ow), dtype=np.int64)
    # flat index of element (bi, ci, y, x) is ((bi*c + ci)*h + y)*w + x
    base = (np.arange(b)[:, None] * c + np.arange(c)[None, :]) * (h * w)
    for y in range(oh):
        ys = y * spec.stride
        for xo in range(ow):
            xs = xo * spec.stride
            window = a[:, :, ys : ys + spec.window_h, xs : xs + spec.window_w].reshape(b, c, -1)
            flat = window.argmax(axis=2)  # first max in row-major window order
            out[:, :, y, xo] = np.take_along_axis(window, flat[:, :, None], axis=2)[:, :, 0]
            wy, wx = np.divmod(flat, spec.window_w)
            argmax[:, :, y, xo] = base + (ys + wy) * w + (xs + wx)
    return Tensor.wrap(out), argmax


def maxpool_backward(argmax: np.ndarray, grad_out: Tensor, input_shape) -> Tensor:
    """Route grad_out to the recorded argmax positions; everywhere else 0."""
    input_shape = tuple(int(n) for n in input_shape)
    if argmax.shape != grad_out.shape:
        raise ShapeError(
            f"argmax shape {list(argmax.shape)} != grad_out shape {list(grad_out.shape)}"
        )
    n = math.prod(input_shape)
    flat_idx = argmax.reshape(-1)
    if flat_idx.size and (flat_idx.min() < 0 or flat_idx.max() >= n):
        raise InternalError(
            f"maxpool argmax index out of range for input shape {list(input_shape)}"
        )
    grad = np.zeros(n, dtype=grad_out.dtype)
    np.add.at(grad, flat_idx, grad_out.array.reshape(-1))
    return Tensor.wrap(grad.reshape(input_shape))


# ── dense / activations ────────────────────────────────────────────────

def dense_forward(x: Tensor, layer: Layer) -> Tensor:
    if len(x.shape) != 2:
        raise ShapeError(f"layer {layer.name!r}: dense input must be [batch,in], got {list(x.shape)}")
    w = layer.params["weight"].array
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"layer {layer.name!r}: input width {x.shape[1]} != weight rows {w.shape[0]}"
        )
    return Tensor.wrap(x.array @ w + layer.params["bias"].array)


def dense_backward(x: Tensor, layer: Layer, grad_out: Tensor):
    w = layer.params["weight"].array
    if grad_out.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(
            f"layer {layer.name!r}: grad_out shape {list(grad_out.shape)} != "
            f"[{x.shape[0]}, {w.shape[1]}]"
        )
    g = grad_out.array
    return (
        Tensor.wrap(g @ w.T),
        Tensor.wrap(x.array.T @ g),
        Tensor.wrap(g.sum(axis=0)),
    )


def relu(x: Tensor) -> Tensor:
    return Tensor.wrap(np.maximum(x.array, 0))


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    """Pass-through where input > 0; the derivative at exactly 0 is 0."""
    if x.shape != grad_out.shape:
        raise ShapeError(f"relu: input {list(x.shape)} vs grad {list(grad_out.shape)}")
    return Tensor.wrap(np.where(x.array > 0, grad_out.array, 0))


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-shift for overflow safety."""
    if len(logits.shape) != 2:
        raise ShapeError(f"softmax input must be [batch,n], got {list(logits.shape)}")
    a = logits.array
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return Tensor.wrap(e / e.sum(axis=1, keepdims=True))


def softmax_backward(probs: Tensor, grad_out: Tensor) -> Tensor:
    """Jacobian-vector product of softmax at the cached probabilities."""
    if probs.shape != grad_out.shape:
        raise ShapeError(f"softmax: probs {list(probs.shape)} vs grad {list(grad_out.shape)}")
    p = probs.array
    g = grad_out.array
    dot = (g * p).sum(axis=1, keepdims=True)
    return Tensor.wrap(p * (g - dot))


def global_avg_pool(x: Tensor) -> Tensor:
    if len(x.shape) != 4:
        raise ShapeError(f"global_avg_pool input must be [batch,ch,h,w], got {list(x.shape)}")
    return Tensor.wrap(x.array.mean(axis=(2, 3)))


def global_avg_pool_backward(grad_out: Tensor, input_shape) -> Tensor:
    b, c, h, w = (int(n) for n in input_shape)
    if grad_out.shape != (b, c):
        raise ShapeError(f"global_avg_pool: grad shape {list(grad_out.shape)} != [{b}, {c}]")
    g = grad_out.array / grad_out.dtype.type(h * w)
    return Tensor.wrap(np.broadcast_to(g[:, :, None, None], (b, c, h, w)).copy())


# ── model ──────────────────────────────────────────────────────────────

class Model:
    """An ordered layer stack with a class vocabulary and metadata.

    Construction runs a symbolic shape pass over the layers. A model with
    class labels must end in softmax of matching width; a model with an
    empty vocabulary is a feature-extractor backbone and may end anywhere
    as long as shapes chain.
    """

    def __init__(self, layers, input_shape, class_labels=(), metadata=None):
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate layer names: {names}")
        input_shape = tuple(int(n) for n in input_shape)
        if len(input_shape) != 3 or any(n < 1 for n in input_shape):
            raise ShapeError(f"input_shape must be [channels,h,w] of positives, got {list(input_shape)}")
        self.layers = list(layers)
        self.input_shape = input_shape
        self.class_labels = tuple(str(c) for c in class_labels)
        self.metadata = dict(metadata) if metadata else {}

        shape = input_shape
        self._shapes = [shape]
        for layer in self.layers:
            shape = output_shape(layer, shape)
            self._shapes.append(shape)

        if self.class_labels:
            if not self.layers or self.layers[-1].kind != SOFTMAX:
                raise ShapeError("a classifier model must end in a softmax layer")
            if shape != (len(self.class_labels),):
                raise ShapeError(
                    f"final width {shape} != number of class labels {len(self.class_labels)}"
                )

        dtypes = {t.dtype for l in self.layers for t in l.params.values()}
        if len(dtypes) > 1:
            raise ShapeError(f"mixed parameter precisions in one model: {sorted(d.name for d in dtypes)}")
        self.dtype = dtypes.pop() if dtypes else SINGLE

    @property
    def output_shape(self) -> tuple:
        return self._shapes[-1]

    def layer(self, name) -> Layer:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def parameters(self):
        """Yield (layer, param_name, tensor) over every parameter."""
        for l in self.layers:
            for pname, t in l.params.items():
                yield l, pname, t

    def trainable_parameters(self):
        for l in self.layers:
            if l.frozen:
                continue
            for pname, t in l.params.items():
                yield l, pname, t

    def clone(self) -> "Model":
        """Structural copy; parameter tensors are shared (they are immutable)."""
        return Model(
            [l.clone() for l in self.layers],
            self.input_shape,
            self.class_labels,
            dict(self.metadata),
        )

    def __repr__(self):
        return (
            f"Model(layers={[l.name for l in self.layers]}, input_shape={list(self.input_shape)}, "
            f"classes={list(self.class_labels)})"
        )


class ForwardCache:
    """Per-layer activations saved by model_forward for the backward pass."""

    def __init__(self, model, batch):
        self.model = model
        self.batch = batch
        self.saved = []


def _layer_forward(layer: Layer, x: Tensor, impl: str):
    """Apply one layer; returns (output, saved-state-for-backward)."""
    kind = layer.kind
    if kind == CONV2D:
        return conv2d_forward(x, layer, impl=impl), x
    if kind == MAXPOOL:
        out, argmax = maxpool_forward(x, layer.spec)
        return out, (argmax, x.shape)
    if kind == RELU:
        return relu(x), x
    if kind == FLATTEN:
        b = x.shape[0]
        return tensor_reshape(x, (b, math.prod(x.shape[1:]))), x.shape
    if kind == DENSE:
        return dense_forward(x, layer), x
    if kind == GLOBAL_AVG_POOL:
        return global_avg_pool(x), x.shape
    if kind == SOFTMAX:
        out = softmax(x)
        return out, out
    raise ShapeError(f"unknown layer kind {kind!r}")


def model_forward(model: Model, batch: Tensor, impl="im2col"):
    """Run the full stack; returns (output, cache).

    For a classifier the output rows are probabilities summing to 1.
    The batch is cast to the model precision if it differs.
    """
    if len(batch.shape) != len(model.input_shape) + 1 or batch.shape[1:] != model.input_shape:
        raise ShapeError(
            f"batch shape {list(batch.shape)} does not match model input "
            f"[batch, {', '.join(str(n) for n in model.input_shape)}]"
        )
    x = batch.astype(model.dtype)
    cache = ForwardCache(model, x)
    for layer in model.layers:
        x, saved = _layer_forward(layer, x, impl)
        cache.saved.append(saved)
    return x, cache


def _layer_backward(layer: Layer, saved, grad: Tensor, need_input_grad: bool):
    """Backward one layer; returns (grad_input_or_None, param_grads dict)."""
    kind = layer.kind
    if kind == CONV2D:
        grad_in, gk, gb = conv2d_backward(saved, layer, grad)
        return (grad_in if need_input_grad else None), {"kernel": gk, "bias": gb}
    if kind == MAXPOOL:
        argmax, in_shape = saved
        return (maxpool_backward(argmax, grad, in_shape) if need_input_grad else None), {}
    if kind == RELU:
        return (relu_backward(saved, grad) if need_input_grad else None), {}
    if kind == FLATTEN:
        return (tensor_reshape(grad, saved) if need_input_grad else None), {}
    if kind == DENSE:
        grad_in, gw, gb = dense_backward(saved, layer, grad)
        return (grad_in if need_input_grad else None), {"weight": gw, "bias": gb}
    if kind == GLOBAL_AVG_POOL:
        return (global_avg_pool_backward(grad, saved) if need_input_grad else None), {}
    if kind == SOFTMAX:
        return (softmax_backward(saved, grad) if need_input_grad else None), {}
    raise ShapeError(f"unknown layer kind {kind!r}")


def model_backward(model: Model, cache: ForwardCache, grad: Tensor, from_logits=True):
    """Backpropagate; returns {(layer_name, param_name): grad Tensor}.

    ``grad`` is the loss gradient w.r.t. the model output. With
    ``from_logits=True`` (the categorical cross-entropy convention) it is
    taken w.r.t. the logits feeding the final softmax, whose backward is
    then skipped. Frozen layers contribute no entries.
    """
    if cache.model is not model or len(cache.saved) != len(model.layers):
        raise InternalError("forward cache does not belong to this model")
    trainable = [i for i, l in enumerate(model.layers) if l.params and not l.frozen]
    grads = {}
    if not trainable:
        return grads
    lowest = trainable[0]

    layers = model.layers
    start = len(layers) - 1
    if from_logits and layers and layers[-1].kind == SOFTMAX:
        start -= 1

    g = grad
    for i in range(start, -1, -1):
        layer = layers[i]
        if i < lowest:
            break
        need_input = i > lowest
        g_in, pgrads = _layer_backward(layer, cache.saved[i], g, need_input)
        if layer.params and not layer.frozen:
            for pname, pg in pgrads.items():
                grads[(layer.name, pname)] = pg
        g = g_in
    return grads
