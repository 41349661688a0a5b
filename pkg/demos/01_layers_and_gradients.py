"""Tour of the layer zoo: forward passes, the two convolution paths,
and a finite-difference spot check of the analytic gradients."""

import numpy as np

from riceleaf import nn
from riceleaf.nn import ConvSpec, DenseSpec, PoolSpec
from riceleaf.tensor import Tensor

rng = np.random.default_rng(0)

# A convolution is a kernel slid over the input; the output is the feature map.
x = Tensor([[[[1, 2, 3], [4, 5, 6], [7, 8, 9]]]], dtype="double")
layer = nn.conv2d(
    "demo", ConvSpec(in_channels=1, out_channels=1, kernel_h=2, kernel_w=2),
    kernel=Tensor([[[[1, 0], [0, 1]]]], dtype="double"),
    bias=Tensor([0.0], dtype="double"), dtype="double",
)
print("input:\n", x.array[0, 0])
print("feature map (diagonal 2x2 kernel):\n", nn.conv2d_forward(x, layer).array[0, 0])

# The same result comes out of both implementations: the naive nested-loop
# reference and the im2col+matmul fast path.
fast = nn.conv2d_forward(x, layer, impl="im2col")
slow = nn.conv2d_forward(x, layer, impl="naive")
print("im2col vs naive max abs diff:", np.abs(fast.array - slow.array).max())

# Max pooling keeps the largest value of each window (and remembers where
# it was, so the backward pass can route gradient to exactly that spot).
pooled, argmax = nn.maxpool_forward(x, PoolSpec(2, 2, 1))
print("2x2 max pool:\n", pooled.array[0, 0])

# Softmax turns logits into probabilities; rows always sum to 1.
logits = Tensor([[2.0, 0.5, -1.0]], dtype="double")
probs = nn.softmax(logits)
print("softmax:", np.round(probs.array[0], 4), "sum:", probs.array.sum())

# Gradient check: compare the dense layer's analytic gradient with central
# finite differences of a scalar probe.
dense = nn.dense("fc", DenseSpec(3, 2),
                 weight=Tensor(rng.uniform(-1, 1, (3, 2)), dtype="double"),
                 bias=Tensor(rng.uniform(-1, 1, 2), dtype="double"), dtype="double")
xin = rng.uniform(-1, 1, (4, 3))
probe = rng.uniform(-1, 1, (4, 2))
_, grad_w, _ = nn.dense_backward(Tensor(xin, dtype="double"), dense,
                                 Tensor(probe, dtype="double"))

h = 1e-5
w0 = dense.params["weight"].array.copy()
fd = np.zeros_like(w0)
for i in range(w0.shape[0]):
    for j in range(w0.shape[1]):
        for sign in (+1, -1):
            w = w0.copy()
            w[i, j] += sign * h
            shifted = nn.dense(
                "fc", dense.spec, weight=Tensor(w, dtype="double"),
                bias=dense.params["bias"], dtype="double")
            out = nn.dense_forward(Tensor(xin, dtype="double"), shifted)
            fd[i, j] += sign * (out.array * probe).sum() / (2 * h)
print("dense weight grad, max |analytic - finite difference|:",
      np.abs(grad_w.array - fd).max())
