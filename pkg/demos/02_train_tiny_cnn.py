"""Train a small CNN on synthetic colored blobs and watch it overfit
30 images to (near-)perfect training accuracy, then save the model."""

import numpy as np

from riceleaf.data import ArrayDataset
from riceleaf.modelio import save_model
from riceleaf.train import TrainConfig, train
from riceleaf.zoo import build_classifier


def blob_images(n, size=32, seed=0):
    """Class 0: red disks, class 1: green squares, class 2: blue stripes."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    colors = np.array([[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]], np.float32)
    yy, xx = np.ogrid[:size, :size]
    for i in range(n):
        cls = i % 3
        img = rng.uniform(0, 0.15, (3, size, size)).astype(np.float32)
        if cls == 0:
            cy, cx = rng.integers(10, 22, 2)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= 49
            img[:, mask] = colors[cls][:, None]
        elif cls == 1:
            cy, cx = rng.integers(8, 24, 2)
            img[:, cy - 5 : cy + 5, cx - 5 : cx + 5] = colors[cls][:, None, None]
        else:
            rows = (np.arange(size) + rng.integers(0, 4)) % 4 < 2
            img[:, rows, :] = colors[cls][:, None, None]
        images[i], labels[i] = img, cls
    return ArrayDataset(images, labels, ("leaf_blast", "brown_spot", "hispa"))


dataset = blob_images(30)
model = build_classifier((3, 32, 32), dataset.class_labels, conv_channels=(8, 16), seed=0)

trained, history = train(model, dataset, dataset, TrainConfig(epochs=40, batch_size=8, seed=0))

for r in history.records[::8] + [history.final]:
    print(f"epoch {r.epoch:3d}: loss {r.train_loss:.4f}  accuracy {r.train_accuracy:.3f}")
print(history.result_line())

save_model(trained, "/tmp/tiny-blobs.rdn1")
print("saved -> /tmp/tiny-blobs.rdn1")
