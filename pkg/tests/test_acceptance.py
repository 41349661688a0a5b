"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` (or plain `pytest`). The
conditional full-dataset reproduction runs only when RICELEAF_DATASET_DIR
points at a directory-per-class rice image tree.
"""

import functools
import math
import os
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from riceleaf import nn
from riceleaf import train as tr
from riceleaf.cli import main
from riceleaf.data import AugmentSpec, DatasetManifest, ManifestRecord, augment, flip_horizontal, shear_x, split_dataset
from riceleaf.errors import ModelCorruptionError, ModelFormatError
from riceleaf.modelio import HeadSpec, attach_head, load_model, save_model
from riceleaf.nn import ConvSpec, DenseSpec, Model, PoolSpec
from riceleaf.serve import create_app
from riceleaf.tensor import Tensor
from riceleaf.zoo import build_backbone, build_classifier

from support import (
    COOL_PALETTE,
    blob_dataset,
    fd_grad,
    fd_param_grad,
    p6_gradient,
    rel_err,
    shape_dataset,
    write_class_tree,
)
from test_modelio import rebuild
from test_train import reference_adam_sequence


def criterion(name, budget_seconds=None):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[ACCEPTANCE] {name}: FAIL")
                raise
            elapsed = time.perf_counter() - t0
            if budget_seconds is not None and elapsed > budget_seconds:
                print(f"\n[ACCEPTANCE] {name}: FAIL (over {budget_seconds}s budget: {elapsed:.1f}s)")
                raise AssertionError(f"{name} exceeded its {budget_seconds}s runtime budget")
            print(f"\n[ACCEPTANCE] {name}: PASS ({elapsed:.1f}s)")
        return wrapper
    return deco


def toy_model(rng, dtype="double"):
    """2-conv / 1-dense / softmax stack with pooling and relu in between."""
    layers = [
        nn.conv2d("conv1", ConvSpec(1, 2, 2, 2), rng=rng, dtype=dtype),
        nn.relu_layer("relu1"),
        nn.conv2d("conv2", ConvSpec(2, 2, 2, 2), rng=rng, dtype=dtype),
        nn.relu_layer("relu2"),
        nn.maxpool("pool", PoolSpec(2, 2, 1)),
        nn.flatten_layer("flat"),
        nn.dense("fc", DenseSpec(2 * 1 * 1, 3), rng=rng, dtype=dtype),
        nn.softmax_layer("softmax"),
    ]
    return Model(layers, (1, 4, 4), class_labels=["a", "b", "c"])


@criterion("gradient-integrity", budget_seconds=60)
def test_gradient_integrity():
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for trial in range(20):
        # isolated parameterized layers: conv2d and dense
        conv = nn.conv2d("c", ConvSpec(2, 2, 2, 2),
                         kernel=Tensor(rng.uniform(-1, 1, (2, 2, 2, 2)), dtype="double"),
                         bias=Tensor(rng.uniform(-1, 1, 2), dtype="double"),
                         dtype="double")
        x = rng.uniform(-1, 1, (2, 2, 4, 4))
        probe = rng.uniform(-1, 1, (2, 2, 3, 3))
        xt = Tensor(x, dtype="double")
        _, gk, gb = nn.conv2d_backward(xt, conv, Tensor(probe, dtype="double"))

        def conv_loss(kernel_values, bias_values):
            lay = nn.conv2d("c", conv.spec,
                            kernel=Tensor(kernel_values, dtype="double"),
                            bias=Tensor(bias_values, dtype="double"), dtype="double")
            return float((nn.conv2d_forward(xt, lay).array * probe).sum())

        kv = conv.params["kernel"].array.copy()
        bv = conv.params["bias"].array.copy()
        worst = max(worst, rel_err(gk.array, fd_grad(lambda v: conv_loss(v, bv), kv.copy())))
        worst = max(worst, rel_err(gb.array, fd_grad(lambda v: conv_loss(kv, v), bv.copy())))

        den = nn.dense("d", DenseSpec(3, 4),
                       weight=Tensor(rng.uniform(-1, 1, (3, 4)), dtype="double"),
                       bias=Tensor(rng.uniform(-1, 1, 4), dtype="double"), dtype="double")
        dx = rng.uniform(-1, 1, (3, 3))
        dprobe = rng.uniform(-1, 1, (3, 4))
        _, gw, gb2 = nn.dense_backward(Tensor(dx, dtype="double"), den,
                                       Tensor(dprobe, dtype="double"))

        def dense_loss(weight_values, bias_values):
            lay = nn.dense("d", den.spec, weight=Tensor(weight_values, dtype="double"),
                           bias=Tensor(bias_values, dtype="double"), dtype="double")
            return float((nn.dense_forward(Tensor(dx, dtype="double"), lay).array * dprobe).sum())

        wv = den.params["weight"].array.copy()
        bv2 = den.params["bias"].array.copy()
        worst = max(worst, rel_err(gw.array, fd_grad(lambda v: dense_loss(v, bv2), wv.copy())))
        worst = max(worst, rel_err(gb2.array, fd_grad(lambda v: dense_loss(wv, v), bv2.copy())))

        # full toy model: loss gradients for every parameter
        model = toy_model(rng)
        xb = Tensor(rng.uniform(-1, 1, (2, 1, 4, 4)), dtype="double")
        yb = Tensor(np.eye(3)[rng.integers(0, 3, 2)], dtype="double")
        probs, cache = nn.model_forward(model, xb)
        _, grad = tr.categorical_cross_entropy(probs, yb)
        analytic = nn.model_backward(model, cache, grad)
        assert set(analytic) == {
            ("conv1", "kernel"), ("conv1", "bias"),
            ("conv2", "kernel"), ("conv2", "bias"),
            ("fc", "weight"), ("fc", "bias"),
        }
        for (lname, pname), g in analytic.items():
            fd = fd_param_grad(model, xb, yb, lname, pname)
            worst = max(worst, rel_err(g.array, fd))
    assert worst < 1e-4, f"max relative error {worst:.3e}"


@criterion("convolution-oracle", budget_seconds=30)
def test_convolution_oracle():
    rng = np.random.default_rng(77)
    for _ in range(100):
        b = int(rng.integers(1, 3))
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        h = int(rng.integers(3, 12))
        w = int(rng.integers(3, 12))
        kh = int(rng.integers(1, min(h, 4) + 1))
        kw = int(rng.integers(1, min(w, 4) + 1))
        stride = int(rng.integers(1, 4))
        padding = "same" if rng.random() < 0.5 else "valid"
        layer = nn.conv2d(
            "c", ConvSpec(ci, co, kh, kw, stride, padding),
            kernel=Tensor(rng.uniform(-1, 1, (co, ci, kh, kw)), dtype="double"),
            bias=Tensor(rng.uniform(-1, 1, co), dtype="double"), dtype="double",
        )
        x = Tensor(rng.uniform(-1, 1, (b, ci, h, w)), dtype="double")
        fast = nn.conv2d_forward(x, layer, impl="im2col")
        slow = nn.conv2d_forward(x, layer, impl="naive")
        assert np.abs(fast.array - slow.array).max() <= 1e-10


@criterion("optimizer")
def test_optimizer():
    state = tr.AdamState((1,), np.float64)
    p = Tensor([1.0], dtype="double")
    mine = []
    for _ in range(10):
        p, state = tr.adam_step(p, Tensor([0.5], dtype="double"), state)
        mine.append(p.item())
    ref = reference_adam_sequence(1.0, [0.5] * 10)
    assert max(abs(a - b) for a, b in zip(mine, ref)) <= 1e-12
    assert abs(mine[0] - 0.9990) <= 1e-6


@criterion("softmax-cross-entropy")
def test_softmax_cross_entropy():
    rng = np.random.default_rng(5)
    z = rng.uniform(-8, 8, (16, 5))
    probs = nn.softmax(Tensor(z, dtype="double"))
    assert np.abs(probs.array.sum(axis=1) - 1.0).max() <= 1e-12
    shifted = nn.softmax(Tensor(z + 321.0, dtype="double"))
    assert np.abs(probs.array - shifted.array).max() <= 1e-12

    loss_perfect, _ = tr.categorical_cross_entropy(
        Tensor([[1.0, 0.0, 0.0]], dtype="double"), Tensor([[1, 0, 0]], dtype="double"))
    assert loss_perfect == 0.0
    third = 1.0 / 3.0
    loss_uniform, _ = tr.categorical_cross_entropy(
        Tensor([[third] * 3], dtype="double"), Tensor([[0, 1, 0]], dtype="double"))
    assert abs(loss_uniform - math.log(3.0)) <= 1e-9


@criterion("tiny-overfit", budget_seconds=120)
def test_tiny_overfit():
    train_set = blob_dataset(30, size=32, seed=99)
    model = build_classifier((3, 32, 32), train_set.class_labels,
                             conv_channels=(8, 16), seed=99)
    config = tr.TrainConfig(epochs=60, batch_size=8, seed=99)
    assert config.epochs <= 200
    _, history = tr.train(model, train_set, train_set, config)
    assert history.final.train_accuracy >= 0.99, history.final


@criterion("transfer-mechanism", budget_seconds=300)
def test_transfer_mechanism():
    # task A: shapes in broadly random colors (forces color-invariant
    # features); task B: the same shapes recolored to a fixed cool palette,
    # with only 8 training images per class. Identical epochs per arm.
    size = 20
    epochs_b = 60
    lr = 3e-3
    transfer_scores = []
    scratch_scores = []
    for seed in range(5):
        task_a = shape_dataset(150, size=size, seed=seed * 31 + 1)
        labels_b = ("disk_cool", "square_cool", "stripes_cool")
        train_b = shape_dataset(24, size=size, seed=seed * 31 + 2,
                                palette=COOL_PALETTE, class_labels=labels_b)
        val_b = shape_dataset(30, size=size, seed=seed * 31 + 3,
                              palette=COOL_PALETTE, class_labels=labels_b)

        pretrained_cls = build_classifier((3, size, size), task_a.class_labels,
                                          conv_channels=(6, 12), seed=seed)
        pretrained, _ = tr.train(
            pretrained_cls, task_a, task_a,
            tr.TrainConfig(epochs=60, batch_size=16, seed=seed, learning_rate=lr))

        transfer = attach_head(pretrained, HeadSpec(3, labels_b),
                               freeze_backbone=True, seed=seed + 500)
        base_before = {
            (l.name, p): t.tobytes()
            for l, p, t in transfer.parameters() if l.name.startswith("base.")
        }
        tuned, hist_t = tr.train(
            transfer, train_b, val_b,
            tr.TrainConfig(epochs=epochs_b, batch_size=8, seed=seed,
                           learning_rate=lr, freeze_policy=("base.",)))
        for (lname, pname), raw in base_before.items():
            assert tuned.layer(lname).params[pname].tobytes() == raw

        scratch = build_classifier((3, size, size), labels_b,
                                   conv_channels=(6, 12), seed=seed + 900)
        _, hist_s = tr.train(
            scratch, train_b, val_b,
            tr.TrainConfig(epochs=epochs_b, batch_size=8, seed=seed, learning_rate=lr))

        transfer_scores.append(hist_t.final.val_accuracy)
        scratch_scores.append(hist_s.final.val_accuracy)

    mean_transfer = float(np.mean(transfer_scores))
    mean_scratch = float(np.mean(scratch_scores))
    print(f"\n  transfer {transfer_scores} mean {mean_transfer:.3f} | "
          f"scratch {scratch_scores} mean {mean_scratch:.3f}")
    assert mean_transfer >= mean_scratch


@criterion("split-contract")
def test_split_contract():
    records = [
        ManifestRecord(f"{label}/{i}.ppm", label)
        for label in ("leaf_blast", "brown_spot", "hispa")
        for i in range(420)
    ]
    manifest = DatasetManifest(records)
    out = split_dataset(manifest, 0.8, seed=42)
    train = out.split_records("train")
    val = out.split_records("val")
    assert (len(train), len(val)) == (1008, 252)
    for label in out.class_labels:
        assert sum(1 for r in train if r.label == label) == 336
    again = split_dataset(manifest, 0.8, seed=42)
    assert [r.split for r in again.records] == [r.split for r in out.records]


@criterion("serialization")
def test_serialization():
    model = build_classifier((3, 16, 16), ["leaf_blast", "brown_spot", "hispa"],
                             conv_channels=(4, 8), seed=3)
    data = save_model(model)
    loaded = load_model(data)
    for (l1, p1, t1), (l2, p2, t2) in zip(model.parameters(), loaded.parameters()):
        assert (l1.name, p1) == (l2.name, p2) and t1.tobytes() == t2.tobytes()

    bad_magic = bytearray(data)
    bad_magic[0] ^= 0xFF
    with pytest.raises(ModelFormatError):
        load_model(bytes(bad_magic))
    with pytest.raises(ModelCorruptionError):
        load_model(data[:-4])  # truncated blob

    def bad_offset(manifest):
        manifest["layers"][0]["params"][0]["offset"] = 1 << 30

    with pytest.raises(ModelCorruptionError):
        load_model(rebuild(data, bad_offset))

    def bad_shape(manifest):
        manifest["layers"][0]["params"][0]["shape"][0] += 2

    with pytest.raises(ModelCorruptionError):
        load_model(rebuild(data, bad_shape))


@criterion("augmentation")
def test_augmentation(tmp_path):
    rng = np.random.default_rng(8)
    img = Tensor(rng.uniform(0, 1, (3, 24, 24)).astype(np.float32))
    assert flip_horizontal(flip_horizontal(img)) == img
    assert np.abs(shear_x(img, 0.0).array - img.array).max() <= 1e-6
    spec = AugmentSpec()
    for _ in range(20):
        out = augment(img, spec, rng)
        assert out.array.min() >= 0.0 and out.array.max() <= 1.0

    data_dir = write_class_tree(tmp_path / "tree", per_class=2, size=16, seed=0)
    manifest = str(tmp_path / "m.tsv")
    assert main(["scan", data_dir, "--out", manifest]) == 0
    out_dir = tmp_path / "previews"
    args = ["augment-preview", "--manifest", manifest, "--out-dir", str(out_dir),
            "-n", "3", "--seed", "4", "--size", "16"]
    assert main(args) == 0
    first = {f: (out_dir / f).read_bytes() for f in os.listdir(out_dir)}
    assert len(first) == 3
    assert main(args) == 0
    assert {f: (out_dir / f).read_bytes() for f in os.listdir(out_dir)} == first


@criterion("cli-service-parity")
def test_cli_service_parity(tmp_path, capsys):
    model_path = tmp_path / "model.rdn1"
    model = build_classifier((3, 16, 16), ["leaf_blast", "brown_spot", "hispa"],
                             conv_channels=(4, 8), seed=21)
    save_model(model, model_path)

    rng = np.random.default_rng(0)
    fixtures = []
    for i in range(10):
        w = int(rng.integers(6, 40))
        h = int(rng.integers(6, 40))
        px = rng.integers(0, 256, (h, w, 3), dtype=np.uint8).tobytes()
        path = tmp_path / f"fixture_{i}.ppm"
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + px)
        fixtures.append(path)

    assert main(["predict", "--model", str(model_path)] + [str(p) for p in fixtures]) == 0
    out_lines = capsys.readouterr().out.splitlines()
    cli_probs = {}
    current = None
    for line in out_lines:
        key, _, value = line.partition("\t")
        if key == "image:":
            current = value
            cli_probs[current] = {}
        elif key in ("leaf_blast", "brown_spot", "hispa"):
            cli_probs[current][key] = float(value)

    client = TestClient(create_app(str(model_path)))
    for path in fixtures:
        r = client.post("/api/predict", content=path.read_bytes(),
                        headers={"content-type": "image/x-portable-pixmap"})
        assert r.status_code == 200
        for c in r.json()["classes"]:
            assert abs(c["probability"] - cli_probs[str(path)][c["label"]]) <= 1e-6

    # error statuses: 400 (decode), 413 (oversize), 503 (no model)
    assert client.post("/api/predict", content=b"",
                       headers={"content-type": "image/png"}).status_code == 400
    assert client.post("/api/predict", content=b"x" * (11 * 1024 * 1024),
                       headers={"content-type": "image/png"}).status_code == 413
    bare = TestClient(create_app())
    assert bare.post("/api/predict", content=p6_gradient(),
                     headers={"content-type": "image/x-portable-pixmap"}).status_code == 503


@pytest.mark.skipif(
    not os.environ.get("RICELEAF_DATASET_DIR"),
    reason="set RICELEAF_DATASET_DIR to a directory-per-class rice image tree",
)
@criterion("full-reproduction-path")
def test_full_reproduction_path(tmp_path, capsys):
    dataset_dir = os.environ["RICELEAF_DATASET_DIR"]
    manifest = str(tmp_path / "rice.tsv")
    model = str(tmp_path / "model.rdn1")
    assert main(["scan", dataset_dir, "--out", manifest]) == 0
    assert main([
        "train", "--manifest", manifest, "--out", model,
        "--preset", "paper-iter3", "--input-size", "64",
    ]) == 0
    out = capsys.readouterr().out
    assert "Result= " in out and "% trained data set" in out and "% validation" in out
    assert main(["eval", "--model", model, "--manifest", manifest, "--split", "val"]) == 0
