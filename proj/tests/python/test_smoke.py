"""Smoke tests for the python module."""

import math

import numpy as np
import pytest

import ecnn


def test_parse_arch_and_presets():
    canonical = ecnn.parse_arch("conv:8x3x3,sbn|fc:16,bn,drop0.5")
    assert canonical == "conv:8x3x3,sbn|fc:16,bn,drop0.5"
    assert "conv:32x3x3" in ecnn.preset_arch("shallow")
    assert "conv:64x3x3" in ecnn.preset_arch("deep")
    with pytest.raises(ValueError):
        ecnn.parse_arch("fc:8")


def test_forward_shapes_and_determinism():
    model = ecnn.build_model("conv:4x3x3,sbn,pool|fc:8", seed=3)
    x = np.random.default_rng(0).normal(0, 20, size=(5, 1, 48, 48))
    scores = model.forward(x)
    assert scores.shape == (5, 7)
    assert np.array_equal(scores, model.forward(x))
    preds = model.predict(x)
    assert len(preds) == 5
    assert all(0 <= p < 7 for p in preds)


def test_softmax_loss_uniform_scores():
    scores = np.zeros((4, 7))
    loss, dscores = ecnn.softmax_loss(scores, [0, 1, 2, 3])
    assert abs(loss - math.log(7)) < 1e-9
    assert dscores.shape == (4, 7)
    assert np.allclose(dscores.sum(axis=1), 0.0, atol=1e-12)


def test_hog_vector_length_and_invariance():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 255, size=(48, 48))
    vec = ecnn.hog_extract(img)
    assert vec.shape == (900,)
    assert np.all(vec >= 0)
    shifted = ecnn.hog_extract(img + 13.5)
    assert np.allclose(vec, shifted, atol=1e-12)


def test_synthetic_training_learns():
    splits = ecnn.make_synthetic_splits(280, 70, 0, seed=5)
    train_x = splits["train"]["images"]
    mean = train_x.mean(axis=0, keepdims=True)
    train_x = train_x - mean
    val_x = splits["val"]["images"] - mean

    model, history = ecnn.train(
        "conv:6x3x3,sbn,pool|fc:24,bn",
        train_x,
        splits["train"]["labels"],
        val_x,
        splits["val"]["labels"],
        lr=0.01,
        epochs=6,
        batch=32,
        momentum=0.9,
        seed=11,
    )
    assert len(history["loss"]) == 6 * math.ceil(280 / 32)
    assert len(history["val_acc"]) == 6
    # oriented-grating classes separate quickly; chance is 1/7
    assert max(history["val_acc"]) > 0.4

    acc, cm = ecnn.evaluate(model, val_x, splits["val"]["labels"])
    assert cm.shape == (7, 7)
    assert cm.sum() == 70
    assert abs(acc - np.trace(cm) / 70.0) < 1e-15


def test_checkpoint_roundtrip(tmp_path):
    model = ecnn.build_model("conv:3x3x3,sbn|fc:6", seed=9)
    path = str(tmp_path / "model.ckpt")
    model.save(path)
    back = ecnn.Model.load(path)
    assert back.arch == model.arch
    assert back.seed == model.seed
    x = np.random.default_rng(2).normal(0, 10, size=(2, 1, 48, 48))
    assert np.array_equal(model.forward(x), back.forward(x))


def test_grad_check_tiny_spec():
    errs = ecnn.grad_check("conv:2x3x3,sbn,pool|fc:4", n_samples=2, seed=0)
    assert errs
    assert max(errs.values()) < 1e-4


def test_sanity_initial_loss():
    ok, measured, target = ecnn.sanity_initial_loss("shallow")
    assert ok
    assert abs(target - math.log(7)) < 1e-12
    assert abs(measured - target) < 0.05
