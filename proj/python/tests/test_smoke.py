import math

import numpy as np
import pytest

import swiden


def test_rng_reference_values():
    r = swiden.Rng(7)
    assert r.next() == 0xB358FAF74EF9765A
    assert swiden.derive_seed(42, 0) == 0x28EFE333B266F103


def test_five_crop_offsets():
    assert swiden.five_crop_offsets(72, 72, 64) == [(0, 0), (0, 8), (8, 0), (8, 8), (4, 4)]
    assert swiden.five_crop_offsets(256, 256, 224)[4] == (16, 16)


def test_grl_backward():
    g = swiden.grl_backward(np.array([1.0, -3.0]), 2.0)
    np.testing.assert_array_equal(g, [-2.0, 6.0])


def test_pooling_tie_goes_to_lowest_class():
    assert swiden.pool_five_crop_predictions(np.full((5, 2), 0.5)) == 0
    with pytest.raises(ValueError):
        swiden.pool_five_crop_predictions(np.full((5, 2), 0.7))


def test_scheduler_drop():
    s = swiden.PlateauScheduler(1.0, patience=3)
    lrs = [s.update(a) for a in (0.5, 0.6, 0.6, 0.6, 0.6)]
    assert lrs[3] == 1.0 and math.isclose(lrs[4], 0.1)


def test_gen_synthetic_shapes_and_styles():
    images, labels, styles, names = swiden.gen_synthetic(seed=1, classes=3, per_class=2, resolution=32)
    assert images.shape == (12, 3, 32, 32)
    assert names == ["circle", "square", "triangle"]
    assert images.min() >= 0.0 and images.max() <= 1.0
    lum = 0.299 * images[:, 0] + 0.587 * images[:, 1] + 0.114 * images[:, 2]
    bright = (lum > 0.8).mean(axis=(1, 2))
    assert np.all(bright[styles == 1] > 0.8)
    assert np.all(bright[styles == 0] <= 0.8)


def test_gradcheck_single_layer():
    (r,) = swiden.gradcheck("fc", 3)
    assert r["passed"] and r["configs"] >= 20


def test_tiny_training_run(tmp_path):
    cfg = {
        "classes": "3", "per_class": "8", "train_per_style": "4", "test_per_style": "2",
        "resize": "36", "crop": "32", "epochs": "2", "batch": "4",
        "stages": "1x2,1x3,1x4,1x4,1x4", "fc_dim": "8", "out": str(tmp_path),
    }
    m = swiden.train(cfg)
    assert m["total"] == 12
    assert len(m["loss_curve"]) == 2
    assert m["overall_acc"] == pytest.approx(0.5 * (m["art_acc"] + m["photo_acc"]))
    assert (tmp_path / "metrics.txt").exists()


def test_bad_config_raises():
    with pytest.raises(ValueError):
        swiden.train({"nonsense": "1"})
