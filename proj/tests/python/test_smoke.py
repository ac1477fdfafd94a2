"""Smoke tests for the python bindings: known values and basic contracts."""

import math

import numpy as np
import pytest

import sslv


def test_softmax_known_values():
    probs = sslv.softmax([1.0, 0.0])
    assert abs(probs[0] - 0.73106) < 1e-5
    assert abs(probs[1] - 0.26894) < 1e-5
    assert abs(sum(sslv.softmax([3.0, 3.0, 3.0])) - 1.0) < 1e-9


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        sslv.softmax([float("nan"), 0.0])


def test_argmax_tie_break():
    assert sslv.argmax_class([0.5, 0.5]) == 0
    assert sslv.argmax_class([0.1, 0.7, 0.2]) == 1


def test_dice_score():
    assert sslv.dice_score([1, 1, 0, 0], [1, 1, 0, 0], 1) == 1.0
    assert sslv.dice_score([1, 1, 1, 1, 0, 0], [1, 1, 0, 0, 1, 1], 1) == 0.5


def test_classification_metrics():
    report = sslv.classification_metrics([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert report["accuracy"] == 0.75
    assert abs(report["macro_f1"] - (2 / 3 + 0.8) / 2) < 1e-9


def test_reliability_score_worked_value():
    got = sslv.reliability_score(0.6, 0.8, [0.9, 0.1])
    assert abs(got - 0.402353) < 1e-6


def test_retain_top_half():
    kept = sslv.retain_top_half([("a", 0.4), ("b", 0.1), ("c", 0.3), ("d", 0.2)])
    assert kept == ["a", "c"]


def test_samplers_are_deterministic():
    assert sslv.uniform_sample(8, 4) == [1, 3, 5, 7]
    a = sslv.segment_random_sample(24, 6, seed=9)
    b = sslv.segment_random_sample(24, 6, seed=9)
    assert a == b
    long_view, short_view = sslv.long_short_sample(64, 8, 16, seed=3)
    assert long_view == [4, 12, 20, 28, 36, 44, 52, 60]
    assert len(short_view) == 8


def test_prototype_store():
    store = sslv.PrototypeStore(2, 3, 0.9)
    store.update(0, [0.0, 0.0, 0.0])
    store.update(0, [1.0, 1.0, 1.0])
    assert store.prototype(0) == pytest.approx([0.1, 0.1, 0.1])
    assert store.hard_negative([0.0, 0.0, 0.0], 0) is None
    store.update(1, [5.0, 5.0, 5.0])
    assert store.hard_negative([0.0, 0.0, 0.0], 0) == 1


def test_losses():
    assert sslv.clp_triplet_loss([0.0], [0.5], [0.1], 0.2) == pytest.approx(0.6)
    loss, counted = sslv.tcr_loss([0.9, 0.1], [0.5, 0.5], 0.8)
    assert counted
    assert loss == pytest.approx(math.log(2.0))
    loss, counted = sslv.tcr_loss([0.6, 0.4], [0.5, 0.5], 0.8)
    assert not counted and loss == 0.0


def test_cac_and_pseudo_mask():
    thresholds = sslv.cac_thresholds([[0.5, 0.7, 0.9], []], 25.0, 0.5)
    assert thresholds[0] == pytest.approx(0.6)
    assert thresholds[1] == 0.5

    probs = np.zeros((2, 1, 2))
    probs[:, 0, 0] = [0.9, 0.1]
    probs[:, 0, 1] = [0.6, 0.4]
    mask, fraction = sslv.generate_pseudo_mask(probs, [0.7, 0.7])
    assert mask[0, 0] == 0
    assert mask[0, 1] == sslv.IGNORE
    assert fraction == pytest.approx(0.5)


def test_synthetic_datasets():
    clips, labels = sslv.generate_clip_dataset(
        num_classes=2, clips_per_class=2, frames=4, height=8, width=8, seed=7
    )
    assert clips.shape == (4, 4, 8, 8, 3)
    assert list(labels) == [0, 0, 1, 1]
    assert clips.min() >= 0.0 and clips.max() <= 1.0
    again, _ = sslv.generate_clip_dataset(
        num_classes=2, clips_per_class=2, frames=4, height=8, width=8, seed=7
    )
    assert np.array_equal(clips, again)

    images, masks = sslv.generate_seg_dataset(num_images=3, height=16, width=16, seed=5)
    assert images.shape == (3, 16, 16, 3)
    assert masks.shape == (3, 16, 16)
    assert set(np.unique(masks)).issubset({0, 1, 2})


def test_run_experiment(tmp_path):
    config = tmp_path / "config.toml"
    config.write_text(
        "\n".join(
            [
                'method = "supervised"',
                "seeds = [1]",
                "[dataset]",
                "num_classes = 2",
                "clips_per_class = 4",
                "frames = 6",
                "height = 8",
                "width = 8",
                "seed = 3",
                "[split]",
                "labeled_fraction = 0.3",
                "val_fraction = 0.0",
                "test_fraction = 0.3",
                "[model]",
                "embed_dim = 4",
                "conv1_channels = 2",
                "conv2_channels = 3",
                "frames_per_view = 3",
                "[train]",
                "epochs = 2",
                "batch_size = 2",
                "",
            ]
        )
    )
    aggregate = sslv.run_experiment(str(config), str(tmp_path / "run"))
    text = (tmp_path / "run" / "aggregate.csv").read_text()
    assert aggregate.endswith("aggregate.csv")
    assert text.splitlines()[0].startswith("method,seed,split")
    assert "supervised,1,test" in text
