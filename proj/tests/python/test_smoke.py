import json
import math

import numpy as np
import pytest

import fsra_lab as fl


def test_region_sizes_law():
    for n_patches in range(1, 65):
        for n in range(1, n_patches + 1):
            sizes = fl.region_sizes(n_patches, n)
            assert len(sizes) == n
            assert sum(sizes) == n_patches
            assert all(s == n_patches // n for s in sizes[:-1])
    with pytest.raises(ValueError):
        fl.region_sizes(4, 5)


def test_partition_example_and_ties():
    assert fl.partition(np.array([[0.9, 0.1, 0.8, 0.2]]), 2).tolist() == [[0, 1, 0, 1]]
    assert fl.partition(np.zeros((1, 4)), 2).tolist() == [[0, 0, 1, 1]]


def test_losses():
    assert fl.id_loss(np.zeros((3, 5)), [0, 1, 4]) == pytest.approx(math.log(5), abs=1e-12)
    a = np.random.default_rng(0).normal(size=(4, 6))
    b = np.random.default_rng(1).normal(size=(4, 6))
    assert fl.kl_mutual(a, a) == pytest.approx(0.0, abs=1e-12)
    assert fl.kl_mutual(a, b) == pytest.approx(fl.kl_mutual(b, a), abs=1e-12)
    feats = np.array([[0.0], [1.0], [3.0]])
    loss = fl.cross_view_triplet(feats, [0, 0, 1], ["drone", "satellite", "satellite"], 3.0)
    assert loss == pytest.approx(3.0 + 1.0 - 3.0, abs=1e-12)


def test_metrics():
    r = fl.evaluate_distances(np.array([[0.1, 0.2, 0.3, 0.4]]), [3], [0, 3, 1, 3], [1, 2])
    assert r["ap"] == pytest.approx(0.5)
    assert r["recall"][1] == 0.0 and r["recall"][2] == 1.0


def test_pads():
    img = np.random.default_rng(2).random((8, 10, 3)).astype(np.float32)
    bp = fl.black_pad(img, 3)
    assert np.all(bp[:, :3] == 0) and np.array_equal(bp[:, 3:], img[:, :7])
    fp = fl.flip_pad(img, 3)
    assert np.array_equal(fp[:, :3], img[:, 2::-1]) and np.array_equal(fp[:, 3:], img[:, :7])
    with pytest.raises(ValueError):
        fl.black_pad(img, 10)


def test_train_eval_heat(tmp_path):
    data = tmp_path / "data"
    manifest = fl.synth_data(data, classes=3, drone_per_class=2, size=16, distractors=1, test_drone_per_class=1)
    assert json.loads(manifest.read_text())["seed"] == 7
    assert fl.epoch_image_count(data / "train", k=3) == 2 * 3 * 3
    assert fl.read_image(data / "train/satellite/0000/satellite_0.png").shape == (16, 16, 3)

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "model": {"backbone": {"image_size": 16, "patch_size": 4, "embed_dim": 16, "depth": 1, "heads": 2},
                  "head": {"hidden": 8}},
        "sampler": {"k": 2, "batch_size": 3},
        "train": {"epochs": 2, "seed": 1},
        "data": {"train_root": "data/train", "test_root": "data/test"},
        "out": str(tmp_path / "run"),
    }))
    ckpt = fl.train(cfg)
    assert ckpt.name == "ckpt_epoch_2.bin"
    with pytest.raises(fl.ConfigError):
        fl.train(cfg, ["regoins=2"])

    rep = fl.evaluate(ckpt, direction="d2s", pad_mode="BP", pad_widths=[0, 4])
    assert rep["queries"] == 3 and 0.0 <= rep["ap"] <= 1.0
    assert rep["robustness"][0]["delta_ap"] == 0.0
    assert fl.evaluate(ckpt, direction="s2d")["excluded"] == 1

    heat, region = fl.heat_map(ckpt, data / "test/drone/0000/drone_0.png", 3)
    assert heat.shape == (4, 4)
    assert sorted(np.bincount(region.ravel())[1:].tolist()) == sorted(fl.region_sizes(16, 3))
