import numpy as np
import pytest
from scipy import stats

from boxdenoise3d import tnsr
from boxdenoise3d.errors import ConfigError
from boxdenoise3d.geom3d import Box3D, iou_bev
from boxdenoise3d.kitti_io import parse_calib_file, parse_label_file
from boxdenoise3d.synthgen import SceneConfig, _noisy_anchor, generate_scene, scene_rng, write_scene


def test_deterministic_per_index():
    cfg = SceneConfig(seed=11)
    a, b = generate_scene(cfg, 5), generate_scene(cfg, 5)
    assert a.anchors == b.anchors and a.gt_boxes == b.gt_boxes
    assert np.array_equal(a.fm.data, b.fm.data)
    c = generate_scene(cfg, 6)
    assert c.gt_boxes != a.gt_boxes


def test_seed_changes_scene():
    assert generate_scene(SceneConfig(seed=1), 0).gt_boxes != generate_scene(SceneConfig(seed=2), 0).gt_boxes


def test_zero_noise_anchors_are_gts():
    cfg = SceneConfig(seed=4, anchor_sigma=(0.0, 0.0, 0.0), dim_sigma=0.0)
    for i in range(5):
        sc = generate_scene(cfg, i)
        for a, g in zip(sc.anchors, sc.gt_boxes):
            assert a.center == g.center and a.dims == g.dims and a.yaw == g.yaw


def test_scene_constraints():
    cfg = SceneConfig(seed=9)
    for i in range(20):
        sc = generate_scene(cfg, i)
        assert cfg.n_objects[0] <= len(sc.gts) <= cfg.n_objects[1]
        for j, g in enumerate(sc.gts):
            lo, hi = cfg.depth_range
            assert lo <= g.box.center.z <= hi
            assert 0 <= g.truncation <= 0.5
            for o in sc.gts[j + 1:]:
                assert iou_bev(g.box, o.box) <= cfg.max_bev_iou


def test_anchor_noise_chi_square():
    sigma = (0.5, 0.1, 0.5)
    cfg = SceneConfig(anchor_sigma=sigma, dim_sigma=0.05)
    rng = scene_rng(123, 0)
    gt = Box3D((1.0, 1.0, 20.0), (1.5, 1.6, 3.9), 0.2)
    n = 10_000
    res = np.array([np.subtract(_noisy_anchor(rng, gt, cfg).center, gt.center) for _ in range(n)]) / sigma
    # sum of squared standardized residuals per axis ~ chi2(n)
    for k in range(3):
        ss = float((res[:, k] ** 2).sum())
        p = stats.chi2.sf(ss, n)
        assert 1e-3 < p < 1 - 1e-3
        assert abs(res[:, k].mean()) < 4 / np.sqrt(n)


def test_appearance_ablation_zero_map():
    sc = generate_scene(SceneConfig(seed=2, appearance=False), 0)
    assert not sc.fm.data.any()
    assert sc.fm.data.shape == (94, 311, 16)


def test_feature_noise_level():
    cfg = SceneConfig(seed=2, feature_noise=0.02)
    noisy = generate_scene(cfg, 0).fm.data
    clean = generate_scene(SceneConfig(seed=2, feature_noise=0.0), 0).fm.data
    assert np.std(noisy - clean) == pytest.approx(0.02, rel=0.02)


def test_config_roundtrip_and_unknown_keys():
    cfg = SceneConfig(seed=3, class_weights={"Car": 2.0, "Cyclist": 1.0})
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        SceneConfig.from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(ConfigError):
        SceneConfig(depth_range=(10.0, 5.0))


def test_write_scene_roundtrip(tmp_path):
    sc = generate_scene(SceneConfig(seed=8), 3)
    write_scene(sc, tmp_path)
    labels = parse_label_file((tmp_path / "label_2" / "000003.txt").read_text())
    assert len(labels) == len(sc.gts)
    for rec, g in zip(labels, sc.gts):
        assert rec.type == g.category
        assert rec.dims == pytest.approx(g.box.dims, abs=1e-6)
    preds = parse_label_file((tmp_path / "pred" / "000003.txt").read_text())
    assert [p.score for p in preds] == pytest.approx([a.score for a in sc.anchors], abs=1e-6)
    cam = parse_calib_file((tmp_path / "calib" / "000003.txt").read_text())
    np.testing.assert_allclose(cam.P, sc.cam.P, atol=1e-6)
    fm = tnsr.load(tmp_path / "features" / "000003.tnsr")
    assert fm.dtype == np.float32
    np.testing.assert_allclose(fm, sc.fm.data, atol=1e-6)
