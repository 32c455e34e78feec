import numpy as np
import pytest

from voxmamba.errors import ConfigError, ShapeError
from voxmamba.metrics import (LabelVolume, boundary_mask, dice, evaluate,
                              hd95, iou, volume_diagonal)

from oracles import boundary_points_loops, dice_loops, hd95_loops, iou_loops


def _random_mask(rng, dims=(16, 16, 16), p=0.5):
    return rng.random(dims) < p


def test_dice_iou_match_loop_oracle():
    rng = np.random.default_rng(50)
    for _ in range(20):
        a = _random_mask(rng, (8, 8, 8), rng.uniform(0.05, 0.9))
        b = _random_mask(rng, (8, 8, 8), rng.uniform(0.05, 0.9))
        assert dice(a, b) == dice_loops(a, b)
        assert iou(a, b) == iou_loops(a, b)


def test_dice_iou_identity():
    # 2*iou/(1+iou) == dice, algebraically and numerically
    rng = np.random.default_rng(51)
    for _ in range(1000):
        a = _random_mask(rng, (6, 6, 6), rng.uniform(0.02, 0.98))
        b = _random_mask(rng, (6, 6, 6), rng.uniform(0.02, 0.98))
        i = iou(a, b)
        assert abs(dice(a, b) - 2 * i / (1 + i)) < 1e-12


def test_empty_mask_conventions():
    z = np.zeros((4, 4, 4), dtype=bool)
    o = np.ones((4, 4, 4), dtype=bool)
    assert dice(z, z) == 1.0
    assert iou(z, z) == 1.0
    assert dice(z, o) == 0.0
    assert hd95(z, z) == (0.0, True)
    v, defined = hd95(z, o)
    assert not defined
    assert v == volume_diagonal((4, 4, 4))


def test_dims_mismatch():
    with pytest.raises(ShapeError):
        dice(np.zeros((4, 4, 4), bool), np.zeros((4, 4, 5), bool))


def test_boundary_mask_matches_loop_oracle():
    rng = np.random.default_rng(52)
    for _ in range(5):
        m = _random_mask(rng, (7, 6, 5), 0.6)
        pts = {tuple(p) for p in boundary_points_loops(m, (1.0, 1.0, 1.0))}
        got = {tuple(p) for p in
               np.argwhere(boundary_mask(m)).astype(np.float64)}
        assert pts == got


def test_boundary_includes_volume_edge():
    m = np.ones((3, 3, 3), dtype=bool)
    b = boundary_mask(m)
    assert b.sum() == 26  # everything but the center voxel
    assert not b[1, 1, 1]


def test_hd95_golden_single_voxels():
    p = np.zeros((8, 8, 8), dtype=bool)
    gt = np.zeros((8, 8, 8), dtype=bool)
    p[0, 0, 0] = True
    gt[0, 0, 3] = True
    v, defined = hd95(p, gt)
    assert defined and abs(v - 3.0) < 1e-12


def test_hd95_identical_masks_zero():
    rng = np.random.default_rng(53)
    m = _random_mask(rng, (10, 10, 10), 0.3)
    v, defined = hd95(m, m)
    assert defined and v == 0.0


def test_hd95_matches_brute_force_on_phantoms():
    rng = np.random.default_rng(54)
    cases = []
    for _ in range(6):
        a = np.zeros((16, 16, 16), dtype=bool)
        b = np.zeros((16, 16, 16), dtype=bool)
        c1 = rng.integers(2, 10, 3)
        c2 = c1 + rng.integers(-2, 3, 3)
        a[c1[0]:c1[0] + 4, c1[1]:c1[1] + 5, c1[2]:c1[2] + 3] = True
        b[c2[0]:c2[0] + 5, c2[1]:c2[1] + 4, c2[2]:c2[2] + 4] = True
        cases.append((a, b))
    for a, b in cases:
        got, _ = hd95(a, b)
        want, _ = hd95_loops(a, b)
        assert abs(got - want) < 1e-9


def test_hd95_respects_spacing():
    p = np.zeros((8, 8, 8), dtype=bool)
    gt = np.zeros((8, 8, 8), dtype=bool)
    p[0, 0, 0] = True
    gt[3, 0, 0] = True
    spacing = (6.35, 1.52, 1.52)
    v, _ = hd95(p, gt, spacing)
    assert abs(v - 3 * 6.35) < 1e-9
    want, _ = hd95_loops(p, gt, spacing)
    assert abs(v - want) < 1e-9


def test_dilation_toward_gt_never_decreases_dice():
    from scipy import ndimage
    rng = np.random.default_rng(55)
    gt = np.zeros((12, 12, 12), dtype=bool)
    gt[3:9, 3:9, 3:9] = True
    p = np.zeros_like(gt)
    p[5:7, 5:7, 5:7] = True
    prev = dice(p, gt)
    for _ in range(3):
        p = ndimage.binary_dilation(p) & gt
        d = dice(p, gt)
        assert d >= prev
        prev = d


def test_label_volume_validation():
    with pytest.raises(ShapeError):
        LabelVolume(np.zeros((4, 4)))
    with pytest.raises(ConfigError):
        LabelVolume(np.full((4, 4, 4), 3), n_classes=2)
    with pytest.raises(ConfigError):
        LabelVolume(np.zeros((4, 4, 4), int), spacing=(1.0, -1.0, 1.0))


def test_evaluate_report():
    labels_gt = np.zeros((8, 8, 8), dtype=np.uint8)
    labels_gt[2:5, 2:5, 2:5] = 1
    labels_p = np.zeros_like(labels_gt)
    labels_p[2:5, 2:5, 2:6] = 1
    rep = evaluate(LabelVolume(labels_p, n_classes=3),
                   LabelVolume(labels_gt, n_classes=3))
    # class 2 absent from both: excluded entirely
    assert rep.dsc[2] is None and rep.hd95[2] is None
    assert 0 < rep.dsc[1] < 1
    assert rep.mean_dsc == np.mean([rep.dsc[0], rep.dsc[1]])
    d = rep.to_dict()
    assert set(d["per_class"]) == {"0", "1", "2"}


def test_evaluate_flags_undefined_hd():
    gt = np.zeros((6, 6, 6), dtype=np.uint8)
    gt[1:3, 1:3, 1:3] = 1
    pred = np.zeros_like(gt)  # class 1 never predicted
    rep = evaluate(LabelVolume(pred, n_classes=2), LabelVolume(gt, n_classes=2))
    assert rep.undefined_hd == [1]
    assert rep.hd95[1] == volume_diagonal((6, 6, 6))


def test_evaluate_rejects_mismatched_classes():
    a = LabelVolume(np.zeros((4, 4, 4), np.uint8), n_classes=2)
    b = LabelVolume(np.zeros((4, 4, 4), np.uint8), n_classes=3)
    with pytest.raises(ConfigError):
        evaluate(a, b)
