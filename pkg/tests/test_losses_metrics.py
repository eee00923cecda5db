import math

import numpy as np
import pytest
import torch

from ndsseg.errors import ShapeError, ValidationError
from ndsseg.losses import (
    LossConfig,
    combined_loss_t,
    dice_loss,
    dice_loss_t,
    focal_loss,
    focal_loss_t,
    segmentation_scores,
    sequence_loss,
    sequence_loss_t,
)
from ndsseg.raster import Raster


def mask_raster(arr):
    return Raster(np.asarray(arr, dtype=np.float32)[:, :, None])


def brute_force_focal(pred, target, alpha=0.25, gamma=2.0):
    """Pixel-loop oracle, independent of the tensor implementation."""
    total = 0.0
    h, w = pred.shape
    for r in range(h):
        for c in range(w):
            p = min(max(pred[r, c], 1e-7), 1 - 1e-7)
            p_t = p if target[r, c] == 1 else 1 - p
            total += -alpha * (1 - p_t) ** gamma * math.log(p_t)
    return total / (h * w)


def brute_force_dice(pred, target, smooth=1.0):
    inter = p_sum = y_sum = 0.0
    h, w = pred.shape
    for r in range(h):
        for c in range(w):
            inter += pred[r, c] * target[r, c]
            p_sum += pred[r, c]
            y_sum += target[r, c]
    return 1.0 - (2.0 * inter + smooth) / (p_sum + y_sum + smooth)


def brute_force_scores(pred, target, thresh=0.5):
    tp = p_n = g_n = 0
    h, w = pred.shape
    for r in range(h):
        for c in range(w):
            p = pred[r, c] >= thresh
            g = target[r, c] > 0.5
            tp += p and g
            p_n += p
            g_n += g
    if p_n == 0 and g_n == 0:
        return 1.0, 1.0
    union = p_n + g_n - tp
    return (tp / union if union else 0.0), 2 * tp / (p_n + g_n)


class TestFocal:
    def test_single_pixel_hand_value(self):
        # 0.25 * 0.1^2 * (-ln 0.9)
        loss = focal_loss(mask_raster([[0.9]]), mask_raster([[1.0]]))
        assert loss == pytest.approx(0.25 * 0.01 * -math.log(0.9), rel=1e-5)

    def test_reduces_to_bce(self):
        cfg = LossConfig(focal_alpha=1.0, focal_gamma=0.0)
        loss = focal_loss(mask_raster([[0.5]]), mask_raster([[1.0]]), cfg)
        assert loss == pytest.approx(math.log(2.0), rel=1e-9)

    def test_perfect_prediction_near_zero(self):
        pred = mask_raster(np.full((8, 8), 1.0 - 1e-7))
        target = mask_raster(np.ones((8, 8)))
        assert focal_loss(pred, target) <= 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            focal_loss(mask_raster(np.zeros((2, 2))), mask_raster(np.zeros((3, 3))))


class TestDice:
    def test_perfect_overlap(self):
        target = mask_raster(np.ones((4, 4)))
        # 1 - (2n + s)/(2n + s) with s small
        cfg = LossConfig(dice_smooth=1e-6)
        assert dice_loss(target, target, cfg) == pytest.approx(0.0, abs=1e-7)

    def test_half_probability_hand_value(self):
        n = 16
        pred = mask_raster(np.full((4, 4), 0.5))
        target = mask_raster(np.ones((4, 4)))
        cfg = LossConfig(dice_smooth=1e-9)
        assert dice_loss(pred, target, cfg) == pytest.approx(1.0 / 3.0, rel=1e-6)

    def test_all_zero_pred_hand_value(self):
        n, s = 16, 1.0
        pred = mask_raster(np.zeros((4, 4)))
        target = mask_raster(np.ones((4, 4)))
        assert dice_loss(pred, target) == pytest.approx(1.0 - s / (n + s), rel=1e-9)


class TestSequenceLoss:
    def test_equal_steps(self, rng):
        pred = mask_raster(rng.uniform(size=(4, 4)))
        target = mask_raster((rng.uniform(size=(4, 4)) > 0.5).astype(float))
        single = focal_loss(pred, target) + dice_loss(pred, target)
        assert sequence_loss([pred] * 3, target) == pytest.approx(single, rel=1e-12)

    def test_arithmetic_mean(self, rng):
        target = mask_raster((rng.uniform(size=(6, 6)) > 0.5).astype(float))
        preds = [mask_raster(rng.uniform(size=(6, 6))) for _ in range(3)]
        per_step = [focal_loss(p, target) + dice_loss(p, target) for p in preds]
        assert sequence_loss(preds, target) == pytest.approx(np.mean(per_step), rel=1e-12)

    def test_single_mask_degenerate(self, rng):
        pred = mask_raster(rng.uniform(size=(4, 4)))
        target = mask_raster(np.ones((4, 4)))
        assert sequence_loss([pred], target) == pytest.approx(
            focal_loss(pred, target) + dice_loss(pred, target), rel=1e-12
        )

    def test_wrong_count(self, rng):
        pred = mask_raster(rng.uniform(size=(4, 4)))
        with pytest.raises(ValidationError):
            sequence_loss([pred] * 4, pred)


class TestScores:
    def test_identical_masks(self):
        m = mask_raster([[1.0, 0.0], [0.0, 1.0]])
        assert segmentation_scores(m, m) == (1.0, 1.0)

    def test_disjoint_masks(self):
        p = mask_raster([[1.0, 0.0]])
        g = mask_raster([[0.0, 1.0]])
        assert segmentation_scores(p, g) == (0.0, 0.0)

    def test_partial_overlap(self):
        p = mask_raster([[1.0, 1.0, 0.0]])
        g = mask_raster([[0.0, 1.0, 1.0]])
        iou, f1 = segmentation_scores(p, g)
        assert iou == pytest.approx(1.0 / 3.0)
        assert f1 == pytest.approx(0.5)

    def test_both_empty(self):
        z = mask_raster(np.zeros((3, 3)))
        assert segmentation_scores(z, z) == (1.0, 1.0)


class TestBruteForceOracles:
    def test_against_pixel_loops(self, rng):
        for _ in range(25):
            pred = rng.uniform(size=(8, 8))
            target = (rng.uniform(size=(8, 8)) > 0.6).astype(np.float64)
            pr, tr = mask_raster(pred), mask_raster(target)
            pred32 = pr.values[:, :, 0].astype(np.float64)
            target32 = tr.values[:, :, 0].astype(np.float64)
            assert focal_loss(pr, tr) == pytest.approx(
                brute_force_focal(pred32, target32), abs=1e-10)
            assert dice_loss(pr, tr) == pytest.approx(
                brute_force_dice(pred32, target32), abs=1e-10)
            iou, f1 = segmentation_scores(pr, tr)
            oracle_iou, oracle_f1 = brute_force_scores(pred32, target32)
            assert iou == pytest.approx(oracle_iou, abs=1e-10)
            assert f1 == pytest.approx(oracle_f1, abs=1e-10)

    def test_f1_iou_identity(self, rng):
        for _ in range(50):
            pred = mask_raster((rng.uniform(size=(8, 8)) > 0.5).astype(float))
            target = mask_raster((rng.uniform(size=(8, 8)) > 0.5).astype(float))
            iou, f1 = segmentation_scores(pred, target)
            assert iou <= f1 + 1e-12
            assert f1 == pytest.approx(2 * iou / (1 + iou), abs=1e-12)


class TestProperties:
    def test_nonnegative_and_permutation_invariant(self, rng):
        pred = rng.uniform(size=(6, 6))
        target = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
        perm = rng.permutation(36)
        pp = pred.ravel()[perm].reshape(6, 6)
        tp = target.ravel()[perm].reshape(6, 6)
        assert focal_loss(mask_raster(pred), mask_raster(target)) >= 0
        assert focal_loss(mask_raster(pp), mask_raster(tp)) == pytest.approx(
            focal_loss(mask_raster(pred), mask_raster(target)), rel=1e-12)
        assert dice_loss(mask_raster(pp), mask_raster(tp)) == pytest.approx(
            dice_loss(mask_raster(pred), mask_raster(target)), rel=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        pred = torch.tensor(rng.uniform(0.05, 0.95, size=(8, 8)), requires_grad=True)
        target = torch.tensor((rng.uniform(size=(8, 8)) > 0.5).astype(np.float64))
        loss = combined_loss_t(pred, target)
        loss.backward()
        analytic = pred.grad.clone()
        step = 1e-6
        with torch.no_grad():
            for r, c in [(0, 0), (3, 5), (7, 7), (2, 1)]:
                orig = float(pred[r, c])
                pred[r, c] = orig + step
                up = float(combined_loss_t(pred, target))
                pred[r, c] = orig - step
                down = float(combined_loss_t(pred, target))
                pred[r, c] = orig
                numeric = (up - down) / (2 * step)
                assert float(analytic[r, c]) == pytest.approx(numeric, abs=1e-4)
