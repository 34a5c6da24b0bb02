import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from enfnet import ops
from enfnet.config import ConfigError, LossWeights
from enfnet.gradcheck import finite_diff_check
from enfnet.losses import boundary_map, cross_entropy_loss, iou_boundary_loss, total_loss
from enfnet.tensor import ShapeError, Tensor

EPS = 1e-7
unit_maps = arrays(np.float64, (1, 1, 6, 6), elements=st.floats(0.0, 1.0))
binary_maps = arrays(np.float64, (1, 1, 6, 6), elements=st.sampled_from([0.0, 1.0]))


class TestCrossEntropy:
    def test_perfect_prediction(self, rng):
        gt = (rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(float)
        assert cross_entropy_loss(gt, gt).item() == pytest.approx(-math.log(1 - EPS), rel=1e-9)
        assert cross_entropy_loss(gt, gt).item() == pytest.approx(1e-7, rel=1e-6)

    def test_half_is_ln2(self, rng):
        gt = (rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(float)
        assert cross_entropy_loss(np.full(gt.shape, 0.5), gt).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_clamp_floor(self):
        loss = cross_entropy_loss(np.ones((1, 1, 4, 4)), np.zeros((1, 1, 4, 4))).item()
        assert loss == pytest.approx(-math.log(EPS), rel=1e-12)
        assert loss == pytest.approx(16.118, abs=5e-4)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cross_entropy_loss(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 5)))

    @settings(max_examples=50, deadline=None)
    @given(unit_maps, binary_maps)
    def test_nonnegative(self, pred, gt):
        assert cross_entropy_loss(pred, gt).item() >= 0

    @settings(max_examples=50, deadline=None)
    @given(unit_maps, binary_maps, st.floats(0.05, 0.95))
    def test_monotone_toward_gt(self, pred, gt, step):
        closer = pred + step * (gt - pred)
        assert cross_entropy_loss(closer, gt).item() <= cross_entropy_loss(pred, gt).item()


class TestBoundaryMap:
    @pytest.mark.parametrize("c", [0.0, 0.3, 0.1 + 0.2, 1.0])
    def test_constant_is_zero(self, c):
        assert np.all(boundary_map(np.full((1, 1, 7, 9), c)).data == 0.0)

    def test_step(self):
        x = np.zeros((1, 1, 8, 8))
        x[..., 4:] = 1.0
        b = boundary_map(x).data[0, 0]
        np.testing.assert_allclose(b[:, 3:5], math.tanh(4.0), atol=1e-8)
        assert np.all(b[:, :3] == 0) and np.all(b[:, 5:] == 0)
        assert math.tanh(4.0) == pytest.approx(0.9993, abs=1e-4)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (1, 1, 5, 5), elements=st.floats(-1e3, 1e3)))
    def test_range(self, x):
        b = boundary_map(x).data
        assert np.all(b >= 0) and np.all(b <= 1)

    def test_strictly_below_one_on_unit_maps(self, rng):
        b = boundary_map(rng.uniform(size=(1, 1, 16, 16))).data
        assert b.max() < 1

    def test_rejects_multichannel(self):
        with pytest.raises(ShapeError):
            boundary_map(np.zeros((1, 2, 4, 4)))


class TestOverlapLoss:
    def test_identical(self):
        c = np.zeros((1, 1, 4, 4))
        c[0, 0, 1, :3] = 1
        assert iou_boundary_loss(c, c).item() == pytest.approx(1 - 6 / (6 + 1e-8), abs=1e-15)
        assert iou_boundary_loss(c, c).item() < 1e-8

    def test_disjoint(self):
        a, b = np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4))
        a[0, 0, 0] = 1
        b[0, 0, 3] = 1
        assert iou_boundary_loss(a, b).item() == 1.0

    def test_half_overlap_example(self):
        a, b = np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4))
        a[0, 0, 0, :] = 1
        b[0, 0, 0, :2] = 1
        b[0, 0, 3, :2] = 1
        assert iou_boundary_loss(a, b).item() == pytest.approx(1 - 2 * 2 / 8, abs=1e-8)

    @settings(max_examples=80, deadline=None)
    @given(unit_maps, unit_maps)
    def test_symmetric_and_bounded(self, a, b):
        ab, ba = iou_boundary_loss(a, b).item(), iou_boundary_loss(b, a).item()
        assert ab == ba
        assert 0.0 <= ab <= 1.0


class TestTotalLoss:
    def test_weights_default_to_one(self):
        w = LossWeights()
        assert (w.lam, w.gamma) == (1.0, 1.0)

    def test_gamma_zero_is_cross_entropy(self, rng):
        pred, gt = rng.uniform(size=(1, 1, 8, 8)), (rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(float)
        terms = total_loss(pred, gt, LossWeights(gamma=0.0))
        assert terms.total.item() == cross_entropy_loss(pred, gt).item()

    def test_sum_of_terms(self, rng):
        pred, gt = rng.uniform(size=(1, 1, 8, 8)), (rng.uniform(size=(1, 1, 8, 8)) > 0.5).astype(float)
        t = total_loss(pred, gt, LossWeights(lam=2.0, gamma=0.5))
        assert t.total.item() == pytest.approx(2.0 * t.cross_entropy.item() + 0.5 * t.boundary.item(), rel=1e-15)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(gamma=-1.0)

    @settings(max_examples=50, deadline=None)
    @given(unit_maps, binary_maps)
    def test_finite(self, pred, gt):
        assert math.isfinite(total_loss(pred, gt).total.item())

    def test_extreme_predictions_finite(self):
        gt = np.zeros((1, 1, 6, 6))
        gt[..., 2:4, 2:4] = 1
        for p in (np.zeros(gt.shape), np.ones(gt.shape), 1 - gt, gt):
            assert math.isfinite(total_loss(p, gt).total.item())

    def test_gradient_wrt_logits(self, rng):
        gt = np.zeros((1, 1, 48, 48))
        gt[..., 12:36, 12:36] = 1

        def fn(logits):
            fg = ops.slice_channels(ops.pixel_softmax2(logits), 0, 1)
            return total_loss(fg, Tensor(gt)).total

        err = finite_diff_check(fn, [rng.standard_normal((1, 2, 48, 48))], max_entries=60, rng=rng)
        assert err < 1e-4
