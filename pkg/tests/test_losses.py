import numpy as np
import pytest

from tapg.boundary import BoundaryHeatmaps
from tapg.data import LabelConfidenceMap, valid_cell_mask
from tapg.losses import (
    cbg_loss,
    prb_loss,
    smooth_l1,
    smooth_l1_grad,
    total_loss,
    weighted_logistic_grad,
    weighted_logistic_loss,
)
from tapg.relation import ConfidenceMaps
from tapg.sampling import SampledBatch
from tapg.data import BoundaryLabels


class TestWeightedLogisticLoss:
    def test_half_predictions_mixed_labels(self):
        g = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
        p = np.full(5, 0.5)
        assert weighted_logistic_loss(p, g) == pytest.approx(2 * np.log(2), abs=1e-9)

    def test_perfect_prediction_bound(self):
        g = np.array([1.0, 0.0, 1.0])
        loss = weighted_logistic_loss(g, g)
        assert loss <= 2 * -np.log(1 - 1e-7) + 1e-12

    def test_all_positive_drops_negative_term(self):
        g = np.ones(4)
        assert weighted_logistic_loss(np.full(4, 0.5), g) == pytest.approx(
            np.log(2), abs=1e-12
        )

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            weighted_logistic_loss(np.ones(3), np.ones(4))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, 40)
        g = (rng.uniform(size=40) > 0.6).astype(float)
        base = weighted_logistic_loss(p, g)
        for _ in range(5):
            perm = rng.permutation(40)
            assert weighted_logistic_loss(p[perm], g[perm]) == pytest.approx(
                base, abs=1e-12
            )

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            n = int(rng.integers(3, 30))
            p = rng.uniform(0.05, 0.95, n)
            g = (rng.uniform(size=n) > 0.5).astype(float)
            if g.sum() == 0 or g.sum() == n:
                g[0] = 1.0 - g[0]
            grad = weighted_logistic_grad(p, g)
            h = 1e-6
            for k in range(n):
                dp = p.copy()
                dp[k] += h
                up = weighted_logistic_loss(dp, g)
                dp[k] -= 2 * h
                down = weighted_logistic_loss(dp, g)
                fd = (up - down) / (2 * h)
                assert abs(fd - grad[k]) <= 1e-5 * max(abs(fd), abs(grad[k]))


class TestCbgLoss:
    def test_half_heads_mixed_labels(self):
        labels = BoundaryLabels(
            g_start=np.array([1.0, 0.0, 1.0, 0.0]),
            g_end=np.array([0.0, 1.0, 0.0, 1.0]),
        )
        heads = [
            BoundaryHeatmaps(start=np.full(4, 0.5), end=np.full(4, 0.5))
            for _ in range(2)
        ]
        assert cbg_loss(heads, labels) == pytest.approx(4 * np.log(2), abs=1e-9)

    def test_degenerate_all_negative_labels(self):
        labels = BoundaryLabels(g_start=np.zeros(4), g_end=np.zeros(4))
        heads = [BoundaryHeatmaps(start=np.full(4, 0.5), end=np.full(4, 0.5))]
        # positive terms dropped: each sequence contributes ln 2
        assert cbg_loss(heads, labels) == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_perfect_heads_near_zero(self):
        labels = BoundaryLabels(
            g_start=np.array([1.0, 0.0, 0.0]), g_end=np.array([0.0, 0.0, 1.0])
        )
        heads = [BoundaryHeatmaps(start=labels.g_start, end=labels.g_end)]
        assert cbg_loss(heads, labels) < 1e-6


class TestSmoothL1:
    def test_branch_values(self):
        assert smooth_l1(np.array([0.5]), np.array([0.0])) == 0.125
        assert smooth_l1(np.array([2.0]), np.array([0.0])) == 1.5

    def test_zero_residual(self):
        x = np.array([0.3, 0.7, 0.1])
        assert smooth_l1(x, x) == 0.0

    def test_gradient(self):
        pred = np.array([0.5, 2.0, -3.0, -0.25])
        grad = smooth_l1_grad(pred, np.zeros(4))
        np.testing.assert_allclose(grad, np.array([0.5, 1.0, -1.0, -0.25]) / 4)


def toy_maps_and_labels():
    mask = valid_cell_mask(3, 4)
    cr = np.zeros((3, 4))
    cc = np.zeros((3, 4))
    values = np.zeros((3, 4))
    cr[mask] = 0.4
    cc[mask] = 0.6
    values[1, 0] = 0.9  # positive
    values[2, 1] = 0.5  # mid-range: regression support only
    maps = ConfidenceMaps(cc=cc, cr=cr, valid_mask=mask)
    labels = LabelConfidenceMap(values=values, valid_mask=mask)
    return maps, labels


class TestPrbLoss:
    def test_zero_residual_regression(self):
        maps, labels = toy_maps_and_labels()
        maps.cr = labels.values.copy()
        batch = SampledBatch(positives=[(1, 0)], negatives=[(0, 0)])
        l_reg, _ = prb_loss(maps, labels, batch)
        assert l_reg == 0.0

    def test_three_cell_oracle(self):
        # support = positives-by-label {(1,0), (2,1)} plus sampled negative
        # (0,0); residuals 0.4-0.9, 0.4-0.5, 0.4-0.0
        maps, labels = toy_maps_and_labels()
        batch = SampledBatch(positives=[(1, 0)], negatives=[(0, 0)])
        l_reg, l_cls = prb_loss(maps, labels, batch)
        expected_reg = (0.5 * 0.5**2 + 0.5 * 0.1**2 + 0.5 * 0.4**2) / 3
        assert l_reg == pytest.approx(expected_reg, abs=1e-12)
        # classification: cells (1,0) target 1, (0,0) target 0, p = 0.6
        expected_cls = -(np.log(0.6) + np.log(0.4))
        assert l_cls == pytest.approx(expected_cls, abs=1e-12)

    def test_empty_batch_rejected(self):
        maps, labels = toy_maps_and_labels()
        with pytest.raises(ValueError, match="empty"):
            prb_loss(maps, labels, SampledBatch(positives=[], negatives=[]))

    def test_invalid_cell_rejected(self):
        maps, labels = toy_maps_and_labels()
        with pytest.raises(ValueError, match="not valid"):
            prb_loss(maps, labels, SampledBatch(positives=[(2, 3)], negatives=[]))


class TestTotalLoss:
    def test_beta_arithmetic(self):
        report = total_loss(1.0, 0.06, 0.04, 0.0)
        assert report.total == pytest.approx(2.0, abs=1e-12)
        assert report.l_prb == pytest.approx(0.1, abs=1e-12)

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, 0.0).total == 0.0

    def test_gamma_term(self):
        # single parameter of value 2: l2 = 4 contributes 0.0004
        report = total_loss(0.0, 0.0, 0.0, 4.0)
        assert report.total == pytest.approx(0.0004, abs=1e-15)

    def test_identity_invariant(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            l_cbg, l_reg, l_cls, l2 = rng.uniform(0, 3, 4)
            r = total_loss(l_cbg, l_reg, l_cls, l2)
            assert r.total == pytest.approx(r.l_cbg + r.beta * r.l_prb + r.gamma * r.l2, abs=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            total_loss(np.nan, 0.0, 0.0, 0.0)
