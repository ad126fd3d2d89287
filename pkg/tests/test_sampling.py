import numpy as np
import pytest

from tapg.data import LabelConfidenceMap, valid_cell_mask
from tapg.sampling import (
    SamplerConfig,
    iou_balanced_sample,
    region_probabilities,
    scale_balanced_ratio,
    scale_balanced_sample,
)


def make_labels(length, duration_bins, positive_cells):
    """Every valid cell is a negative (value 0) except the given positives."""
    values = np.zeros((duration_bins, length))
    for j, i in positive_cells:
        values[j, i] = 0.9
    mask = valid_cell_mask(duration_bins, length)
    values[~mask] = 0.0
    return LabelConfidenceMap(values=values, valid_mask=mask)


class TestScaleBalancedRatio:
    def test_continuity_at_threshold(self):
        lam = 0.15
        assert scale_balanced_ratio(lam, lam) == pytest.approx(lam, abs=0)

    def test_identity_branch(self):
        for r in (0.2, 0.5, 1.0):
            assert scale_balanced_ratio(r, 0.15) == r

    def test_boost_branch_value(self):
        # 0.15 * exp(0.05 / 0.15 - 1) = 0.15 * exp(-2/3)
        expected = 0.15 * np.exp(-2.0 / 3.0)
        assert scale_balanced_ratio(0.05, 0.15) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.0770120, abs=1e-6)

    def test_zero_maps_to_zero(self):
        assert scale_balanced_ratio(0.0, 0.15) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            scale_balanced_ratio(1.2, 0.15)
        with pytest.raises(ValueError):
            scale_balanced_ratio(0.5, 0.0)

    def test_monotone_and_boosted_below_threshold(self):
        lam = 0.15
        grid = np.linspace(1e-4, 1.0, 400)
        mapped = np.array([scale_balanced_ratio(float(r), lam) for r in grid])
        assert np.all(np.diff(mapped) >= -1e-15)
        below = grid[grid <= lam]
        boosted = mapped[: len(below)]
        assert np.all(boosted >= below)
        assert np.all(boosted[below < lam] > below[below < lam])


class TestIouBalancedSample:
    def test_even_split_with_ample_candidates(self):
        positives = [(1, i) for i in range(10)]
        labels = make_labels(20, 10, positives)
        batch = iou_balanced_sample(labels, SamplerConfig(seed=0), 8)
        assert len(batch.positives) == 4
        assert len(batch.negatives) == 4
        assert batch.shortfall == 0
        assert set(batch.positives).isdisjoint(batch.negatives)

    def test_shrinks_and_reports_shortfall(self):
        labels = make_labels(20, 10, [(0, 0), (0, 1)])
        batch = iou_balanced_sample(labels, SamplerConfig(seed=1), 8)
        assert len(batch.positives) == 2
        assert len(batch.negatives) == 4
        assert batch.shortfall == 2

    def test_deterministic_under_seed(self):
        labels = make_labels(16, 8, [(2, i) for i in range(8)])
        a = iou_balanced_sample(labels, SamplerConfig(seed=5), 8)
        b = iou_balanced_sample(labels, SamplerConfig(seed=5), 8)
        assert a == b

    def test_no_candidates_rejected(self):
        values = np.full((4, 8), 0.5)  # all between the thresholds
        mask = valid_cell_mask(4, 8)
        values[~mask] = 0.0
        # masked zeros are not candidates either: restrict to valid cells
        labels = LabelConfidenceMap(values=values, valid_mask=mask)
        labels.values[mask] = 0.5
        with pytest.raises(ValueError, match="candidates"):
            iou_balanced_sample(labels, SamplerConfig(seed=0), 4)

    def test_ratio_near_one_over_seeds(self):
        positives = [(3, i) for i in range(12)]
        labels = make_labels(24, 12, positives)
        counts = np.zeros(2)
        for seed in range(200):
            batch = iou_balanced_sample(labels, SamplerConfig(seed=seed), 8)
            counts += (len(batch.positives), len(batch.negatives))
        assert counts[0] == counts[1]


class TestRegionProbabilities:
    def test_single_region_takes_all(self):
        cells = np.array([(1, 0), (2, 0), (3, 0)])  # all short durations
        probs, members = region_probabilities(cells, 100, SamplerConfig())
        np.testing.assert_allclose(probs, [1.0, 0.0, 0.0], atol=1e-12)
        assert len(members[0]) == 3

    def test_renormalized_boost_oracle(self):
        # counts 5 / 15 / 80 over 100 cells: ratios (0.05, 0.15, 0.80)
        # boosted: (0.15 exp(-2/3), 0.15, 0.80), then renormalized
        length = 100
        cells = (
            [(10, i) for i in range(5)]  # j/T = 0.10
            + [(50, i) for i in range(15)]  # 0.50
            + [(80, i) for i in range(80)]  # 0.80
        )
        probs, _ = region_probabilities(np.array(cells), length, SamplerConfig())
        boosted = np.array([0.15 * np.exp(-2.0 / 3.0), 0.15, 0.80])
        np.testing.assert_allclose(probs, boosted / boosted.sum(), atol=1e-12)

    def test_empty_region_mass_redistributed(self):
        cells = np.array([(10, 0), (10, 1), (80, 0), (80, 1)])
        probs, _ = region_probabilities(cells, 100, SamplerConfig())
        assert probs[1] == 0.0
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestScaleBalancedSample:
    def test_keeps_class_ratio(self):
        positives = [(2, i) for i in range(20)]
        labels = make_labels(30, 25, positives)
        batch = scale_balanced_sample(labels, SamplerConfig(seed=3), 12)
        assert len(batch.positives) == 6
        assert len(batch.negatives) == 6

    def test_deterministic_under_seed(self):
        positives = [(2, i) for i in range(20)]
        labels = make_labels(30, 25, positives)
        a = scale_balanced_sample(labels, SamplerConfig(seed=9), 10)
        b = scale_balanced_sample(labels, SamplerConfig(seed=9), 10)
        assert a == b

    def test_monte_carlo_matches_probabilities(self):
        # long-tailed positives: 70% short, 25% medium, 5% long durations
        length = 40
        positives = (
            [(2, i) for i in range(35)]
            + [(4, i) for i in range(35)]
            + [(16, i) for i in range(20)]
            + [(18, i) for i in range(5)]
            + [(30, i) for i in range(5)]
        )
        labels = make_labels(length, 32, positives)
        cfg = SamplerConfig(seed=0)
        probs, members = region_probabilities(
            np.array(positives), length, cfg
        )

        region_of = {}
        for region, idxs in enumerate(members):
            for k in idxs:
                region_of[tuple(map(int, positives[k]))] = region

        counts = np.zeros(3)
        draws = 4000
        for seed in range(draws):
            batch = scale_balanced_sample(labels, SamplerConfig(seed=seed), 2)
            for cell in batch.positives:
                counts[region_of[cell]] += 1
        freq = counts / counts.sum()
        np.testing.assert_allclose(freq, probs, atol=0.02)
