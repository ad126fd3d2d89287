import itertools
import math

import numpy as np
import pytest

from tapg.boundary import BoundaryMap
from tapg.data import valid_cell_mask
from tapg.postprocess import (
    Detection,
    ProposalCandidate,
    WindowTiming,
    assign_classes,
    concat_ensemble,
    ensemble_maps,
    fuse_scores,
    greedy_nms,
    load_detections,
    multiscale_route,
    save_detections,
    soft_nms,
)
from tapg.relation import ConfidenceMaps


def prop(t_start, t_end, score):
    return ProposalCandidate(
        t_start=t_start,
        t_end=t_end,
        boundary_score=score,
        cc_score=score,
        cr_score=score,
        fused_score=score,
        decayed_score=score,
    )


def seg_iou(a, b):
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    return inter / ((a[1] - a[0]) + (b[1] - b[0]) - inter)


def brute_soft_nms(items, sigma):
    """Independent reference: items are ((start, end), score)."""
    pool = [[seg, s] for seg, s in items]
    out = []
    while pool:
        best = 0
        for k in range(1, len(pool)):
            if pool[k][1] > pool[best][1]:
                best = k
        seg, score = pool.pop(best)
        out.append((seg, score))
        for entry in pool:
            entry[1] *= math.exp(-seg_iou(seg, entry[0]) ** 2 / sigma)
    return out


def brute_greedy_nms(items, threshold):
    pool = list(items)
    out = []
    while pool:
        best = 0
        for k in range(1, len(pool)):
            if pool[k][1] > pool[best][1]:
                best = k
        seg, score = pool.pop(best)
        out.append((seg, score))
        pool = [(s, sc) for s, sc in pool if seg_iou(seg, s) <= threshold]
    return out


def random_maps(rng, bins, length):
    mask = valid_cell_mask(bins, length)
    def field():
        v = rng.uniform(0.01, 0.99, (bins, length))
        v[~mask] = 0.0
        return v
    mb = BoundaryMap(values=field(), valid_mask=mask)
    maps = ConfidenceMaps(cc=field(), cr=field(), valid_mask=mask)
    return mb, maps


IDENTITY_TIMING = WindowTiming(0.0, 1.0, 1.0)


class TestFuseScores:
    def test_eq8_arithmetic(self):
        assert 0.5 * math.sqrt(0.64 * 0.36) == pytest.approx(0.24, abs=1e-12)

    def test_zero_boundary_gives_zero(self):
        mask = valid_cell_mask(3, 5)
        mb = BoundaryMap(values=np.zeros((3, 5)), valid_mask=mask)
        cc = np.where(mask, 0.5, 0.0)
        maps = ConfidenceMaps(cc=cc, cr=cc, valid_mask=mask)
        props = fuse_scores(mb, maps, IDENTITY_TIMING, top_k=None)
        assert all(p.fused_score == 0.0 for p in props)

    def test_ranking_matches_exhaustive_sort(self):
        rng = np.random.default_rng(0)
        mb, maps = random_maps(rng, 3, 3)
        props = fuse_scores(mb, maps, IDENTITY_TIMING, top_k=None)
        brute = sorted(
            (
                (mb.values[j, i] * math.sqrt(maps.cc[j, i] * maps.cr[j, i]), i, j)
                for j in range(1, 3)
                for i in range(3)
                if i + j < 3
            ),
            key=lambda c: (-c[0], c[1], c[2]),
        )
        assert [(p.fused_score) for p in props] == [b[0] for b in brute]

    def test_identity_holds_exactly(self):
        rng = np.random.default_rng(1)
        mb, maps = random_maps(rng, 8, 12)
        for p in fuse_scores(mb, maps, IDENTITY_TIMING, top_k=None):
            j = round(p.t_end - p.t_start)
            i = round(p.t_start)
            assert p.fused_score == mb.values[j, i] * math.sqrt(
                maps.cc[j, i] * maps.cr[j, i]
            )
            assert abs(
                p.fused_score - p.boundary_score * math.sqrt(p.cc_score * p.cr_score)
            ) <= 1e-12

    def test_top_k_and_seconds_conversion(self):
        rng = np.random.default_rng(2)
        mb, maps = random_maps(rng, 6, 10)
        timing = WindowTiming(window_start=5.0, snippet_scale=2.0, seconds_per_snippet=0.64)
        props = fuse_scores(mb, maps, timing, top_k=7)
        assert len(props) == 7
        scores = [p.fused_score for p in props]
        assert scores == sorted(scores, reverse=True)
        for p in props:
            assert p.t_start >= 5.0 * 0.64
            assert p.t_end > p.t_start

    def test_shape_mismatch_rejected(self):
        mask = valid_cell_mask(3, 5)
        mb = BoundaryMap(values=np.zeros((3, 5)), valid_mask=mask)
        maps = ConfidenceMaps(
            cc=np.zeros((3, 4)), cr=np.zeros((3, 4)), valid_mask=valid_cell_mask(3, 4)
        )
        with pytest.raises(ValueError, match="shapes"):
            fuse_scores(mb, maps, IDENTITY_TIMING)


class TestSoftNms:
    def test_singleton_unchanged(self):
        out = soft_nms([prop(0, 10, 0.9)])
        assert out[0].decayed_score == 0.9

    def test_disjoint_unchanged(self):
        out = soft_nms([prop(0, 10, 0.9), prop(20, 30, 0.8)])
        assert [p.decayed_score for p in out] == [0.9, 0.8]

    def test_gaussian_decay_spot_value(self):
        # duplicate segments: tIoU 1, second score 0.8 e^(-1/0.75)
        out = soft_nms([prop(0, 10, 0.9), prop(0, 10, 0.8)], sigma=0.75)
        expected = 0.8 * math.exp(-1.0 / 0.75)
        assert out[1].decayed_score == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.210878, abs=1e-6)

    def test_never_increases_and_top1_unchanged(self):
        rng = np.random.default_rng(3)
        props = [
            prop(*sorted(rng.uniform(0, 30, 2)), rng.uniform(0.1, 1.0))
            for _ in range(12)
        ]
        out = soft_nms(props, sigma=0.5)
        best = max(props, key=lambda p: p.decayed_score)
        assert out[0].decayed_score == best.decayed_score
        original = {(p.t_start, p.t_end): p.decayed_score for p in props}
        for p in out:
            assert p.decayed_score <= original[(p.t_start, p.t_end)] + 1e-15

    def test_max_keep_and_threshold(self):
        props = [prop(i * 5.0, i * 5.0 + 4.0, 0.5 + 0.01 * i) for i in range(8)]
        assert len(soft_nms(props, max_keep=3)) == 3
        out = soft_nms([prop(0, 10, 0.9), prop(0, 10, 0.8)], keep_threshold=0.5)
        assert len(out) == 1


class TestGreedyNms:
    def test_disjoint_unchanged(self):
        props = [prop(0, 10, 0.9), prop(20, 30, 0.8), prop(40, 50, 0.7)]
        assert len(greedy_nms(props)) == 3

    def test_duplicates_one_survivor(self):
        props = [prop(0, 10, 0.9), prop(0, 10, 0.8), prop(0, 10, 0.7)]
        out = greedy_nms(props)
        assert len(out) == 1
        assert out[0].decayed_score == 0.9

    def test_random_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            items = [
                (tuple(sorted(rng.uniform(0, 20, 2))), float(rng.uniform(0.1, 1)))
                for _ in range(5)
            ]
            props = [prop(s[0], s[1], sc) for s, sc in items]
            got = [((p.t_start, p.t_end), p.decayed_score) for p in greedy_nms(props, 0.4)]
            assert got == brute_greedy_nms(items, 0.4)

    def test_both_suppressors_match_references_up_to_eight(self):
        rng = np.random.default_rng(11)
        for trial in range(40):
            n = int(rng.integers(1, 9))
            items = [
                (tuple(sorted(rng.uniform(0, 25, 2))), float(rng.uniform(0.1, 1)))
                for _ in range(n)
            ]
            props = [prop(s[0], s[1], sc) for s, sc in items]
            got_soft = [
                ((p.t_start, p.t_end), p.decayed_score) for p in soft_nms(props, 0.75)
            ]
            assert got_soft == brute_soft_nms(items, 0.75)
            got_greedy = [
                ((p.t_start, p.t_end), p.decayed_score) for p in greedy_nms(props, 0.5)
            ]
            assert got_greedy == brute_greedy_nms(items, 0.5)


class TestSuppressionEnumeration:
    def test_all_toy_configurations_match_references(self):
        # every proposal picks one of three (segment, score) variants:
        # 3^5 = 243 joint configurations with duplicates and score ties
        variants = [((0.0, 10.0), 0.9), ((5.0, 15.0), 0.6), ((20.0, 30.0), 0.9)]
        for combo in itertools.product(range(3), repeat=5):
            items = [variants[k] for k in combo]
            props = [prop(seg[0], seg[1], sc) for seg, sc in items]

            got_soft = [
                ((p.t_start, p.t_end), p.decayed_score)
                for p in soft_nms(props, sigma=0.75)
            ]
            assert got_soft == brute_soft_nms(items, 0.75)

            got_greedy = [
                ((p.t_start, p.t_end), p.decayed_score)
                for p in greedy_nms(props, 0.5)
            ]
            assert got_greedy == brute_greedy_nms(items, 0.5)


class TestAssignClasses:
    def test_cardinality(self):
        props = [prop(0, 10, 0.5), prop(5, 20, 0.4), prop(8, 12, 0.2)]
        dets = assign_classes(props, {"a": 0.5, "b": 0.3, "c": 0.2}, top_k=2)
        assert len(dets) == 6

    def test_single_certain_class(self):
        dets = assign_classes([prop(0, 10, 0.5)], {"a": 1.0}, top_k=2)
        assert dets[0].score == 0.5
        assert dets[0].label == "a"

    def test_product_arithmetic(self):
        dets = assign_classes([prop(0, 10, 0.5)], {"a": 0.6, "b": 0.3, "c": 0.1}, top_k=2)
        assert [(d.label, d.score) for d in dets] == [("a", 0.3), ("b", 0.15)]

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            assign_classes([prop(0, 10, 0.5)], {})


class TestEnsembleMaps:
    def test_equal_weights_identical_maps(self):
        rng = np.random.default_rng(5)
        mb, maps = random_maps(rng, 4, 6)
        out_mb, out_maps = ensemble_maps([(mb, maps, 1.0), (mb, maps, 1.0)])
        np.testing.assert_allclose(out_mb.values, mb.values, atol=1e-15)
        np.testing.assert_allclose(out_maps.cc, maps.cc, atol=1e-15)

    def test_degenerate_weight_selects_first(self):
        rng = np.random.default_rng(6)
        mb1, maps1 = random_maps(rng, 4, 6)
        mb2, maps2 = random_maps(rng, 4, 6)
        out_mb, out_maps = ensemble_maps([(mb1, maps1, 1.0), (mb2, maps2, 0.0)])
        np.testing.assert_array_equal(out_mb.values, mb1.values)
        np.testing.assert_array_equal(out_maps.cr, maps1.cr)

    def test_weighted_sum_oracle(self):
        mask = valid_cell_mask(2, 2)
        def as_maps(v):
            arr = np.array(v, dtype=np.float64)
            return (
                BoundaryMap(values=arr, valid_mask=mask),
                ConfidenceMaps(cc=arr, cr=arr, valid_mask=mask),
            )
        mb1, maps1 = as_maps([[1.0, 2.0], [3.0, 0.0]])
        mb2, maps2 = as_maps([[5.0, 6.0], [7.0, 0.0]])
        out_mb, _ = ensemble_maps([(mb1, maps1, 0.3), (mb2, maps2, 0.7)])
        np.testing.assert_allclose(
            out_mb.values, 0.3 * mb1.values + 0.7 * mb2.values, atol=1e-12
        )

    def test_bad_weights_rejected(self):
        rng = np.random.default_rng(7)
        mb, maps = random_maps(rng, 3, 4)
        with pytest.raises(ValueError, match="weights"):
            ensemble_maps([(mb, maps, 0.0)])


class TestMultiscaleRoute:
    def by_scale(self):
        return {
            30: [Detection((0, 1), "a", 0.3)],
            80: [Detection((0, 2), "a", 0.8)],
            100: [Detection((0, 3), "a", 0.9)],
        }

    def test_short_video(self):
        assert multiscale_route(25.0, self.by_scale())[0].segment == (0, 1)

    def test_medium_video(self):
        assert multiscale_route(60.0, self.by_scale())[0].segment == (0, 2)

    def test_long_video(self):
        assert multiscale_route(150.0, self.by_scale())[0].segment == (0, 3)

    def test_boundaries_go_to_middle_bucket(self):
        assert multiscale_route(30.0, self.by_scale())[0].segment == (0, 2)
        assert multiscale_route(120.0, self.by_scale())[0].segment == (0, 2)

    def test_missing_scale_rejected(self):
        with pytest.raises(ValueError, match="scale 100"):
            multiscale_route(10.0, {30: [], 80: []})

    def test_output_is_one_input_verbatim(self):
        by_scale = self.by_scale()
        for duration in (5.0, 50.0, 500.0):
            out = multiscale_route(duration, by_scale)
            assert any(out is by_scale[s] for s in (30, 80, 100))


class TestConcatEnsemble:
    def test_single_set_equals_soft_nms(self):
        dets = [Detection((0, 10), "a", 0.9), Detection((0, 10), "a", 0.8)]
        out = concat_ensemble([dets], sigma=0.75)
        expected = brute_soft_nms([(d.segment, d.score) for d in dets], 0.75)
        assert [(d.segment, d.score) for d in out] == expected

    def test_duplicated_set_decays_clones(self):
        dets = [Detection((0, 10), "a", 0.9)]
        out = concat_ensemble([dets, dets], sigma=0.75)
        assert len(out) == 2
        assert out[0].score == 0.9
        assert out[1].score == pytest.approx(0.9 * math.exp(-1.0 / 0.75), abs=1e-12)

    def test_disjoint_classes_untouched(self):
        a = [Detection((0, 10), "a", 0.9)]
        b = [Detection((0, 10), "b", 0.8)]
        out = concat_ensemble([a, b], sigma=0.75)
        assert sorted((d.label, d.score) for d in out) == [("a", 0.9), ("b", 0.8)]


def test_detections_roundtrip(tmp_path):
    dets = {
        "v_b": [Detection((0.0, 4.5), "a", 0.25)],
        "v_a": [Detection((1.0, 2.0), "b", 0.5), Detection((3.0, 9.0), "a", 0.125)],
    }
    path = tmp_path / "dets.json"
    save_detections(path, dets)
    loaded = load_detections(path)
    assert loaded.keys() == dets.keys()
    for vid in dets:
        assert [(d.segment, d.label, d.score) for d in loaded[vid]] == [
            (d.segment, d.label, d.score) for d in dets[vid]
        ]
