import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from gtagree.masks import AnnotationStack
from gtagree.raters import (
    F1Matrix,
    confusion_stats,
    detect_outliers,
    flag_outliers,
    pairwise_f1,
    rater_stats,
    ward_cluster,
)

from strategies import stacks


def matrix_from_diff(diff):
    diff = np.asarray(diff, dtype=float)
    n = diff.shape[0]
    f1 = 1.0 - diff
    z = np.zeros_like(f1)
    return F1Matrix(tuple(f"A{i + 1}" for i in range(n)), f1, z, z)


def mask_with(count, size=20, offset=0):
    m = np.zeros((1, size), np.uint8)
    m[0, offset:offset + count] = 1
    return m


class TestPairwiseF1:
    def test_identical(self):
        m = mask_with(5)
        f = pairwise_f1(AnnotationStack.from_masks([m, m]))
        np.testing.assert_array_equal(f.f1, np.ones((2, 2)))

    def test_disjoint(self):
        f = pairwise_f1(AnnotationStack.from_masks([mask_with(3), mask_with(3, offset=5)]))
        assert f.f1[0, 1] == 0.0

    def test_hand_value(self):
        a = mask_with(4)              # pixels 0-3
        b = mask_with(8, offset=2)    # pixels 2-9, intersection {2, 3}
        f = pairwise_f1(AnnotationStack.from_masks([a, b]))
        assert f.precision[0, 1] == 0.5
        assert f.recall[0, 1] == 0.25
        assert f.f1[0, 1] == pytest.approx(1 / 3)

    def test_empty_annotator_flagged(self):
        f = pairwise_f1(AnnotationStack.from_masks([mask_with(0), mask_with(3), mask_with(0)]))
        assert f.degenerate == ("A1", "A3")
        assert f.f1[0, 1] == 0.0
        assert f.f1[0, 2] == 1.0  # empty vs empty: identical annotations

    def test_needs_two(self):
        with pytest.raises(ValueError):
            pairwise_f1(AnnotationStack.from_masks([mask_with(2)]))

    @given(stacks(min_n=2, with_roi=True), st.randoms())
    def test_symmetric_bounded_and_order_invariant(self, s, rnd):
        f = pairwise_f1(s)
        np.testing.assert_array_equal(f.f1, f.f1.T)
        assert np.all(np.diag(f.f1) == 1.0)
        assert f.f1.min() >= 0.0 and f.f1.max() <= 1.0
        order = list(s.ids)
        rnd.shuffle(order)
        g = pairwise_f1(s.subset(order))
        idx = [s.ids.index(a) for a in order]
        np.testing.assert_array_equal(g.f1, f.f1[np.ix_(idx, idx)])


class TestWard:
    def test_two_leaves(self):
        d = ward_cluster(matrix_from_diff([[0, 0.3], [0.3, 0]]))
        assert len(d.merges) == 1
        assert d.merges[0].height == pytest.approx(0.3)

    def test_equidistant_tie_lowest_pair(self):
        d = ward_cluster(matrix_from_diff(np.full((3, 3), 0.5) - 0.5 * np.eye(3)))
        assert (d.merges[0].left, d.merges[0].right) == (0, 1)

    def test_matches_scipy_on_fixture(self):
        diff = np.array([
            [0.0, 0.10, 0.40, 0.45],
            [0.10, 0.0, 0.35, 0.50],
            [0.40, 0.35, 0.0, 0.20],
            [0.45, 0.50, 0.20, 0.0],
        ])
        ours = ward_cluster(matrix_from_diff(diff)).as_linkage()
        # scipy's Ward applies Lance-Williams to Euclidean distances, i.e. to sqrt of ours
        ref = linkage(squareform(np.sqrt(diff)), method="ward")
        np.testing.assert_array_equal(ours[:, :2], ref[:, :2])
        np.testing.assert_allclose(np.sqrt(ours[:, 2]), ref[:, 2])
        np.testing.assert_array_equal(ours[:, 3], ref[:, 3])

    @given(st.integers(2, 7), st.integers(0, 2**32 - 1))
    def test_matches_scipy_random(self, n, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.01, 1.0, size=(n, n))
        diff = np.triu(raw, 1) + np.triu(raw, 1).T
        ours = ward_cluster(matrix_from_diff(diff))
        ref = linkage(squareform(np.sqrt(diff)), method="ward")
        np.testing.assert_allclose([np.sqrt(m.height) for m in ours.merges], ref[:, 2], rtol=1e-10)

    @given(st.integers(2, 7), st.integers(0, 2**32 - 1))
    def test_heights_non_decreasing(self, n, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.0, 1.0, size=(n, n))
        diff = np.triu(raw, 1) + np.triu(raw, 1).T
        h = [m.height for m in ward_cluster(matrix_from_diff(diff)).merges]
        assert all(b >= a - 1e-12 for a, b in zip(h, h[1:]))

    def test_newick(self):
        diff = [[0, 0.2, 0.6], [0.2, 0, 0.6], [0.6, 0.6, 0]]
        nwk = ward_cluster(matrix_from_diff(diff)).to_newick(precision=4)
        # merge (A1, A2) at 0.2, then with A3 at (2*0.6 + 2*0.6 - 0.2)/3
        top = (2 * 0.6 + 2 * 0.6 - 0.2) / 3
        assert nwk == f"(A3:{top:.4f},(A1:0.2000,A2:0.2000):{top - 0.2:.4f});"


class TestOutliers:
    def test_replayed_statistics(self):
        # per-annotator mean differences with mean 0.2044, population std 0.0275, one at 0.2438
        flags, threshold = flag_outliers(_replay_vector())
        assert threshold == pytest.approx(0.2044 + 0.0275, abs=1e-4)
        assert flags.tolist() == [False, False, False, False, True]

    def test_identical_annotators(self):
        m = mask_with(4)
        res = detect_outliers(pairwise_f1(AnnotationStack.from_masks([m, m, m, m])))
        assert res.outliers == ()

    def test_two_annotators_warn(self):
        res = detect_outliers(pairwise_f1(AnnotationStack.from_masks([mask_with(3), mask_with(4)])))
        assert res.outliers == () and res.warning

    def test_inverted_annotator(self):
        from gtagree.synth import homogeneous_profiles, make_cohort, make_scene
        scene = make_scene("areal", 64, 64, seed=4)
        s = make_cohort(scene, homogeneous_profiles(5, 0.9, 0.99, seed=4))
        masks = [s.mask(a) for a in s.ids]
        masks[2] = 1 - masks[2]
        res = detect_outliers(pairwise_f1(AnnotationStack.from_masks(masks)))
        assert res.outliers == ("A3",)

    @given(st.integers(3, 8), st.floats(0.0, 1.0))
    def test_equal_f1_never_flags(self, n, v):
        diff = np.full((n, n), v)
        np.fill_diagonal(diff, 0.0)
        assert detect_outliers(matrix_from_diff(diff)).outliers == ()

    def test_sample_std_switch(self):
        v = _replay_vector()
        _, t_pop = flag_outliers(v, ddof=0)
        _, t_samp = flag_outliers(v, ddof=1)
        assert t_samp > t_pop


def _replay_vector():
    """Five values: mean 0.2044, population std 0.0275, one value 0.2438."""
    mean, std, cand = 0.2044, 0.0275, 0.2438
    # remaining four: two at mean-a, two at mean+b with matching first and second moments
    rest_sum = 5 * mean - cand
    rest_sq = 5 * (std ** 2 + mean ** 2) - cand ** 2
    mu = rest_sum / 4
    spread = np.sqrt(rest_sq / 4 - mu ** 2)
    v = np.array([mu - spread, mu - spread, mu + spread, mu + spread, cand])
    assert v.mean() == pytest.approx(mean) and v.std() == pytest.approx(std)
    return v


class TestRaterStats:
    def test_identical_to_consensus(self):
        m = np.array([[1, 0, 1, 0]], np.uint8)
        st_ = rater_stats(AnnotationStack.from_masks([m, m, m]))[0]
        assert all(getattr(st_, k) == 1.0 for k in ("sensitivity", "specificity", "ppv", "npv", "kappa"))

    def test_pair_union_consensus(self):
        a = np.array([[1, 1, 0, 0, 0]], np.uint8)
        b = np.array([[0, 1, 1, 0, 0]], np.uint8)
        for s in rater_stats(AnnotationStack.from_masks([a, b]), tau=0.5):
            assert s.specificity == 1.0 and s.ppv == 1.0

    def test_hand_table(self):
        mask = np.zeros(100, np.uint8)
        ref = np.zeros(100, np.uint8)
        mask[:8] = 1; ref[:8] = 1          # TP 8
        mask[8:10] = 1                     # FP 2
        ref[10:14] = 1                     # FN 4
        s = confusion_stats("x", mask.reshape(10, 10), ref.reshape(10, 10))
        assert (s.tp, s.fp, s.fn, s.tn) == (8, 2, 4, 86)
        assert s.sensitivity == pytest.approx(2 / 3)
        assert s.specificity == pytest.approx(86 / 88)
        assert s.ppv == pytest.approx(0.8)
        assert s.npv == pytest.approx(86 / 90)
        p_o = 94 / 100
        p_e = (10 * 12 + 90 * 88) / 100 ** 2
        assert s.kappa == pytest.approx((p_o - p_e) / (1 - p_e))

    def test_degenerate_consensus_flags(self):
        z = np.zeros((2, 2), np.uint8)
        s = rater_stats(AnnotationStack.from_masks([z, z]))[0]
        assert set(s.undefined) == {"sensitivity", "ppv", "kappa"}

    @given(stacks(min_n=1, max_n=1, max_side=6), stacks(min_n=1, max_n=1, max_side=6))
    def test_kappa_symmetry_under_relabel(self, s1, s2):
        a = s1.masks[0]
        b = s2.masks[0]
        if a.shape != b.shape:
            return
        k1 = confusion_stats("", a, b).kappa
        k2 = confusion_stats("", 1 - a, 1 - b).kappa
        if k1 is None:
            assert k2 is None
        else:
            assert k1 == pytest.approx(k2)
            assert (k1 == pytest.approx(1.0)) == bool((a == b).all())
