import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import ndimage, stats

from gtagree.errors import ChannelError, UndefinedCorrelationError
from gtagree.features import (
    ColorImage,
    feature_agreement_report,
    lightness,
    michelson_contrast,
    pearson,
    to_intensity,
)
from gtagree.masks import AgreementMap, AnnotationStack, agreement_map


def rgb(r, g, b, shape=(3, 3)):
    return ColorImage({k: np.full(shape, float(v)) for k, v in zip("RGB", (r, g, b))})


class TestIntensity:
    def test_equal_channels(self):
        np.testing.assert_allclose(to_intensity(rgb(100, 100, 100)), 99.99)

    def test_black(self):
        assert not to_intensity(rgb(0, 0, 0)).any()

    def test_red(self):
        np.testing.assert_allclose(to_intensity(rgb(255, 0, 0)), 76.2195)

    def test_missing_channel(self):
        with pytest.raises(ChannelError):
            to_intensity(ColorImage({"R": np.zeros((2, 2)), "G": np.zeros((2, 2))}))


class TestLightness:
    def test_white(self):
        np.testing.assert_allclose(lightness(rgb(255, 255, 255)), 100.0, atol=1e-6)

    def test_black(self):
        np.testing.assert_allclose(lightness(rgb(0, 0, 0)), 0.0, atol=1e-9)

    def test_mid_gray(self):
        np.testing.assert_allclose(lightness(rgb(119, 119, 119)), 50.0, atol=0.5)

    def test_gray_input_returns_intensity(self):
        g = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(lightness(ColorImage.from_array(g)), g)


class TestMichelson:
    def test_uniform(self):
        assert not michelson_contrast(np.full((4, 4), 7.0)).any()

    def test_two_values(self):
        light = np.array([[50.0, 100.0]])
        np.testing.assert_allclose(michelson_contrast(light), 1 / 3)

    def test_all_zero(self):
        assert not michelson_contrast(np.zeros((3, 3))).any()

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            michelson_contrast(np.array([[-1.0, 1.0]]))

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            michelson_contrast(np.ones((3, 3)), window=2)

    def test_border_window_is_clipped(self):
        light = np.array([[1.0, 2.0, 3.0, 4.0]])
        out = michelson_contrast(light)
        # corner window holds only {1, 2}
        assert out[0, 0] == pytest.approx(1 / 3)
        assert out[0, 3] == pytest.approx(1 / 7)

    @given(hnp.arrays(np.float64, (5, 6), elements=st.floats(0, 1e6)))
    def test_range(self, light):
        c = michelson_contrast(light)
        assert c.min() >= 0 and c.max() <= 1

    @given(hnp.arrays(np.float64, (4, 5), elements=st.floats(0, 1e3)), st.sampled_from([1, 3, 5]))
    def test_matches_brute_force(self, light, window):
        h, w = light.shape
        r = window // 2
        out = michelson_contrast(light, window)
        for y in range(h):
            for x in range(w):
                win = light[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1]
                hi, lo = win.max(), win.min()
                want = 0.0 if hi + lo == 0 else (hi - lo) / (hi + lo)
                assert out[y, x] == pytest.approx(want)


class TestPearson:
    def test_perfect(self):
        res = pearson([1, 2, 3], [2, 4, 6])
        assert res.r == pytest.approx(1.0)
        assert res.p == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        res = pearson([1, 2, 3, 4], [1, 3, 2, 4])
        assert res.r == pytest.approx(0.8)
        t = 0.8 * np.sqrt(2 / (1 - 0.64))
        assert res.p == pytest.approx(2 * stats.t.sf(t, 2))

    def test_zero_r(self):
        res = pearson([1, 2, 3, 4, 5], [1, -1, 0, -1, 1])
        assert res.r == pytest.approx(0.0, abs=1e-15)
        assert res.p == pytest.approx(1.0)

    def test_constant_raises(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 1, 1])
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 2, 3], [5, 5, 5])

    def test_too_few(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2])

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=40))
    def test_matches_scipy_and_symmetry(self, pairs):
        x, y = (np.array(v) for v in zip(*pairs))
        if np.ptp(x) < 1e-6 or np.ptp(y) < 1e-6:
            return
        ours = pearson(x, y)
        ref = stats.pearsonr(x, y)
        assert ours.r == pytest.approx(ref.statistic, abs=1e-9)
        if 1.0 - abs(ours.r) > 1e-9:  # p has no stable digits as |r| -> 1
            assert ours.p == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-12)
        assert pearson(y, x).r == pytest.approx(ours.r, abs=1e-12)
        assert pearson(3 * x + 7, y).r == pytest.approx(ours.r, abs=1e-9)

    def test_p_decreases_with_abs_r(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=12)
        noise = rng.normal(size=12)
        results = [pearson(x, x + k * noise) for k in (4.0, 2.0, 1.0, 0.3)]
        rs = [abs(r.r) for r in results]
        assert rs == sorted(rs)
        ps = [r.p for r in results]
        assert ps == sorted(ps, reverse=True)


class TestFeatureReport:
    def _agr(self, counts, n=3):
        return AgreementMap(np.asarray(counts, dtype=np.int32), n)

    def test_intensity_identity(self):
        counts = np.array([[0, 1, 2], [3, 2, 1], [0, 0, 3]])
        g = counts.astype(float)
        img = ColorImage({"R": g, "G": g, "B": g})
        rows = {r.feature: r for r in feature_agreement_report(img, self._agr(counts))}
        assert rows["intensity"].result.r == pytest.approx(1.0)
        assert set(rows) == {"intensity", "contrast", "R", "G", "B"}

    def test_constant_image_rows_flagged(self):
        counts = np.array([[0, 1], [2, 3]])
        rows = feature_agreement_report(rgb(10, 20, 30, (2, 2)), self._agr(counts))
        assert all(r.result is None and r.note.startswith("undefined") for r in rows)

    def test_contrast_against_max_filtered_agreement(self):
        rng = np.random.default_rng(3)
        counts = rng.integers(0, 4, size=(9, 9))
        gray = rng.uniform(10, 200, size=(9, 9))
        img = ColorImage.from_array(gray)
        rows = {r.feature: r for r in feature_agreement_report(img, self._agr(counts))}
        want = stats.pearsonr(michelson_contrast(gray).ravel(),
                              ndimage.maximum_filter(counts.astype(float), 3, mode="nearest").ravel())
        assert rows["contrast"].result.r == pytest.approx(want.statistic)

    def test_roi_restricts_samples(self):
        m = np.array([[1, 0, 1], [0, 1, 0], [1, 1, 0]], dtype=np.uint8)
        roi = np.array([[1, 1, 1], [1, 1, 0], [0, 0, 0]], dtype=np.uint8)
        agr = agreement_map(AnnotationStack.from_masks([m, m], roi=roi))
        img = ColorImage.from_array(np.arange(9.0).reshape(3, 3))
        rows = feature_agreement_report(img, agr)
        assert rows[0].result.n == 5

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        counts = rng.integers(0, 4, size=(6, 6))
        img = ColorImage.from_array(rng.uniform(0, 255, size=(6, 6, 3)))
        a = feature_agreement_report(img, self._agr(counts))
        b = feature_agreement_report(img, self._agr(counts))
        assert a == b
