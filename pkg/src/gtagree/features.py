"""Image features and their Pearson correlation with annotator agreement."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage, stats
from skimage.color import rgb2lab

from .errors import ChannelError, DimensionError, UndefinedCorrelationError
from .masks import AgreementMap, ImageGrid

INTENSITY_WEIGHTS = (0.2989, 0.5870, 0.1140)
SIGNIFICANCE_LEVEL = 0.01
GRAY = "gray"


@dataclass(frozen=True)
class ColorImage:
    """Named per-pixel channels sharing one grid.

    8-bit sources are expected in [0, 255].  A grayscale image carries a
    single channel named ``"gray"``.
    """

    channels: Mapping[str, np.ndarray]

    def __post_init__(self):
        if not self.channels:
            raise ChannelError("image has no channels")
        shapes = {np.asarray(c).shape for c in self.channels.values()}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise DimensionError(f"channels must be 2-D and share a shape, got {shapes}")

    @classmethod
    def from_array(cls, arr: np.ndarray, names=("R", "G", "B", "NIR")) -> "ColorImage":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 2:
            return cls({GRAY: a})
        return cls({names[i]: a[..., i] for i in range(a.shape[-1])})

    @property
    def grid(self) -> ImageGrid:
        return ImageGrid.of(np.asarray(next(iter(self.channels.values()))))

    @property
    def is_gray(self) -> bool:
        return GRAY in self.channels and not {"R", "G", "B"} <= set(self.channels)

    def channel(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.channels[name], dtype=np.float64)
        except KeyError:
            raise ChannelError(f"image has no {name!r} channel") from None


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p: float
    n: int

    @property
    def significant(self) -> bool:
        return self.p < SIGNIFICANCE_LEVEL


def to_intensity(img: ColorImage) -> np.ndarray:
    """Weighted RGB sum 0.2989 R + 0.5870 G + 0.1140 B (gray passes through)."""
    if img.is_gray:
        return img.channel(GRAY)
    wr, wg, wb = INTENSITY_WEIGHTS
    return wr * img.channel("R") + wg * img.channel("G") + wb * img.channel("B")


def lightness(img: ColorImage) -> np.ndarray:
    """CIELAB L* (sRGB, D65) in [0, 100]; grayscale images return intensity."""
    if img.is_gray:
        return to_intensity(img)
    rgb = np.stack([img.channel("R"), img.channel("G"), img.channel("B")], axis=-1)
    rgb = np.clip(rgb / 255.0, 0.0, 1.0)
    return rgb2lab(rgb, illuminant="D65")[..., 0]


def michelson_contrast(light: np.ndarray, window: int = 3) -> np.ndarray:
    """Local (max - min) / (max + min) over a square window.

    Windows are clipped at the image border.  Where max + min is zero the
    contrast is defined as 0.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    light = np.asarray(light, dtype=np.float64)
    if (light < 0).any():
        raise ValueError("lightness must be non-negative")
    # 'nearest' padding only repeats in-window values, so max/min equal the clipped window
    hi = ndimage.maximum_filter(light, size=window, mode="nearest")
    lo = ndimage.minimum_filter(light, size=window, mode="nearest")
    den = hi + lo
    out = np.zeros_like(light)
    np.divide(hi - lo, den, out=out, where=den > 0)
    return out


def pearson(xs, ys) -> CorrelationResult:
    """Pearson r with a two-tailed t-test p-value (n - 2 degrees of freedom)."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"sample lengths differ: {x.size} vs {y.size}")
    n = x.size
    if n < 3:
        raise ValueError(f"at least 3 samples are required, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        which = "both samples are" if sxx == syy == 0.0 else "one sample is"
        raise UndefinedCorrelationError(f"{which} constant")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return CorrelationResult(r, 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return CorrelationResult(r, min(1.0, p), n)


@dataclass(frozen=True)
class FeatureRow:
    feature: str
    result: Optional[CorrelationResult]
    note: str = ""

    @property
    def defined(self) -> bool:
        return self.result is not None


def _try_pearson(name: str, xs, ys) -> FeatureRow:
    try:
        return FeatureRow(name, pearson(xs, ys))
    except UndefinedCorrelationError as exc:
        return FeatureRow(name, None, f"undefined: {exc}")


def feature_agreement_report(img: ColorImage, agreement: AgreementMap) -> list[FeatureRow]:
    """Correlate intensity, local contrast and every channel with agreement.

    Contrast is compared with the 3x3 maximum of the agreement map, the other
    features with raw agreement.  Only ROI pixels are sampled.
    """
    if img.grid != agreement.grid:
        raise DimensionError(f"image grid {img.grid} != agreement grid {agreement.grid}")
    sel = np.ones(agreement.counts.shape, bool) if agreement.roi is None else agreement.roi.astype(bool)
    counts = agreement.counts.astype(np.float64)
    local_max = ndimage.maximum_filter(counts, size=3, mode="nearest")

    rows = [
        _try_pearson("intensity", to_intensity(img)[sel], counts[sel]),
        _try_pearson("contrast", michelson_contrast(lightness(img))[sel], local_max[sel]),
    ]
    for name in img.channels:
        if name == GRAY:
            continue
        rows.append(_try_pearson(name, img.channel(name)[sel], counts[sel]))
    return rows
