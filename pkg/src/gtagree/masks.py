"""Pixel-grid primitives: binary masks, annotation stacks and agreement maps.

Masks are plain ``numpy`` arrays of dtype ``uint8`` holding 0/1, indexed
``[y, x]`` (row-major, one byte per pixel).  An optional region of interest
(ROI) restricts every statistic to the pixels where it is 1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
from skimage.morphology import thin as _skimage_thin

from .errors import DimensionError, EmptyAnnotationError


class ImageGrid(NamedTuple):
    width: int
    height: int

    @classmethod
    def of(cls, arr: np.ndarray) -> "ImageGrid":
        if arr.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {arr.shape}")
        return cls(int(arr.shape[1]), int(arr.shape[0]))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def as_mask(arr, name: str = "mask") -> np.ndarray:
    """Validate ``arr`` as a binary mask and return a ``uint8`` copy.

    Boolean arrays are accepted; integer/float arrays must contain only 0 and 1.
    """
    a = np.asarray(arr)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name}: expected a non-empty 2-D array, got shape {a.shape}")
    if a.dtype == bool:
        return a.astype(np.uint8)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name}: values must be exactly 0 or 1")
    return a.astype(np.uint8)


@dataclass(frozen=True)
class AnnotationStack:
    """N aligned annotator masks, their ids and an optional ROI.

    ``masks`` has shape ``(N, Y, X)``.  Use :meth:`from_masks` to build one.
    """

    ids: tuple[str, ...]
    masks: np.ndarray
    roi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.masks.ndim != 3 or self.masks.shape[0] < 1:
            raise DimensionError("masks must have shape (N, Y, X) with N >= 1")
        if len(self.ids) != self.masks.shape[0]:
            raise ValueError("one id is required per mask")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError(f"annotator ids must be unique: {self.ids}")
        if self.roi is not None and self.roi.shape != self.masks.shape[1:]:
            raise DimensionError(
                f"roi shape {self.roi.shape} does not match masks {self.masks.shape[1:]}"
            )

    @classmethod
    def from_masks(
        cls,
        masks: Sequence[np.ndarray] | Mapping[str, np.ndarray],
        ids: Optional[Sequence[str]] = None,
        roi: Optional[np.ndarray] = None,
    ) -> "AnnotationStack":
        if isinstance(masks, Mapping):
            if ids is not None:
                raise ValueError("ids must not be given together with a mapping")
            ids = list(masks.keys())
            masks = list(masks.values())
        masks = [as_mask(m, f"mask[{i}]") for i, m in enumerate(masks)]
        if not masks:
            raise ValueError("at least one annotation is required")
        shape = masks[0].shape
        for i, m in enumerate(masks):
            if m.shape != shape:
                raise DimensionError(f"mask[{i}] has shape {m.shape}, expected {shape}")
        if ids is None:
            ids = [f"A{i + 1}" for i in range(len(masks))]
        roi_arr = None
        if roi is not None:
            roi_arr = _frozen(as_mask(roi, "roi"))
            if roi_arr.shape != shape:
                raise DimensionError(f"roi has shape {roi_arr.shape}, expected {shape}")
        return cls(tuple(str(i) for i in ids), _frozen(np.stack(masks)), roi_arr)

    @property
    def n(self) -> int:
        return self.masks.shape[0]

    @property
    def grid(self) -> ImageGrid:
        return ImageGrid.of(self.masks[0])

    @property
    def roi_mask(self) -> np.ndarray:
        """ROI as a boolean array (all True when no ROI is set)."""
        if self.roi is None:
            return np.ones(self.masks.shape[1:], dtype=bool)
        return self.roi.astype(bool)

    def masked(self) -> np.ndarray:
        """Masks with every pixel outside the ROI forced to 0."""
        if self.roi is None:
            return self.masks
        return self.masks * self.roi[None]

    def mask(self, annotator: str) -> np.ndarray:
        return self.masks[self.ids.index(annotator)]

    def subset(self, keep: Sequence[str]) -> "AnnotationStack":
        idx = [self.ids.index(k) for k in keep]
        return AnnotationStack(
            tuple(self.ids[i] for i in idx), _frozen(self.masks[idx].copy()), self.roi
        )


@dataclass(frozen=True)
class AgreementMap:
    counts: np.ndarray
    n_annotators: int
    roi: Optional[np.ndarray] = None

    @property
    def grid(self) -> ImageGrid:
        return ImageGrid.of(self.counts)

    @property
    def n_pixels(self) -> int:
        """Number of pixels under analysis (ROI size, or the whole grid)."""
        if self.roi is None:
            return self.counts.size
        return int(np.count_nonzero(self.roi))

    def marked(self) -> np.ndarray:
        return self.counts > 0

    def level_set(self, n: int) -> np.ndarray:
        return self.counts >= n


def agreement_map(stack: AnnotationStack) -> AgreementMap:
    """Count, per pixel, how many annotators marked it (0 outside the ROI)."""
    counts = stack.masked().sum(axis=0, dtype=np.int32)
    return AgreementMap(_frozen(counts), stack.n, stack.roi)


def agreement_fraction(agreement: AgreementMap, n: int) -> float:
    """Fraction of marked pixels on which at least ``n`` annotators agree."""
    if not 1 <= n <= agreement.n_annotators:
        raise ValueError(f"n must lie in [1, {agreement.n_annotators}], got {n}")
    marked = np.count_nonzero(agreement.counts)
    if marked == 0:
        raise EmptyAnnotationError("no pixel is marked by any annotator")
    return np.count_nonzero(agreement.counts >= n) / marked


def agreement_curve(agreement: AgreementMap) -> np.ndarray:
    """``agreement_fraction`` for n = 1..N as an array of length N."""
    marked = np.count_nonzero(agreement.counts)
    if marked == 0:
        raise EmptyAnnotationError("no pixel is marked by any annotator")
    hist = np.bincount(agreement.counts.ravel(), minlength=agreement.n_annotators + 1)
    at_least = np.cumsum(hist[::-1])[::-1]
    return at_least[1:] / marked


def smyth_bound(agreement: AgreementMap) -> float:
    """Lower bound on the mean annotator error rate (Smyth, 1996).

    Averages ``N - max(A, N - A)`` over the analysed pixels and divides by N.
    Pixels outside the ROI are excluded from both sum and normaliser.
    """
    n = agreement.n_annotators
    a = agreement.counts.astype(np.int64)
    minority = n - np.maximum(a, n - a)
    if agreement.roi is not None:
        minority = minority[agreement.roi.astype(bool)]
    total = int(minority.sum())
    return total / (agreement.n_pixels * n)


def threshold_consensus(agreement: AgreementMap, tau: float) -> np.ndarray:
    """Pixels where the fraction of agreeing annotators is at least ``tau``.

    The comparison is inclusive, so with an even N and ``tau = 0.5`` an exact
    half split counts as consensus.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    out = (agreement.counts / agreement.n_annotators) >= tau
    return out.astype(np.uint8)


def thin(mask: np.ndarray) -> np.ndarray:
    """Reduce every curve in ``mask`` to one pixel width, preserving topology."""
    m = as_mask(mask)
    if not m.any():
        return m
    return _skimage_thin(m.astype(bool)).astype(np.uint8)
