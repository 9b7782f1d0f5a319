"""Synthetic scenes with a known gold standard and simulated annotators.

Random numbers come from numpy's PCG64 generator (``np.random.default_rng``).
Per-annotator seeds are derived from a cohort seed with
``SeedSequence(seed, spawn_key=(index,))`` so that annotators can be generated
independently and in any order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import ndimage
from skimage.draw import ellipse, line

from .features import ColorImage
from .masks import AnnotationStack, ImageGrid, thin

Geometry = Literal["linear", "areal"]
_CROSS = ndimage.generate_binary_structure(2, 1)


def derive_seed(seed: int, index: int) -> int:
    """Independent 32-bit seed for stream ``index`` of a cohort seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class RaterProfile:
    """Simulated annotator: sensitivity, specificity and a spatial bias.

    ``dilate_bias`` > 0 over-marks objects by that many pixels (4-connected
    dilation), < 0 under-marks by erosion.
    """

    p: float
    q: float
    dilate_bias: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0 and 0.0 < self.q <= 1.0):
            raise ValueError(f"p and q must lie in (0, 1], got p={self.p}, q={self.q}")


@dataclass(frozen=True)
class GoldScene:
    grid: ImageGrid
    gold: np.ndarray
    geometry: str
    image: ColorImage
    visibility: np.ndarray
    seed: int

    @property
    def positive_fraction(self) -> float:
        return float(self.gold.mean())


def _polyline_gold(rng, shape, n_lines: int, n_vertices: int) -> np.ndarray:
    h, w = shape
    gold = np.zeros(shape, dtype=bool)
    labels = np.zeros(shape, dtype=np.int32)
    for k in range(n_lines):
        pts = np.column_stack([rng.integers(0, h, n_vertices), rng.integers(0, w, n_vertices)])
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            rr, cc = line(int(r0), int(c0), int(r1), int(c1))
            gold[rr, cc] = True
            labels[rr, cc] = k + 1
    # crossings and joints can leave 2x2 clumps; thinning makes every curve 1 px wide
    gold = thin(gold).astype(bool)
    return gold, np.where(gold, labels, 0)


def _blob_gold(rng, shape, n_blobs: int, radius: float):
    h, w = shape
    labels = np.zeros(shape, dtype=np.int32)
    for k in range(n_blobs):
        r0, c0 = rng.uniform(0, h), rng.uniform(0, w)
        ra, rb = radius * rng.uniform(0.7, 1.3, size=2)
        rr, cc = ellipse(r0, c0, ra, rb, shape=shape, rotation=rng.uniform(-np.pi, np.pi))
        labels[rr, cc] = k + 1
    return labels > 0, labels


def make_scene(
    geometry: Geometry = "areal",
    width: int = 128,
    height: int = 128,
    seed: int = 0,
    *,
    n_objects: Optional[int] = None,
    blob_radius: float = 10.0,
    target_fraction: float = 0.05,
    contrast: Literal["uniform", "varied", "bimodal"] = "uniform",
    min_visibility: float = 0.3,
) -> GoldScene:
    """Draw a gold standard and render a colour image of it.

    ``linear`` scenes are random 1-pixel polylines, ``areal`` scenes random
    elliptical blobs (count chosen to cover roughly ``target_fraction`` of
    the grid unless ``n_objects`` is given).  With ``contrast="varied"`` each
    object gets a visibility in [min_visibility, 1] that scales both its
    rendered contrast and the chance that annotators mark it.
    """
    if width < 32 or height < 32:
        raise ValueError("scenes must be at least 32 x 32 pixels")
    rng = np.random.default_rng(seed)
    shape = (height, width)
    if geometry == "linear":
        n = n_objects or max(2, (width + height) // 40)
        gold, labels = _polyline_gold(rng, shape, n, 4)
    elif geometry == "areal":
        n = n_objects or max(1, round(target_fraction * width * height / (np.pi * blob_radius ** 2)))
        gold, labels = _blob_gold(rng, shape, n, blob_radius)
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    if not gold.any():
        gold[height // 2, width // 2] = True
        labels[height // 2, width // 2] = 1

    if contrast == "varied":
        per_object = rng.uniform(min_visibility, 1.0, size=labels.max() + 1)
    elif contrast == "bimodal":
        per_object = np.where(np.arange(labels.max() + 1) % 2 == 0, min_visibility, 1.0)
    elif contrast == "uniform":
        per_object = np.ones(labels.max() + 1)
    else:
        raise ValueError(f"unknown contrast mode {contrast!r}")
    # every pixel takes the visibility of its nearest object
    _, (iy, ix) = ndimage.distance_transform_edt(labels == 0, return_indices=True)
    visibility = per_object[labels[iy, ix]]

    noise = rng.normal(0.0, 8.0, size=shape)
    signal = 120.0 * visibility * gold
    base = 70.0 + noise + signal
    image = ColorImage({
        "R": np.clip(base + 0.25 * signal, 0, 255),
        "G": np.clip(base, 0, 255),
        "B": np.clip(base - 0.25 * signal, 0, 255),
    })
    return GoldScene(ImageGrid(width, height), gold.astype(np.uint8), geometry, image,
                     visibility, seed)


def sample_annotation(scene: GoldScene, profile: RaterProfile) -> np.ndarray:
    """One simulated annotation: spatial bias, then a per-pixel Bernoulli channel.

    A biased-gold positive is kept with probability ``p * visibility``; a
    negative is marked with probability ``1 - q``.
    """
    rng = np.random.default_rng(profile.seed)
    base = scene.gold.astype(bool)
    if profile.dilate_bias > 0:
        base = ndimage.binary_dilation(base, _CROSS, iterations=profile.dilate_bias)
    elif profile.dilate_bias < 0:
        base = ndimage.binary_erosion(base, _CROSS, iterations=-profile.dilate_bias)
    u = rng.random(base.shape)
    keep = u < profile.p * scene.visibility
    false_mark = u < (1.0 - profile.q)
    return np.where(base, keep, false_mark).astype(np.uint8)


def make_cohort(scene: GoldScene, profiles: Sequence[RaterProfile],
                ids: Optional[Sequence[str]] = None, roi=None) -> AnnotationStack:
    masks = [sample_annotation(scene, pr) for pr in profiles]
    return AnnotationStack.from_masks(masks, ids=ids, roi=roi)


def homogeneous_profiles(n: int, p: float, q: float, seed: int,
                         dilate_bias: int | Sequence[int] = 0) -> list[RaterProfile]:
    """``n`` profiles sharing (p, q) with seeds derived from ``seed``."""
    biases = [dilate_bias] * n if isinstance(dilate_bias, int) else list(dilate_bias)
    return [RaterProfile(p, q, biases[i], derive_seed(seed, i)) for i in range(n)]


def true_error(mask, gold, roi=None) -> float:
    """Fraction of (ROI) pixels where ``mask`` differs from ``gold``."""
    m = np.asarray(mask).astype(bool)
    g = np.asarray(gold).astype(bool)
    if m.shape != g.shape:
        raise ValueError(f"shape mismatch: {m.shape} vs {g.shape}")
    diff = m != g
    if roi is not None:
        sel = np.asarray(roi).astype(bool)
        return float(np.count_nonzero(diff & sel) / np.count_nonzero(sel))
    return float(diff.mean())


def detector_response(scene: GoldScene, noise: float = 0.25, seed: int = 0) -> np.ndarray:
    """A noisy detector: gold scaled by object visibility plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    return scene.gold * scene.visibility + rng.normal(0.0, noise, size=scene.gold.shape)
