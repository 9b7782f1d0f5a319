"""Detector evaluation against a binary ground truth.

Operating points come from thresholding a continuous response map.  Precision
is integrated analytically over a range of class skews (P-bar), and the
P-bar/recall curve is summarised by its interpolated area.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import DimensionError, InputError, UndefinedRecallError
from .features import CorrelationResult, pearson
from .masks import AgreementMap, AnnotationStack, as_mask
from .fusion import any_gt, fuse_vote

BERKELEY_RADIUS_FACTOR = 0.0075
MAX_THRESHOLDS = 4096
INTERP_DENSITY = 20
_SERIES_LIMIT = 0.1
_SERIES_TERMS = 40

Extent = tuple[int, int, int, int]  # x, y, width, height


@dataclass(frozen=True)
class SkewRange:
    """Integration range [pi1, pi2] of the skew parameter.

    ``phi`` is the dataset's positive/negative ratio; ``None`` means it is
    taken from each ground truth as N_p / N_n.
    """

    pi1: float
    pi2: float
    phi: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.pi1 < self.pi2 <= 1.0):
            raise ValueError(f"need 0 <= pi1 < pi2 <= 1, got [{self.pi1}, {self.pi2}]")
        if self.phi is not None and not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")

    def with_phi(self, phi: float) -> "SkewRange":
        return SkewRange(self.pi1, self.pi2, phi)


@dataclass(frozen=True)
class MatchTolerance:
    """Matching radius in pixels; 0 means exact pixel matching."""

    radius: float = 0.0

    def __post_init__(self):
        if not (self.radius >= 0 and math.isfinite(self.radius)):
            raise ValueError(f"radius must be a finite non-negative number, got {self.radius}")

    @property
    def mode(self) -> str:
        return "exact" if self.radius == 0 else "lenient-distance"

    @classmethod
    def berkeley(cls, width: int, height: int) -> "MatchTolerance":
        """Default tolerance of the Berkeley benchmark: 0.0075 x image diagonal."""
        return cls(BERKELEY_RADIUS_FACTOR * math.hypot(width, height))


@dataclass(frozen=True)
class OperatingPoint:
    """Counts at one threshold.

    ``tp``/``fp`` count detected pixels that are/are not matched to the
    ground truth; ``covered``/``fn`` count ground-truth pixels with/without a
    detection in range.  In exact mode ``covered == tp``.
    """

    theta: float
    tp: int
    fp: int
    fn: int
    tn: int
    covered: int

    @property
    def n_pos(self) -> int:
        return self.covered + self.fn

    @property
    def recall(self) -> float:
        return self.covered / self.n_pos if self.n_pos else float("nan")


# --------------------------------------------------------------------------
# integrated precision


def pbar_counts(tp, fp, pi1: float, pi2: float, phi: float):
    """Skew-integrated precision for (arrays of) TP and FP counts.

    Mean over pi in [pi1, pi2] of pi*TP / (pi*TP + (1 - pi)*phi*FP), in closed
    form.  TP = FP = 0 (no detections) gives 1.
    """
    a = np.asarray(tp, dtype=np.float64)
    b = phi * np.asarray(fp, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape, dtype=np.float64)
    out[b == 0] = 1.0
    out[(a == 0) & (b > 0)] = 0.0
    gen = (a > 0) & (b > 0)
    if gen.any():
        ag, bg = a[gen], b[gen]
        width = pi2 - pi1
        d = ag - bg
        c = pi1 * ag + (1.0 - pi1) * bg  # denominator of the integrand at pi1
        u = d / c
        x = u * width
        res = np.empty_like(ag)

        small = np.abs(x) < _SERIES_LIMIT
        if small.any():
            # expand 1/(1 + s*u) around u = 0 to avoid cancellation for TP ~ phi*FP
            xs = x[small]
            acc = np.zeros_like(xs)
            power = np.ones_like(xs)
            for k in range(_SERIES_TERMS):
                acc += power * (pi1 / (k + 1) + width / (k + 2))
                power *= -xs
            res[small] = ag[small] / c[small] * acc
        big = ~small
        if big.any():
            db, bb, ab = d[big], bg[big], ag[big]
            log_ratio = np.log1p(x[big])  # ln((b + pi2*d) / (b + pi1*d))
            res[big] = (ab / db) * (width - (bb / db) * log_ratio) / width
        out[gen] = np.clip(res, 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def pbar(point: OperatingPoint, skew: SkewRange, phi: Optional[float] = None) -> float:
    """P-bar of one operating point.  ``phi`` overrides ``skew.phi``."""
    phi = skew.phi if phi is None else phi
    if phi is None:
        n_neg = point.fp + point.tn
        if point.n_pos == 0 or n_neg == 0:
            raise ValueError("phi cannot be derived from this operating point")
        phi = point.n_pos / n_neg
    return float(pbar_counts(point.tp, point.fp, skew.pi1, skew.pi2, phi))


# --------------------------------------------------------------------------
# matching


def _check_inputs(resp, gt, roi):
    resp = np.asarray(resp, dtype=np.float64)
    gt = as_mask(gt, "gt").astype(bool)
    if resp.shape != gt.shape:
        raise DimensionError(f"response shape {resp.shape} != ground truth shape {gt.shape}")
    if not np.isfinite(resp).all():
        raise InputError("response map contains non-finite values")
    if roi is None:
        roi_b = np.ones(gt.shape, dtype=bool)
    else:
        roi_b = as_mask(roi, "roi").astype(bool)
        if roi_b.shape != gt.shape:
            raise DimensionError(f"roi shape {roi_b.shape} != ground truth shape {gt.shape}")
    return resp, gt & roi_b, roi_b


Tolerance = Union[MatchTolerance, Sequence[MatchTolerance]]


def _tiles(shape, extents: Optional[Sequence[Extent]], tol: Tolerance):
    """Yield ``(slices, radius)`` per sub-image.

    ``tol`` is one tolerance for every sub-image or one per extent.
    """
    if not extents:
        if not isinstance(tol, MatchTolerance):
            raise ValueError("per-extent tolerances require extents")
        yield (slice(0, shape[0]), slice(0, shape[1])), tol.radius
        return
    tols = [tol] * len(extents) if isinstance(tol, MatchTolerance) else list(tol)
    if len(tols) != len(extents):
        raise ValueError(f"{len(tols)} tolerances given for {len(extents)} extents")
    for (x, y, w, h), t in zip(extents, tols):
        yield (slice(y, y + h), slice(x, x + w)), t.radius


def _is_exact(tol: Tolerance) -> bool:
    if isinstance(tol, MatchTolerance):
        return tol.mode == "exact"
    return all(t.mode == "exact" for t in tol)


def berkeley_tolerances(extents: Sequence[Extent]) -> list[MatchTolerance]:
    """Berkeley radius computed from each sub-image's own diagonal."""
    return [MatchTolerance.berkeley(w, h) for _, _, w, h in extents]


def _disk(radius: float) -> np.ndarray:
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= radius * radius


def _distance_to(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from every pixel to the nearest True pixel."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask)


def confusion_at(resp, gt, theta: float, tol: Tolerance = MatchTolerance(),
                 roi=None, extents: Optional[Sequence[Extent]] = None) -> OperatingPoint:
    """Counts for the detection mask ``resp >= theta`` (inside the ROI).

    In lenient mode a detected pixel is a TP when a ground-truth pixel lies
    within ``tol.radius``; a ground-truth pixel is covered when a detection
    lies within the radius.  Matching never crosses sub-image ``extents``.
    """
    resp, gt, roi_b = _check_inputs(resp, gt, roi)
    det = (resp >= theta) & roi_b
    if _is_exact(tol):
        tp = int(np.count_nonzero(det & gt))
        covered = tp
    else:
        near_gt = np.zeros(gt.shape, dtype=bool)
        near_det = np.zeros(gt.shape, dtype=bool)
        for sl, radius in _tiles(gt.shape, extents, tol):
            near_gt[sl] = _distance_to(gt[sl]) <= radius
            near_det[sl] = _distance_to(det[sl]) <= radius
        tp = int(np.count_nonzero(det & near_gt))
        covered = int(np.count_nonzero(gt & near_det))
    n_pos = int(np.count_nonzero(gt))
    n_neg = int(np.count_nonzero(roi_b)) - n_pos
    fp = int(np.count_nonzero(det)) - tp
    tn = n_neg - int(np.count_nonzero(det & ~gt))
    return OperatingPoint(float(theta), tp, fp, n_pos - covered, tn, covered)


@dataclass(frozen=True)
class _SweepData:
    """Sorted response samples from which counts at any threshold follow."""

    on_gt: np.ndarray          # responses at GT pixels
    near_gt: np.ndarray        # responses at non-GT pixels within the radius of GT
    far: np.ndarray            # responses at all other ROI pixels
    cover: np.ndarray          # per GT pixel, max response within the radius
    n_pos: int
    n_neg: int

    @staticmethod
    def build(resp, gt, roi_b, tol: Tolerance, extents) -> "_SweepData":
        if _is_exact(tol):
            on = np.sort(resp[gt])
            return _SweepData(on, np.empty(0), np.sort(resp[roi_b & ~gt]), on,
                              int(on.size), int(np.count_nonzero(roi_b & ~gt)))
        near = np.zeros(gt.shape, dtype=bool)
        cover = np.full(gt.shape, -np.inf)
        masked = np.where(roi_b, resp, -np.inf)
        for sl, radius in _tiles(gt.shape, extents, tol):
            near[sl] = _distance_to(gt[sl]) <= radius
            cover[sl] = ndimage.maximum_filter(masked[sl], footprint=_disk(radius),
                                               mode="constant", cval=-np.inf)
        ng = roi_b & ~gt
        return _SweepData(
            np.sort(resp[gt]), np.sort(resp[ng & near]), np.sort(resp[ng & ~near]),
            np.sort(cover[gt]), int(np.count_nonzero(gt)), int(np.count_nonzero(ng)),
        )

    def counts(self, thetas: np.ndarray):
        def at_least(v):
            return v.size - np.searchsorted(v, thetas, side="left")

        on, near, far, cov = (at_least(v) for v in (self.on_gt, self.near_gt, self.far, self.cover))
        tp = on + near
        fp = far
        tn = self.n_neg - near - far
        fn = self.n_pos - cov
        return tp, fp, fn, tn, cov


@dataclass(frozen=True)
class PbarRCurve:
    """P-bar/recall operating points ordered by decreasing threshold."""

    theta: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    covered: np.ndarray
    recall: np.ndarray
    pbar: np.ndarray
    auc: float
    skew: SkewRange
    tolerance: Tolerance

    def __len__(self) -> int:
        return self.theta.size

    def point(self, k: int) -> OperatingPoint:
        return OperatingPoint(float(self.theta[k]), int(self.tp[k]), int(self.fp[k]),
                              int(self.fn[k]), int(self.tn[k]), int(self.covered[k]))

    def rows(self):
        for k in range(len(self)):
            yield (float(self.theta[k]), int(self.tp[k]), int(self.fp[k]), int(self.fn[k]),
                   int(self.tn[k]), float(self.recall[k]), float(self.pbar[k]))


CURVE_COLUMNS = ("theta", "tp", "fp", "fn", "tn", "recall", "pbar")


def sweep_thresholds(values: np.ndarray, max_thresholds: int = MAX_THRESHOLDS) -> np.ndarray:
    """Descending thresholds: every unique value (or quantiles) plus +/-inf."""
    uniq = np.unique(values)
    if uniq.size > max_thresholds:
        ordered = np.sort(values, axis=None)
        idx = np.round(np.linspace(0, ordered.size - 1, max_thresholds)).astype(np.int64)
        uniq = np.unique(ordered[idx])
    return np.concatenate(([np.inf], uniq[::-1], [-np.inf]))


def interpolated_auc(tp, fp, covered, n_pos: int, skew: SkewRange, phi: float,
                     density: int = INTERP_DENSITY) -> float:
    """Area under the P-bar/recall curve with densified interpolation.

    Between consecutive operating points TP, FP and coverage move linearly,
    P-bar is re-evaluated at each interpolated count and the curve is
    integrated over recall with the trapezoid rule.
    """
    tp, fp, cov = (np.asarray(v, dtype=np.float64) for v in (tp, fp, covered))
    if tp.size < 2:
        return 0.0
    t = np.linspace(0.0, 1.0, density + 1)
    seg_tp = tp[:-1, None] + t * np.diff(tp)[:, None]
    seg_fp = fp[:-1, None] + t * np.diff(fp)[:, None]
    seg_rec = (cov[:-1, None] + t * np.diff(cov)[:, None]) / n_pos
    seg_p = pbar_counts(seg_tp, seg_fp, skew.pi1, skew.pi2, phi)
    # leaving the origin, P-bar is scale invariant: its limit is the segment's end value
    from_origin = (tp[:-1] == 0) & (fp[:-1] == 0)
    seg_p[from_origin, 0] = seg_p[from_origin, -1]
    area = 0.5 * np.diff(seg_rec, axis=1) * (seg_p[:, 1:] + seg_p[:, :-1])
    return float(area.sum())


def pr_curve(resp, gt, skew: SkewRange, tol: Tolerance = MatchTolerance(), roi=None,
             thresholds: Optional[Sequence[float]] = None, max_thresholds: int = MAX_THRESHOLDS,
             extents: Optional[Sequence[Extent]] = None,
             density: int = INTERP_DENSITY) -> PbarRCurve:
    """Sweep the detector threshold and build the P-bar/recall curve.

    ``thresholds`` overrides the automatic sweep; +/-inf are always added.
    """
    resp, gt_b, roi_b = _check_inputs(resp, gt, roi)
    data = _SweepData.build(resp, gt_b, roi_b, tol, extents)
    if data.n_pos == 0:
        raise UndefinedRecallError("ground truth has no positive pixel inside the ROI")
    if thresholds is None:
        thetas = sweep_thresholds(resp[roi_b], max_thresholds)
    else:
        inner = np.unique(np.asarray(thresholds, dtype=np.float64))
        inner = inner[np.isfinite(inner)]
        thetas = np.concatenate(([np.inf], inner[::-1], [-np.inf]))
    phi = skew.phi if skew.phi is not None else data.n_pos / max(data.n_neg, 1)
    tp, fp, fn, tn, cov = data.counts(thetas)
    recall = cov / data.n_pos
    pb = pbar_counts(tp, fp, skew.pi1, skew.pi2, phi)
    auc = interpolated_auc(tp, fp, cov, data.n_pos, skew, phi, density)
    return PbarRCurve(thetas, tp, fp, fn, tn, cov, recall, np.atleast_1d(pb), auc,
                      skew.with_phi(phi), tol)


# --------------------------------------------------------------------------
# correlations, ranking and bounds


def cco_cci(resp, agreement: AgreementMap, roi=None) -> tuple[CorrelationResult, CorrelationResult]:
    """Correlation of response with agreement on marked pixels (CCO) and the ROI (CCI)."""
    resp = np.asarray(resp, dtype=np.float64)
    if resp.shape != agreement.counts.shape:
        raise DimensionError(f"response shape {resp.shape} != agreement {agreement.counts.shape}")
    if roi is None:
        roi = agreement.roi
    sel = np.ones(resp.shape, bool) if roi is None else as_mask(roi, "roi").astype(bool)
    counts = agreement.counts.astype(np.float64)
    marked = (agreement.counts > 0) & sel
    if not marked.any():
        raise UndefinedRecallError("no pixel is marked by any annotator")
    cco = pearson(resp[marked], counts[marked])
    cci = pearson(resp[sel], counts[sel])
    return cco, cci


TIE_TOL = 1e-12


@dataclass(frozen=True)
class RankingTable:
    detectors: tuple[str, ...]
    gts: tuple[str, ...]
    auc: dict[str, dict[str, float]]          # auc[gt][detector]
    rankings: dict[str, tuple[str, ...]]      # per GT, best first
    ties: dict[str, bool]
    groups: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...] = field(default=())

    @property
    def n_distinct(self) -> int:
        return len(self.groups)

    def rank_of(self, gt: str, detector: str) -> int:
        return self.rankings[gt].index(detector) + 1

    def as_dict(self) -> dict:
        return {
            "detectors": list(self.detectors),
            "gts": list(self.gts),
            "auc": {g: {d: self.auc[g][d] for d in self.detectors} for g in self.gts},
            "rankings": {g: list(self.rankings[g]) for g in self.gts},
            "ties": {g: self.ties[g] for g in self.gts},
            "distinct_rankings": [
                {"ranking": list(order), "gts": list(gts)} for order, gts in self.groups
            ],
        }


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("GTAGREE_THREADS", "1")))
    except ValueError:
        return 1


def rank_detectors(responses: Mapping[str, np.ndarray], gts: Mapping[str, np.ndarray],
                   skew: SkewRange, tol: Tolerance = MatchTolerance(), roi=None,
                   extents: Optional[Sequence[Extent]] = None,
                   workers: Optional[int] = None) -> RankingTable:
    """AUC of every detector under every GT and the induced rankings.

    Ties in AUC are broken by detector name and flagged.  GTs that induce the
    same ordering are grouped together.
    """
    if not responses or not gts:
        raise ValueError("at least one detector and one ground truth are required")
    dets = tuple(sorted(responses))
    gnames = tuple(sorted(gts))
    jobs = [(g, d) for g in gnames for d in dets]

    def run(job):
        g, d = job
        return pr_curve(responses[d], gts[g], skew, tol, roi=roi, extents=extents).auc

    workers = _default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            aucs = list(pool.map(run, jobs))
    else:
        aucs = [run(j) for j in jobs]
    table: dict[str, dict[str, float]] = {g: {} for g in gnames}
    for (g, d), v in zip(jobs, aucs):
        table[g][d] = v

    rankings, ties = {}, {}
    for g in gnames:
        order = tuple(sorted(dets, key=lambda d: (-table[g][d], d)))
        rankings[g] = order
        vals = [table[g][d] for d in order]
        ties[g] = any(abs(x - y) <= TIE_TOL for x, y in zip(vals, vals[1:]))
    grouped: dict[tuple[str, ...], list[str]] = {}
    for g in gnames:
        grouped.setdefault(rankings[g], []).append(g)
    groups = tuple((order, tuple(gs)) for order, gs in grouped.items())
    return RankingTable(dets, gnames, table, rankings, ties, groups)


@dataclass(frozen=True)
class PerformanceBounds:
    lower: PbarRCurve
    upper: PbarRCurve

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = self.lower.auc, self.upper.auc
        return (min(lo, hi), max(lo, hi))


def performance_bounds(resp, stack: AnnotationStack, skew: SkewRange,
                       tol: Tolerance = MatchTolerance(),
                       extents: Optional[Sequence[Extent]] = None) -> PerformanceBounds:
    """Curves against Any-GT (lower bound) and the 0.75 vote GT (upper bound)."""
    lower = pr_curve(resp, any_gt(stack), skew, tol, roi=stack.roi, extents=extents)
    upper = pr_curve(resp, fuse_vote(stack, 0.75), skew, tol, roi=stack.roi, extents=extents)
    return PerformanceBounds(lower, upper)


def interval_overlap(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Length of the intersection of two AUC intervals over that of their hull.

    1 for identical intervals (including identical points), 0 when disjoint.
    """
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    hull = max(a[1], b[1]) - min(a[0], b[0])
    if hi < lo:
        return 0.0
    if hull == 0:
        return 1.0
    return (hi - lo) / hull
