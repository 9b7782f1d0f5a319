"""Inter-annotator comparison: pairwise F1, Ward clustering, outliers, rater stats."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError
from .masks import AnnotationStack, agreement_map, threshold_consensus


@dataclass(frozen=True)
class F1Matrix:
    """Symmetric pairwise F1 scores plus the per-pair precision and recall.

    ``precision[i, j]`` is the fraction of annotator i's pixels also marked
    by j, ``recall[i, j]`` the fraction of j's pixels marked by i.
    """

    ids: tuple[str, ...]
    f1: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    degenerate: tuple[str, ...] = ()

    @property
    def diff(self) -> np.ndarray:
        return 1.0 - self.f1

    @property
    def n(self) -> int:
        return len(self.ids)


def pairwise_f1(stack: AnnotationStack) -> F1Matrix:
    if stack.n < 2:
        raise ValueError("pairwise F1 needs at least two annotators")
    flat = stack.masked().reshape(stack.n, -1).astype(np.int64)
    inter = (flat @ flat.T).astype(np.float64)
    size = np.diag(inter).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(size[:, None] > 0, inter / size[:, None], 0.0)
        rec = np.where(size[None, :] > 0, inter / size[None, :], 0.0)
        denom = size[:, None] + size[None, :]
        # 2pr/(p+r) reduces to 2|Mi & Mj| / (|Mi| + |Mj|), symmetric by construction
        f1 = np.where(denom > 0, 2.0 * inter / denom, 1.0)
    np.fill_diagonal(f1, 1.0)
    degenerate = tuple(i for i, s in zip(stack.ids, size) if s == 0)
    return F1Matrix(stack.ids, f1, prec, rec, degenerate)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge list in the usual linkage convention.

    Leaves are numbered 0..N-1; the cluster created by merge k gets id N + k.
    """

    labels: tuple[str, ...]
    merges: tuple[Merge, ...]

    def as_linkage(self) -> np.ndarray:
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=float)

    def to_newick(self, precision: int = 6) -> str:
        n = len(self.labels)
        heights = [0.0] * n + [m.height for m in self.merges]
        if not self.merges:
            return f"{self.labels[0]};"

        def render(node: int, parent_height: float) -> str:
            branch = f"{parent_height - heights[node]:.{precision}f}"
            if node < n:
                return f"{self.labels[node]}:{branch}"
            m = self.merges[node - n]
            inner = f"({render(m.left, m.height)},{render(m.right, m.height)})"
            return f"{inner}:{branch}"

        root = self.merges[-1]
        top = f"({render(root.left, root.height)},{render(root.right, root.height)})"
        return top + ";"


def ward_cluster(matrix: F1Matrix) -> Dendrogram:
    """Ward clustering of the F1 difference matrix via Lance-Williams updates.

    Among equal minimum dissimilarities the pair with the lexicographically
    smallest (i, j) cluster ids is merged first.
    """
    n = matrix.n
    if n < 2:
        raise ValueError("clustering needs at least two annotators")
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist[(i, j)] = float(matrix.diff[i, j])
    sizes = {i: 1 for i in range(n)}
    active = list(range(n))
    merges = []
    for k in range(n - 1):
        i, j = min(
            ((a, b) for ai, a in enumerate(active) for b in active[ai + 1:]),
            key=lambda ab: (dist[ab], ab),
        )
        d_ij = dist[(i, j)]
        new = n + k
        ni, nj = sizes[i], sizes[j]
        active.remove(i)
        active.remove(j)
        for m in active:
            nm = sizes[m]
            d_im = dist[(min(i, m), max(i, m))]
            d_jm = dist[(min(j, m), max(j, m))]
            dist[(m, new)] = (
                (ni + nm) * d_im + (nj + nm) * d_jm - nm * d_ij
            ) / (ni + nj + nm)
        sizes[new] = ni + nj
        active.append(new)
        merges.append(Merge(i, j, d_ij, ni + nj))
    return Dendrogram(matrix.ids, tuple(merges))


@dataclass(frozen=True)
class OutlierResult:
    outliers: tuple[str, ...]
    mean_diff: dict[str, float]
    threshold: Optional[float]
    warning: str = ""


def flag_outliers(mean_diff: Sequence[float], ddof: int = 0) -> tuple[np.ndarray, float]:
    """Flag values strictly above mean + one standard deviation.

    Returns the boolean flag vector and the threshold.  ``ddof=0`` gives the
    population standard deviation, ``ddof=1`` the sample form.
    """
    m = np.asarray(mean_diff, dtype=np.float64)
    threshold = float(m.mean() + m.std(ddof=ddof))
    return m > threshold, threshold


def detect_outliers(matrix: F1Matrix, ddof: int = 0) -> OutlierResult:
    n = matrix.n
    diff = matrix.diff
    off = ~np.eye(n, dtype=bool)
    mean_diff = np.array([diff[i][off[i]].mean() for i in range(n)])
    md = {a: float(v) for a, v in zip(matrix.ids, mean_diff)}
    if n < 3:
        return OutlierResult((), md, None, "outliers cannot be identified with fewer than 3 annotators")
    flags, threshold = flag_outliers(mean_diff, ddof)
    return OutlierResult(tuple(a for a, f in zip(matrix.ids, flags) if f), md, threshold)


STAT_NAMES = ("sensitivity", "specificity", "ppv", "npv", "kappa")


@dataclass(frozen=True)
class RaterStat:
    """Confusion statistics of one annotator against a reference mask.

    A statistic is ``None`` when its denominator is zero.
    """

    annotator: str
    tp: int
    fp: int
    fn: int
    tn: int
    sensitivity: Optional[float] = field(default=None)
    specificity: Optional[float] = field(default=None)
    ppv: Optional[float] = field(default=None)
    npv: Optional[float] = field(default=None)
    kappa: Optional[float] = field(default=None)

    @property
    def undefined(self) -> tuple[str, ...]:
        return tuple(s for s in STAT_NAMES if getattr(self, s) is None)

    def as_dict(self) -> dict:
        return {"annotator": self.annotator, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "tn": self.tn, **{s: getattr(self, s) for s in STAT_NAMES}}


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def confusion_stats(annotator: str, mask: np.ndarray, reference: np.ndarray,
                    roi: Optional[np.ndarray] = None) -> RaterStat:
    m = mask.astype(bool)
    g = reference.astype(bool)
    if roi is not None:
        sel = roi.astype(bool)
        m, g = m[sel], g[sel]
    tp = int(np.count_nonzero(m & g))
    fp = int(np.count_nonzero(m & ~g))
    fn = int(np.count_nonzero(~m & g))
    tn = int(np.count_nonzero(~m & ~g))
    total = tp + fp + fn + tn
    p_o = (tp + tn) / total
    p_e = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (total * total)
    kappa = (p_o - p_e) / (1.0 - p_e) if p_e < 1.0 else None
    return RaterStat(annotator, tp, fp, fn, tn,
                     sensitivity=_ratio(tp, tp + fn),
                     specificity=_ratio(tn, tn + fp),
                     ppv=_ratio(tp, tp + fp),
                     npv=_ratio(tn, tn + fn),
                     kappa=kappa)


def rater_stats(stack: AnnotationStack, consensus: Optional[np.ndarray] = None,
                tau: float = 0.5) -> list[RaterStat]:
    """Compare every annotator with the consensus (default: tau = 0.5 vote)."""
    if consensus is None:
        consensus = threshold_consensus(agreement_map(stack), tau)
    if consensus.shape != stack.masks.shape[1:]:
        raise DimensionError(f"consensus shape {consensus.shape} != {stack.masks.shape[1:]}")
    return [confusion_stats(a, stack.masks[i], consensus, stack.roi)
            for i, a in enumerate(stack.ids)]
