"""Ground-truth estimation from several annotations.

Threshold voting (Any-GT, 0.5-GT, 0.75-GT), voting after outlier exclusion,
STAPLE expectation-maximisation and a SIMPLE-style selective re-vote.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from .errors import EmptyAnnotationError
from .masks import AnnotationStack, agreement_map, threshold_consensus
from .raters import confusion_stats, detect_outliers, pairwise_f1

log = logging.getLogger(__name__)

VOTE_PRESETS = {"any": None, "vote": 0.5, "vote75": 0.75}
_EPS = 1e-12


def fuse_vote(stack: AnnotationStack, tau: float) -> np.ndarray:
    return threshold_consensus(agreement_map(stack), tau)


def any_gt(stack: AnnotationStack) -> np.ndarray:
    return fuse_vote(stack, 1.0 / stack.n)


def vote_preset(stack: AnnotationStack, name: str) -> np.ndarray:
    """Named vote GT: ``any`` (tau = 1/N), ``vote`` (0.5) or ``vote75`` (0.75)."""
    tau = VOTE_PRESETS[name]
    return fuse_vote(stack, 1.0 / stack.n if tau is None else tau)


@dataclass(frozen=True)
class ExclVoteResult:
    mask: np.ndarray
    excluded: tuple[str, ...]
    warning: str = ""


def fuse_excl_vote(stack: AnnotationStack, tau: float = 0.5, ddof: int = 0) -> ExclVoteResult:
    """Drop the annotators flagged by :func:`detect_outliers`, then vote."""
    if stack.n < 3:
        msg = "outlier exclusion needs at least 3 annotators; plain vote used"
        log.warning(msg)
        return ExclVoteResult(fuse_vote(stack, tau), (), msg)
    outliers = detect_outliers(pairwise_f1(stack), ddof=ddof).outliers
    keep = [a for a in stack.ids if a not in outliers]
    if len(keep) < 2:
        msg = "all but one annotator flagged as outliers; exclusion skipped"
        log.warning(msg)
        return ExclVoteResult(fuse_vote(stack, tau), (), msg)
    return ExclVoteResult(fuse_vote(stack.subset(keep), tau), outliers)


@dataclass(frozen=True)
class StapleConfig:
    prior: Union[float, Literal["empirical"]] = "empirical"
    init_p: float = 0.9
    init_q: float = 0.9
    tol: float = 1e-7
    max_iters: int = 100

    def __post_init__(self):
        if self.prior != "empirical" and not 0.0 < float(self.prior) < 1.0:
            raise ValueError(f"prior must be in (0, 1) or 'empirical', got {self.prior}")
        for name in ("init_p", "init_q"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")
        if self.tol <= 0 or self.max_iters < 1:
            raise ValueError("tol must be positive and max_iters >= 1")


@dataclass(frozen=True)
class StapleResult:
    posterior: np.ndarray
    sensitivity: dict[str, float]
    specificity: dict[str, float]
    iterations: int
    converged: bool
    prior: float
    log_likelihood: tuple[float, ...]

    @property
    def mask(self) -> np.ndarray:
        return (self.posterior >= 0.5).astype(np.uint8)


def _staple_terms(d: np.ndarray, p: np.ndarray, q: np.ndarray, prior: float):
    """Per-pixel log of the object and background likelihood numerators."""
    p = np.clip(p, _EPS, 1.0 - _EPS)
    q = np.clip(q, _EPS, 1.0 - _EPS)
    log_a = math.log(prior) + d @ (np.log(p) - np.log1p(-p)) + np.log1p(-p).sum()
    log_b = math.log1p(-prior) + d @ (np.log1p(-q) - np.log(q)) + np.log(q).sum()
    return log_a, log_b


def fuse_staple(stack: AnnotationStack, cfg: StapleConfig = StapleConfig()) -> StapleResult:
    """STAPLE: jointly estimate rater sensitivity/specificity and the truth.

    No spatial prior and no consensus pre-assignment; every ROI pixel enters
    the EM.  ``log_likelihood[k]`` is the observed-data log-likelihood of the
    parameters used in the k-th E-step.
    """
    if stack.n < 2:
        raise ValueError("STAPLE needs at least two annotators")
    sel = stack.roi_mask.ravel()
    d = stack.masks.reshape(stack.n, -1)[:, sel].T.astype(np.float64)
    marked = d.any(axis=1)
    if marked.all() or not marked.any():
        raise EmptyAnnotationError("STAPLE needs at least one marked and one unmarked ROI pixel")

    if cfg.prior == "empirical":
        prior = float(d.mean(axis=0).mean())
    else:
        prior = float(cfg.prior)

    n_pix = d.shape[0]
    posterior = np.zeros(stack.masks.shape[1:], dtype=np.float64)
    if (d == d[:, :1]).all():
        # unanimous stack: p = q = 1 with W equal to the common mask is the EM fixed point
        w = d[:, 0]
        posterior.ravel()[sel] = w
        ones = {a: 1.0 for a in stack.ids}
        log_a, log_b = _staple_terms(d, np.ones(stack.n), np.ones(stack.n), prior)
        ll = float(np.logaddexp(log_a, log_b).sum())
        return StapleResult(posterior, ones, dict(ones), 1, True, prior, (ll,))

    p = np.full(stack.n, cfg.init_p)
    q = np.full(stack.n, cfg.init_q)
    history = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        log_a, log_b = _staple_terms(d, p, q, prior)
        log_total = np.logaddexp(log_a, log_b)
        history.append(math.fsum(log_total))
        w = np.exp(log_a - log_total)
        sw = w.sum()
        new_p = (w @ d) / sw if sw > 0 else p
        sv = n_pix - sw
        new_q = ((1.0 - w) @ (1.0 - d)) / sv if sv > 0 else q
        change = float(np.max(np.abs(new_p - p) + np.abs(new_q - q)))
        p, q = new_p, new_q
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        log.warning("STAPLE did not converge within %d iterations", cfg.max_iters)
    log_a, log_b = _staple_terms(d, p, q, prior)
    w = np.exp(log_a - np.logaddexp(log_a, log_b))
    posterior.ravel()[sel] = w
    return StapleResult(
        posterior,
        {a: float(v) for a, v in zip(stack.ids, p)},
        {a: float(v) for a, v in zip(stack.ids, q)},
        iterations,
        converged,
        prior,
        tuple(history),
    )


@dataclass(frozen=True)
class SimpleConfig:
    """Settings for :func:`fuse_simple`.

    An annotator is dropped when its score falls below
    ``mean - drop_margin * std`` *and* at least ``min_gap`` below the mean;
    the absolute gap keeps sampling noise among equally good annotators from
    triggering drops.
    """

    score: Literal["kappa", "f1"] = "kappa"
    drop_margin: float = 1.0
    max_rounds: int = 10
    min_gap: float = 0.05

    def __post_init__(self):
        if self.score not in ("kappa", "f1"):
            raise ValueError(f"unknown score {self.score!r}")
        if self.drop_margin <= 0 or self.max_rounds < 1 or self.min_gap < 0:
            raise ValueError("drop_margin must be > 0, max_rounds >= 1, min_gap >= 0")


@dataclass(frozen=True)
class SimpleResult:
    mask: np.ndarray
    retained: tuple[str, ...]
    rounds: int
    scores: dict[str, float]
    warning: str = ""


def _score(mask, estimate, roi, kind: str) -> float:
    st = confusion_stats("", mask, estimate, roi)
    if kind == "kappa":
        return st.kappa if st.kappa is not None else 0.0
    denom = 2 * st.tp + st.fp + st.fn
    return 2 * st.tp / denom if denom else 1.0


def fuse_simple(stack: AnnotationStack, cfg: SimpleConfig = SimpleConfig()) -> SimpleResult:
    """Selective iterative re-voting in the style of SIMPLE.

    Start from the majority vote; each round scores the retained annotators
    against the current estimate, drops the low scorers and re-votes at 0.5.
    """
    if stack.n < 2:
        raise ValueError("SIMPLE needs at least two annotators")
    retained = list(stack.ids)
    estimate = fuse_vote(stack, 0.5)
    scores: dict[str, float] = {}
    warning = ""
    rounds = 0
    for rounds in range(1, cfg.max_rounds + 1):
        scores = {a: _score(stack.mask(a), estimate, stack.roi, cfg.score) for a in retained}
        vals = np.array([scores[a] for a in retained])
        mean, std = vals.mean(), vals.std()
        cut = min(mean - cfg.drop_margin * std, mean - cfg.min_gap)
        drop = [a for a in retained if scores[a] < cut]
        if not drop:
            break
        if len(retained) - len(drop) < 2:
            warning = "dropping would leave fewer than two annotators; stopped"
            log.warning(warning)
            break
        retained = [a for a in retained if a not in drop]
        estimate = fuse_vote(stack.subset(retained), 0.5)
    return SimpleResult(estimate, tuple(retained), rounds, scores, warning)
