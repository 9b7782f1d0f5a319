"""Annotator agreement analysis, ground-truth fusion and skew-aware detector evaluation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ChannelError,
    DimensionError,
    EmptyAnnotationError,
    GtAgreeError,
    InputError,
    UndefinedCorrelationError,
    UndefinedRecallError,
)
from .masks import (  # noqa: E402
    AgreementMap,
    AnnotationStack,
    ImageGrid,
    agreement_curve,
    agreement_fraction,
    agreement_map,
    smyth_bound,
    thin,
    threshold_consensus,
)
from .features import ColorImage, feature_agreement_report, pearson  # noqa: E402
from .raters import detect_outliers, pairwise_f1, rater_stats, ward_cluster  # noqa: E402
from .fusion import fuse_excl_vote, fuse_simple, fuse_staple, fuse_vote, vote_preset  # noqa: E402
from .evaluation import (  # noqa: E402
    MatchTolerance,
    SkewRange,
    pbar,
    pbar_counts,
    performance_bounds,
    pr_curve,
    rank_detectors,
)

__all__ = [
    "__version__",
    "GtAgreeError", "DimensionError", "EmptyAnnotationError", "ChannelError",
    "UndefinedCorrelationError", "UndefinedRecallError", "InputError",
    "AnnotationStack", "AgreementMap", "ImageGrid", "agreement_map", "agreement_fraction",
    "agreement_curve", "smyth_bound", "threshold_consensus", "thin",
    "ColorImage", "feature_agreement_report", "pearson",
    "pairwise_f1", "ward_cluster", "detect_outliers", "rater_stats",
    "fuse_vote", "vote_preset", "fuse_excl_vote", "fuse_staple", "fuse_simple",
    "SkewRange", "MatchTolerance", "pbar", "pbar_counts", "pr_curve", "rank_detectors",
    "performance_bounds",
]
