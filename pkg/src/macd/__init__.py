"""Counterfactual-mask contrastive decoding engine.

Pipeline: ingest per-frame detections -> link object tracks and
rasterize soft masks -> optimize mask strengths by gradient ascent on
the query-reconstruction loss -> discretize to ternary levels -> render
the counterfactual view -> contrast base and counterfactual logits
during token selection. Ships with a differentiable toy scorer, a wire
protocol for external scorers, and a seeded evaluation harness.
"""

from .backend import (
    BackendCapabilities,
    GradRequest,
    ToyBackend,
    ToySurrogateParams,
    fd_gradient,
    make_backend,
)
from .compose import (
    ComposeConfig,
    CounterfactualView,
    FrameMaskPolicy,
    StrengthVector,
    frame_mask,
    render_counterfactual,
    union_object_mask,
)
from .decoding import (
    DecodeConfig,
    DecodeRecord,
    decode,
    generic_cd_score,
    macd_score,
    plausibility_head,
)
from .harness import (
    MetricsReport,
    RunSettings,
    SyntheticCase,
    bootstrap_ci,
    compare_reports,
    generate_suite,
    mcnemar_test,
    run_experiment,
    score_run,
)
from .optimizer import (
    CounterfactualStrategy,
    OptimizerConfig,
    build_counterfactual,
    discretize,
    optimize_strengths,
)
from .profiling import PassCounter
from .tracking import (
    Detection,
    ObjectTrack,
    TrackerConfig,
    iou,
    link_tracks,
    normalize_overlaps,
    parse_detections,
    rasterize_soft_masks,
)
from .video import (
    BoundingBox,
    Seed,
    TokenSequence,
    VideoTensor,
    read_video_tensor,
    write_video_tensor,
)

__version__ = "0.1.0"
