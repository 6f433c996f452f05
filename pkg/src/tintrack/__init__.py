"""tintrack: scale-space tracking of topographic features on TIN terrain.

Pipeline: downsample a point cloud adaptively, triangulate and trim it,
build a stack of smoothed elevation layers, track critical points through
edge-flip events, and rank maxima by their recovered life spans.
"""

from .errors import DataError
from .evaluation import (
    GroundTruth,
    MatchResult,
    PrCurve,
    f_beta,
    load_ground_truth,
    match_maxima,
    pr_sweep,
)
from .pointcloud import (
    DownsampleConfig,
    Patch,
    baseline_sample,
    downsample,
    estimate_patch_curvature,
    fps,
    load_points,
    pfps,
    save_points,
    subdivide,
)
from .smoothing import (
    ScaleSpace,
    SmoothingConfig,
    build_scale_space,
    build_weight_matrix,
    interpolate_layer,
    load_scale_space,
    save_scale_space,
    smooth_added_variance,
    smooth_step,
)
from .tin import (
    AlphaShapeConfig,
    CriticalType,
    EulerCount,
    Tin,
    alpha_shape_filter,
    classify_vertex,
    classify_vertices,
    delaunay_triangulate,
    euler_count,
    load_tin,
    save_tin,
    vertex_signature,
)
from .tracking import (
    EdgeFlipEvent,
    LifeSpanTable,
    TrackResult,
    Trace,
    TransitionRecord,
    classify_transition,
    detect_events,
    edge_flip_time,
    feature_rows,
    match_velocity,
    recover_life_spans,
    select_maxima,
    track_scale_space,
    write_features_csv,
    write_features_geojson,
    write_transitions_csv,
)

__version__ = "0.1.0"
