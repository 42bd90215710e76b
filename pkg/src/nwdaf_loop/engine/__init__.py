from .detect import (
    DEFAULT_THRESHOLD,
    DetectionResult,
    Detections,
    InferenceUnreachable,
    Label,
    NoModelAvailable,
    analyze_window,
    http_infer,
)
from .graph import (
    FEATURE_SCHEMA,
    CommGraph,
    MissingFlowInfo,
    NodeFeatures,
    UnknownNode,
    build_comm_graph,
    edge_distance,
    extract_features,
    node_degrees,
    weighted_betweenness,
)
