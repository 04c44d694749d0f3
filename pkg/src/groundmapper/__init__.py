"""Sidewalk mapping from RGB-D capture sessions.

The pipeline turns per-frame segmentation masks, depth maps, poses, and
GPS fixes into georeferenced feature nodes and sidewalk width estimates,
which flow through human vetting into an OpenSidewalks-style workspace.
"""

from .errors import MappingError
from .geo import (
    GeoPoint,
    GpsFix,
    Intrinsics,
    PlanarDelta,
    Pose,
    haversine_m,
    localize_instance,
    spherical_destination,
)
from .metrics import ErrorStats, evaluate_export, evaluate_results, report_csv
from .pipeline import (
    CaptureResult,
    FeatureInstance,
    PipelineConfig,
    process_capture,
    process_session,
)
from .session import Session, read_session, write_session
from .stabilize import FeatureClass, SegMask
from .synth import NoiseSpec, SceneSpec, build_session, builtin_scene
from .vetting import Verdict, VettingRecord, apply_vetting, default_record

__version__ = "0.1.0"

__all__ = [
    "CaptureResult",
    "ErrorStats",
    "FeatureClass",
    "FeatureInstance",
    "GeoPoint",
    "GpsFix",
    "Intrinsics",
    "MappingError",
    "NoiseSpec",
    "PipelineConfig",
    "PlanarDelta",
    "Pose",
    "SceneSpec",
    "SegMask",
    "Session",
    "Verdict",
    "VettingRecord",
    "apply_vetting",
    "build_session",
    "builtin_scene",
    "default_record",
    "evaluate_export",
    "evaluate_results",
    "haversine_m",
    "localize_instance",
    "process_capture",
    "process_session",
    "read_session",
    "report_csv",
    "spherical_destination",
    "write_session",
    "__version__",
]
