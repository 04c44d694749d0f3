"""Capture processing end to end.

For each captured frame: align the preceding frames onto it, fuse the
masks by majority vote, extract per-class instances, localize each one,
and measure the sidewalk band ahead. Item failures (no valid depth under
an instance, no sidewalk in view) are collected as issues on the result
instead of aborting the capture; one bad detection must not cost the
rest of the frame.

Everything here is pure: identical session bytes and config produce
identical results, and captures can be processed in any order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .errors import EmptyInstance, NoSidewalk, NoValidDepth, RoiOutOfBounds
from .geo import GeoPoint, instance_centroid, localize_instance
from .session import Session
from .sidewalk import (
    RegionOfInterest,
    SidewalkMeasurement,
    Trapezoid,
    apply_roi,
    extract_trapezoid,
    measure_sidewalk,
)
from .stabilize import (
    Contour,
    FeatureClass,
    Homography,
    SegMask,
    extract_instances,
    infinite_homography,
    majority_vote,
    warp_mask,
)


@dataclass(frozen=True)
class PipelineConfig:
    previous_frames: int = 4
    min_instance_area: int = 25
    roi_top_fraction: float = 0.45
    roi_bottom_fraction: float = 1.0
    roi_left_fraction: float = 0.0
    roi_right_fraction: float = 1.0
    min_run_fraction: float = 0.15
    depth_radius_px: float = 5.0

    def __post_init__(self):
        if self.previous_frames < 0:
            raise ValueError("previous_frames must be >= 0")
        if self.min_instance_area < 1:
            raise ValueError("min_instance_area must be >= 1")
        if self.depth_radius_px <= 0:
            raise ValueError("depth_radius_px must be positive")

    def roi_for(self, width: int, height: int) -> RegionOfInterest:
        return RegionOfInterest.from_fractions(
            width,
            height,
            top=self.roi_top_fraction,
            bottom=self.roi_bottom_fraction,
            left=self.roi_left_fraction,
            right=self.roi_right_fraction,
        )


@dataclass(frozen=True)
class CaptureIssue:
    stage: str
    detail: str
    feature_class: Optional[FeatureClass] = None


@dataclass(frozen=True)
class FeatureInstance:
    """A localized detection. Only successfully localized instances exist;
    failures surface as CaptureIssue entries instead."""

    instance_id: int  # position within its class list for this capture
    feature_class: FeatureClass
    contour: Contour
    centroid_px: tuple
    geolocation: GeoPoint
    capture_id: int


@dataclass(frozen=True)
class CaptureResult:
    capture_id: int
    instances: Mapping  # FeatureClass -> tuple of FeatureInstance, non-empty classes only
    sidewalk: Optional[SidewalkMeasurement] = None
    trapezoid: Optional[Trapezoid] = None  # image-space band behind sidewalk
    issues: tuple = ()

    def all_instances(self) -> tuple:
        ordered = []
        for cls in sorted(self.instances, key=int):
            ordered.extend(self.instances[cls])
        return tuple(ordered)


def alignment_chain(frames: Sequence, config: PipelineConfig) -> list:
    """Homographies mapping each of frames[:-1] onto frames[-1].

    A frame's recorded homography to its successor takes precedence; the
    rotation-only (infinite) homography from the pose pair fills the gaps.
    Returned list is parallel to frames[:-1].
    """
    steps = []
    for before, after in zip(frames, frames[1:]):
        if before.homography_to_next is not None:
            steps.append(before.homography_to_next)
        else:
            steps.append(
                infinite_homography(before.pose, after.pose, after.intrinsics)
            )
    to_last = []
    cumulative = Homography.identity()
    for step in reversed(steps):
        cumulative = cumulative.compose(step)
        to_last.append(cumulative)
    to_last.reverse()
    return to_last


def fuse_capture(session: Session, capture_id: int, config: PipelineConfig) -> SegMask:
    """Majority-vote mask for a capture, previous frames aligned onto it."""
    frame = session.frame_by_id(capture_id)
    previous = session.preceding_frames(capture_id, config.previous_frames)
    if not previous:
        return frame.mask
    chain = alignment_chain([*previous, frame], config)
    aligned = [warp_mask(prev.mask, hom) for prev, hom in zip(previous, chain)]
    return majority_vote(frame.mask, aligned)


def process_capture(
    session: Session, capture_id: int, config: PipelineConfig = PipelineConfig()
) -> CaptureResult:
    if capture_id not in session.capture_indices:
        raise ValueError(f"frame {capture_id} is not a capture in this session")
    frame = session.frame_by_id(capture_id)
    fused = fuse_capture(session, capture_id, config)

    issues = []
    instances = {}
    object_classes = sorted(
        session.class_selection - {FeatureClass.SIDEWALK}, key=int
    )
    if object_classes:
        contours = extract_instances(
            fused, object_classes, min_instance_area=config.min_instance_area
        )
        for contour in contours:
            try:
                location = localize_instance(
                    fused,
                    contour,
                    frame.depth,
                    frame.intrinsics,
                    frame.pose,
                    frame.gps,
                    radius_px=config.depth_radius_px,
                )
                centroid = instance_centroid(fused, contour)
            except (NoValidDepth, EmptyInstance) as exc:
                issues.append(
                    CaptureIssue(
                        stage="localize",
                        detail=str(exc),
                        feature_class=contour.feature_class,
                    )
                )
                continue
            bucket = instances.setdefault(contour.feature_class, [])
            bucket.append(
                FeatureInstance(
                    instance_id=len(bucket),
                    feature_class=contour.feature_class,
                    contour=contour,
                    centroid_px=centroid,
                    geolocation=location,
                    capture_id=capture_id,
                )
            )

    sidewalk = None
    trapezoid = None
    if FeatureClass.SIDEWALK in session.class_selection:
        try:
            roi = config.roi_for(frame.intrinsics.width, frame.intrinsics.height)
            cropped = apply_roi(fused, roi)
            trapezoid = extract_trapezoid(
                cropped, roi, min_run_fraction=config.min_run_fraction
            )
            sidewalk = measure_sidewalk(
                trapezoid,
                frame.depth,
                frame.intrinsics,
                frame.pose,
                frame.gps,
                radius_px=config.depth_radius_px,
            )
        except (NoSidewalk, NoValidDepth, RoiOutOfBounds) as exc:
            trapezoid = None  # band without a width is not a measurement
            issues.append(
                CaptureIssue(
                    stage="sidewalk",
                    detail=str(exc),
                    feature_class=FeatureClass.SIDEWALK,
                )
            )

    return CaptureResult(
        capture_id=capture_id,
        instances={cls: tuple(items) for cls, items in instances.items()},
        sidewalk=sidewalk,
        trapezoid=trapezoid,
        issues=tuple(issues),
    )


def process_session(
    session: Session, config: PipelineConfig = PipelineConfig()
) -> tuple:
    """Process every capture in order. Capture issues stay on the results."""
    return tuple(
        process_capture(session, capture_id, config)
        for capture_id in session.capture_indices
    )
