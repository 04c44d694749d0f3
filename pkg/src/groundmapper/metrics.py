"""Evaluation statistics: localization and width errors against ground truth.

All statistics are population statistics (divide by n, not n-1), which
makes rmse^2 = mean^2 + std^2 an exact identity rather than an
approximation; ErrorStats enforces it on construction.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import EmptyInput, InvariantViolation, LengthMismatch
from .geo import GeoPoint, haversine_m
from .session import Session
from .stabilize import FeatureClass

MATCH_GATE_M = 10.0
NEAR_FIELD_M = 5.0


@dataclass(frozen=True)
class ErrorStats:
    mean_m: float
    std_m: float
    rmse_m: float
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise InvariantViolation("statistics need at least one sample")
        gap = abs(self.rmse_m**2 - (self.mean_m**2 + self.std_m**2))
        if gap > 1e-9 * max(1.0, self.rmse_m**2):
            raise InvariantViolation(
                f"rmse^2 != mean^2 + std^2 (population identity violated by {gap:g})"
            )

    @classmethod
    def from_errors(cls, errors: Sequence) -> "ErrorStats":
        if len(errors) == 0:
            raise EmptyInput("no error samples")
        values = np.asarray(errors, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("errors must be a flat sequence")
        if not np.isfinite(values).all():
            raise ValueError("errors must be finite")
        mean = float(values.mean())
        std = float(values.std())  # population
        rmse = float(math.sqrt(float((values**2).mean())))
        return cls(mean_m=mean, std_m=std, rmse_m=rmse, n=len(values))


def localization_errors(predicted: Sequence, truth: Sequence) -> ErrorStats:
    """Stats over per-pair ground distances; lists must be matched 1:1."""
    if len(predicted) != len(truth):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(truth)} truths")
    if not predicted:
        raise EmptyInput("no pairs to evaluate")
    distances = [haversine_m(p, t) for p, t in zip(predicted, truth)]
    return ErrorStats.from_errors(distances)


def width_errors(measured: Sequence, truth: Sequence) -> ErrorStats:
    if len(measured) != len(truth):
        raise LengthMismatch(f"{len(measured)} measurements vs {len(truth)} truths")
    if not measured:
        raise EmptyInput("no measurements")
    return ErrorStats.from_errors([abs(m - t) for m, t in zip(measured, truth)])


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # ((pred_index, truth_index, distance_m), ...)
    unmatched_predictions: tuple  # indices
    unmatched_truth: tuple  # indices


def _prediction_key(item) -> tuple:
    # FeatureInstance or a plain (FeatureClass, GeoPoint) pair
    if hasattr(item, "feature_class") and hasattr(item, "geolocation"):
        return item.feature_class, item.geolocation
    cls, point = item
    return cls, point


def match_instances(
    predicted: Sequence, truth: Sequence, gate_m: float = MATCH_GATE_M
) -> MatchResult:
    """Greedy nearest-neighbor matching within class.

    Each truth and each prediction participates in at most one pair, and
    no pair exceeds ``gate_m`` ground distance. Matching is deterministic:
    candidate pairs are taken closest-first, index order breaking ties.
    """
    candidates = []
    preds = [_prediction_key(p) for p in predicted]
    for pi, (p_cls, p_point) in enumerate(preds):
        for ti, (t_cls, t_point) in enumerate(truth):
            if p_cls is not t_cls:
                continue
            distance = haversine_m(p_point, t_point)
            if distance <= gate_m:
                candidates.append((distance, pi, ti))
    candidates.sort()

    pairs = []
    used_pred = set()
    used_truth = set()
    for distance, pi, ti in candidates:
        if pi in used_pred or ti in used_truth:
            continue
        used_pred.add(pi)
        used_truth.add(ti)
        pairs.append((pi, ti, distance))
    pairs.sort(key=lambda item: (item[0], item[1]))
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_predictions=tuple(i for i in range(len(preds)) if i not in used_pred),
        unmatched_truth=tuple(i for i in range(len(truth)) if i not in used_truth),
    )


@dataclass(frozen=True)
class ObjectReport:
    """Per ground-truth object, pooled over all captures that matched it."""

    feature_class: FeatureClass
    location: GeoPoint
    times_matched: int
    mean_error_m: float
    max_error_m: float


@dataclass(frozen=True)
class EvaluationReport:
    per_class: Mapping  # FeatureClass -> ErrorStats
    overall: Optional[ErrorStats]
    width: Optional[ErrorStats]
    near_field: Optional[ErrorStats]
    objects: tuple  # ObjectReport per ground-truth object, same order as truth
    matched_samples: int
    extra_predictions: int  # predictions not matched to any truth


def _evaluate_grouped(
    by_capture: Mapping,
    session: Session,
    width_by_capture: Mapping,
    gate_m: float,
    near_field_m: float,
) -> EvaluationReport:
    truth = session.ground_truth
    if truth is None:
        raise EmptyInput("session carries no ground truth")
    truth_list = list(truth.objects)

    errors_by_class = {}
    all_errors = []
    near_errors = []
    per_object_errors = [[] for _ in truth_list]
    extra = 0

    for capture_id, predictions in sorted(by_capture.items()):
        match = match_instances(predictions, truth_list, gate_m=gate_m)
        extra += len(match.unmatched_predictions)
        camera = truth.camera_points.get(capture_id)
        for pi, ti, distance in match.pairs:
            cls, t_point = truth_list[ti]
            errors_by_class.setdefault(cls, []).append(distance)
            all_errors.append(distance)
            per_object_errors[ti].append(distance)
            if camera is not None and haversine_m(camera, t_point) <= near_field_m:
                near_errors.append(distance)

    width_measured = []
    width_truth = []
    if truth.sidewalk_width_m is not None:
        for capture_id, width in sorted(width_by_capture.items()):
            if width is not None:
                width_measured.append(width)
                width_truth.append(truth.sidewalk_width_m)

    objects = tuple(
        ObjectReport(
            feature_class=cls,
            location=point,
            times_matched=len(errs),
            mean_error_m=float(np.mean(errs)) if errs else float("nan"),
            max_error_m=float(np.max(errs)) if errs else float("nan"),
        )
        for (cls, point), errs in zip(truth_list, per_object_errors)
    )
    return EvaluationReport(
        per_class={
            cls: ErrorStats.from_errors(errs)
            for cls, errs in sorted(errors_by_class.items(), key=lambda kv: int(kv[0]))
        },
        overall=ErrorStats.from_errors(all_errors) if all_errors else None,
        width=(
            width_errors(width_measured, width_truth) if width_measured else None
        ),
        near_field=ErrorStats.from_errors(near_errors) if near_errors else None,
        objects=objects,
        matched_samples=len(all_errors),
        extra_predictions=extra,
    )


def evaluate_results(
    results: Sequence,
    session: Session,
    gate_m: float = MATCH_GATE_M,
    near_field_m: float = NEAR_FIELD_M,
) -> EvaluationReport:
    """Evaluate in-process CaptureResults against the session's ground truth."""
    by_capture = {}
    width_by_capture = {}
    for result in results:
        preds = [
            (inst.feature_class, inst.geolocation) for inst in result.all_instances()
        ]
        by_capture[result.capture_id] = preds
        width_by_capture[result.capture_id] = (
            result.sidewalk.width_m if result.sidewalk is not None else None
        )
    return _evaluate_grouped(by_capture, session, width_by_capture, gate_m, near_field_m)


def evaluate_export(
    geojson_text: str,
    session: Session,
    gate_m: float = MATCH_GATE_M,
    near_field_m: float = NEAR_FIELD_M,
) -> EvaluationReport:
    """Evaluate an exported FeatureCollection against session ground truth.

    Uploaded nodes carry a capture_id tag precisely so this grouping can
    reconstruct the per-capture prediction sets.
    """
    doc = json.loads(geojson_text)
    by_capture = {}
    width_by_capture = {}
    for feature in doc.get("features", []):
        if feature.get("geometry", {}).get("type") != "Point":
            continue
        props = feature.get("properties", {})
        if "capture_id" not in props:
            continue
        capture_id = int(props["capture_id"])
        lon, lat = feature["geometry"]["coordinates"]
        cls = FeatureClass.from_wire(props["class"])
        point = GeoPoint(lat, lon)
        if cls is FeatureClass.SIDEWALK:
            if "width" in props:
                width_by_capture[capture_id] = float(props["width"])
            continue
        by_capture.setdefault(capture_id, []).append((cls, point))
    for capture_id in width_by_capture:
        by_capture.setdefault(capture_id, [])
    return _evaluate_grouped(by_capture, session, width_by_capture, gate_m, near_field_m)


def report_csv(report: EvaluationReport) -> str:
    """Per-class error table, one row per class plus aggregate rows."""
    out = io.StringIO()
    out.write("class,mean_m,std_m,rmse_m,n\n")

    def row(name: str, stats: Optional[ErrorStats]) -> None:
        if stats is None:
            return
        out.write(
            f"{name},{stats.mean_m:.6f},{stats.std_m:.6f},{stats.rmse_m:.6f},{stats.n}\n"
        )

    for cls, stats in report.per_class.items():
        row(cls.wire_name, stats)
    row("all_objects", report.overall)
    row("near_field", report.near_field)
    row("sidewalk_width", report.width)
    return out.getvalue()
