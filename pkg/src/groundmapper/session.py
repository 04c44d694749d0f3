"""On-disk capture session format.

A session is one directory::

    manifest.json        session id, frame order, capture list, class
                         selection, optional ground truth
    NNNN.meta.json       per-frame timestamp, intrinsics, pose, GPS fix,
                         optional homography to the next frame
    NNNN.depth.f32       little-endian float32 depth, row-major
    NNNN.mask.png        8-bit single-channel labels, pixel value = class code

``NNNN`` is the zero-padded frame id. RGB imagery is deliberately absent
from the format: masks and depth are all the pipeline needs, and dropping
the photos at capture time is the privacy boundary.

Reads and writes are symmetric: ``read_session(write_session(s)) == s``
bit-for-bit, including float payloads.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image

from .errors import FormatError, InvariantViolation
from .geo import DepthMap, GeoPoint, GpsFix, Intrinsics, Pose
from .stabilize import FeatureClass, Homography, SegMask

FORMAT_NAME = "gm-session/1"


@dataclass(frozen=True)
class FrameBundle:
    """Everything captured for a single frame."""

    frame_id: int
    timestamp: float
    mask: SegMask
    depth: DepthMap
    intrinsics: Intrinsics
    pose: Pose
    gps: GpsFix
    homography_to_next: Optional[Homography] = None

    def __post_init__(self):
        if self.frame_id < 0:
            raise ValueError("frame ids must be non-negative")
        if self.mask.labels.shape != self.depth.values.shape:
            raise InvariantViolation(
                f"frame {self.frame_id}: mask {self.mask.labels.shape} vs depth {self.depth.values.shape}"
            )
        if (self.intrinsics.height, self.intrinsics.width) != self.mask.labels.shape:
            raise InvariantViolation(
                f"frame {self.frame_id}: intrinsics dims disagree with rasters"
            )


@dataclass(frozen=True)
class SessionGroundTruth:
    """Known scene answers recorded by the synthetic generator."""

    objects: tuple  # ((FeatureClass, GeoPoint), ...)
    sidewalk_width_m: Optional[float]
    camera_points: Mapping  # frame_id -> GeoPoint, the noise-free device positions


@dataclass(frozen=True)
class Session:
    session_id: str
    frames: tuple
    capture_indices: tuple
    class_selection: frozenset
    ground_truth: Optional[SessionGroundTruth] = None

    def __post_init__(self):
        validate_session(self)

    def frame_by_id(self, frame_id: int) -> FrameBundle:
        index = self._frame_index().get(frame_id)
        if index is None:
            raise KeyError(f"no frame {frame_id} in session {self.session_id}")
        return self.frames[index]

    def _frame_index(self) -> dict:
        return {f.frame_id: i for i, f in enumerate(self.frames)}

    def preceding_frames(self, frame_id: int, count: int) -> list:
        """Up to ``count`` frames immediately before ``frame_id``, oldest first."""
        index = self._frame_index()[frame_id]
        lo = max(0, index - count)
        return list(self.frames[lo:index])


def validate_session(session: Session) -> None:
    if not session.session_id:
        raise InvariantViolation("session id must be non-empty")
    if not session.frames:
        raise InvariantViolation("session has no frames")
    if not session.class_selection:
        raise InvariantViolation("class selection is empty")
    for cls in session.class_selection:
        if not isinstance(cls, FeatureClass) or cls is FeatureClass.BACKGROUND:
            raise InvariantViolation(f"unmappable class in selection: {cls!r}")

    ids = [f.frame_id for f in session.frames]
    if len(set(ids)) != len(ids):
        raise InvariantViolation("duplicate frame ids")
    times = [f.timestamp for f in session.frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InvariantViolation("timestamps must be strictly increasing")
    id_set = set(ids)
    for capture in session.capture_indices:
        if capture not in id_set:
            raise InvariantViolation(f"capture index {capture} is not a frame id")


# --- serialization -------------------------------------------------------

def _stem(frame_id: int) -> str:
    return f"{frame_id:04d}"


def _frame_meta(frame: FrameBundle) -> dict:
    meta = {
        "frame_id": frame.frame_id,
        "timestamp": frame.timestamp,
        "image": {"width": frame.intrinsics.width, "height": frame.intrinsics.height},
        "intrinsics": [float(x) for x in frame.intrinsics.matrix().ravel()],
        "pose": [float(x) for x in _pose_matrix(frame.pose).ravel()],
        "gps": {
            "latitude": frame.gps.latitude,
            "longitude": frame.gps.longitude,
            "horizontal_accuracy": frame.gps.horizontal_accuracy,
        },
    }
    if frame.homography_to_next is not None:
        meta["homography_to_next"] = [
            float(x) for x in frame.homography_to_next.matrix.ravel()
        ]
    return meta


def _pose_matrix(pose: Pose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = pose.rotation
    m[:3, 3] = pose.translation
    return m


def write_session(session: Session, path: os.PathLike) -> Path:
    """Write a session directory; an existing directory is replaced whole.

    The new content lands in a sibling temp directory first and is swapped
    in afterwards, so readers never observe a half-written session.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=target.name + ".", dir=target.parent))
    try:
        manifest = {
            "format": FORMAT_NAME,
            "session_id": session.session_id,
            "frames": [f.frame_id for f in session.frames],
            "captures": list(session.capture_indices),
            "class_selection": sorted(c.wire_name for c in session.class_selection),
            "ground_truth": _ground_truth_doc(session.ground_truth),
        }
        (staging / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
        for frame in session.frames:
            stem = _stem(frame.frame_id)
            (staging / f"{stem}.meta.json").write_text(
                json.dumps(_frame_meta(frame), indent=2, sort_keys=True) + "\n"
            )
            depth = frame.depth.values.astype("<f4", copy=False)
            (staging / f"{stem}.depth.f32").write_bytes(depth.tobytes(order="C"))
            Image.fromarray(frame.mask.labels, mode="L").save(staging / f"{stem}.mask.png")

        if target.exists():
            graveyard = Path(tempfile.mkdtemp(prefix=target.name + ".old.", dir=target.parent))
            os.replace(target, Path(graveyard) / "gone")
            shutil.rmtree(graveyard, ignore_errors=True)
        os.replace(staging, target)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return target


def _ground_truth_doc(truth: Optional[SessionGroundTruth]) -> Optional[dict]:
    if truth is None:
        return None
    return {
        "objects": [
            {"class": cls.wire_name, "latitude": p.latitude, "longitude": p.longitude}
            for cls, p in truth.objects
        ],
        "sidewalk_width_m": truth.sidewalk_width_m,
        "camera_points": {
            str(frame_id): {"latitude": p.latitude, "longitude": p.longitude}
            for frame_id, p in sorted(truth.camera_points.items())
        },
    }


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise FormatError(str(path), "<file>", "missing") from None
    except json.JSONDecodeError as exc:
        raise FormatError(str(path), "<json>", str(exc)) from None


def _require(doc: Mapping, key: str, path: Path):
    if key not in doc:
        raise FormatError(str(path), key, "missing")
    return doc[key]


def read_session(path: os.PathLike) -> Session:
    """Load and validate a session directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    manifest = _load_json(manifest_path)
    if manifest.get("format") != FORMAT_NAME:
        raise FormatError(str(manifest_path), "format", f"expected {FORMAT_NAME}")

    session_id = str(_require(manifest, "session_id", manifest_path))
    frame_ids = _require(manifest, "frames", manifest_path)
    captures = _require(manifest, "captures", manifest_path)
    selection_names = _require(manifest, "class_selection", manifest_path)
    try:
        selection = frozenset(FeatureClass.from_wire(n) for n in selection_names)
    except ValueError as exc:
        raise FormatError(str(manifest_path), "class_selection", str(exc)) from None

    frames = []
    for frame_id in frame_ids:
        frames.append(_read_frame(root, int(frame_id)))

    truth = _parse_ground_truth(manifest.get("ground_truth"), manifest_path)
    return Session(
        session_id=session_id,
        frames=tuple(frames),
        capture_indices=tuple(int(c) for c in captures),
        class_selection=selection,
        ground_truth=truth,
    )


def _read_frame(root: Path, frame_id: int) -> FrameBundle:
    stem = _stem(frame_id)
    meta_path = root / f"{stem}.meta.json"
    meta = _load_json(meta_path)

    image = _require(meta, "image", meta_path)
    width = int(_require(image, "width", meta_path))
    height = int(_require(image, "height", meta_path))

    k_values = _require(meta, "intrinsics", meta_path)
    if len(k_values) != 9:
        raise FormatError(str(meta_path), "intrinsics", "expected 9 numbers")
    k = np.array(k_values, dtype=float).reshape(3, 3)
    try:
        intrinsics = Intrinsics(
            fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2], width=width, height=height
        )
    except ValueError as exc:
        raise FormatError(str(meta_path), "intrinsics", str(exc)) from None

    pose_values = _require(meta, "pose", meta_path)
    if len(pose_values) != 16:
        raise FormatError(str(meta_path), "pose", "expected 16 numbers")
    m = np.array(pose_values, dtype=float).reshape(4, 4)
    try:
        pose = Pose(rotation=m[:3, :3], translation=m[:3, 3])
    except ValueError as exc:
        raise FormatError(str(meta_path), "pose", str(exc)) from None

    gps_doc = _require(meta, "gps", meta_path)
    try:
        gps = GpsFix(
            latitude=float(_require(gps_doc, "latitude", meta_path)),
            longitude=float(_require(gps_doc, "longitude", meta_path)),
            horizontal_accuracy=float(gps_doc.get("horizontal_accuracy", 0.0)),
        )
    except ValueError as exc:
        raise FormatError(str(meta_path), "gps", str(exc)) from None

    homography = None
    if "homography_to_next" in meta:
        h_values = meta["homography_to_next"]
        if len(h_values) != 9:
            raise FormatError(str(meta_path), "homography_to_next", "expected 9 numbers")
        homography = Homography(np.array(h_values, dtype=float).reshape(3, 3))

    depth_path = root / f"{stem}.depth.f32"
    try:
        raw = depth_path.read_bytes()
    except FileNotFoundError:
        raise FormatError(str(depth_path), "<file>", "missing") from None
    expected = width * height * 4
    if len(raw) != expected:
        raise FormatError(str(depth_path), "<size>", f"{len(raw)} bytes, expected {expected}")
    depth = DepthMap(np.frombuffer(raw, dtype="<f4").reshape(height, width))

    mask_path = root / f"{stem}.mask.png"
    try:
        with Image.open(mask_path) as img:
            if img.mode != "L":
                raise FormatError(str(mask_path), "<mode>", f"expected 8-bit L, got {img.mode}")
            labels = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError:
        raise FormatError(str(mask_path), "<file>", "missing") from None
    if labels.shape != (height, width):
        raise FormatError(str(mask_path), "<size>", f"{labels.shape}, expected {(height, width)}")
    try:
        mask = SegMask(labels)
    except ValueError as exc:
        raise FormatError(str(mask_path), "<labels>", str(exc)) from None

    return FrameBundle(
        frame_id=frame_id,
        timestamp=float(_require(meta, "timestamp", meta_path)),
        mask=mask,
        depth=depth,
        intrinsics=intrinsics,
        pose=pose,
        gps=gps,
        homography_to_next=homography,
    )


def _parse_ground_truth(doc, manifest_path: Path) -> Optional[SessionGroundTruth]:
    if doc is None:
        return None
    objects = []
    for entry in doc.get("objects", []):
        objects.append(
            (
                FeatureClass.from_wire(_require(entry, "class", manifest_path)),
                GeoPoint(entry["latitude"], entry["longitude"]),
            )
        )
    camera_points = {
        int(frame_id): GeoPoint(p["latitude"], p["longitude"])
        for frame_id, p in doc.get("camera_points", {}).items()
    }
    return SessionGroundTruth(
        objects=tuple(objects),
        sidewalk_width_m=doc.get("sidewalk_width_m"),
        camera_points=camera_points,
    )


def sessions_equal(a: Session, b: Session) -> bool:
    """Bitwise equality, the contract for write/read round-trips."""
    if (
        a.session_id != b.session_id
        or a.capture_indices != b.capture_indices
        or a.class_selection != b.class_selection
        or len(a.frames) != len(b.frames)
    ):
        return False
    for fa, fb in zip(a.frames, b.frames):
        if (
            fa.frame_id != fb.frame_id
            or fa.timestamp != fb.timestamp
            or fa.intrinsics != fb.intrinsics
            or fa.gps != fb.gps
            or not np.array_equal(fa.mask.labels, fb.mask.labels)
            or fa.depth.values.tobytes() != fb.depth.values.tobytes()
            or not np.array_equal(fa.pose.rotation, fb.pose.rotation)
            or not np.array_equal(fa.pose.translation, fb.pose.translation)
        ):
            return False
        ha, hb = fa.homography_to_next, fb.homography_to_next
        if (ha is None) != (hb is None):
            return False
        if ha is not None and not np.array_equal(ha.matrix, hb.matrix):
            return False
    if (a.ground_truth is None) != (b.ground_truth is None):
        return False
    if a.ground_truth is not None:
        if (
            a.ground_truth.objects != b.ground_truth.objects
            or a.ground_truth.sidewalk_width_m != b.ground_truth.sidewalk_width_m
            or dict(a.ground_truth.camera_points) != dict(b.ground_truth.camera_points)
        ):
            return False
    return True


def new_session_id() -> str:
    return uuid.uuid4().hex[:12]
