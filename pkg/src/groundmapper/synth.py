"""Synthetic scene generator, the ground-truth oracle for the pipeline.

Scenes are deliberately minimal: a flat ground plane at z=0 carrying a
sidewalk strip, plus vertical camera-facing billboards (poles, signs)
standing on the walking line. Rendering is exact ray casting, so a
noiseless session localizes every object to sub-millimeter and the whole
error budget of a noisy run comes from the injected noise.

Depth and labels share one visibility envelope: content nearer than
``near_m`` or farther than ``far_m`` is neither labeled nor given depth,
mirroring a capture rig that only trusts segmentation inside its depth
range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateScene, LengthMismatch
from .geo import (
    DepthMap,
    GeoPoint,
    GpsFix,
    Intrinsics,
    PlanarDelta,
    Pose,
    spherical_destination,
)
from .session import FrameBundle, Session, SessionGroundTruth, new_session_id
from .stabilize import FeatureClass, SegMask

# camera x -> east, camera y -> down, camera z -> north
NORTH_FACING = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class BillboardSpec:
    """Vertical rectangle spanning east-west, facing along-track."""

    feature_class: FeatureClass
    along_m: float
    half_width_m: float
    base_height_m: float
    top_height_m: float
    east_m: float = 0.0

    def __post_init__(self):
        if self.half_width_m <= 0:
            raise ValueError("billboard half width must be positive")
        if self.top_height_m <= self.base_height_m:
            raise ValueError("billboard top must be above its base")
        if self.feature_class is FeatureClass.BACKGROUND:
            raise ValueError("billboards need a mappable class")


@dataclass(frozen=True)
class StripSpec:
    """Sidewalk band on the ground plane, offsets east of the walking line."""

    east_min_m: float
    east_max_m: float

    def __post_init__(self):
        if self.east_max_m <= self.east_min_m:
            raise ValueError("strip east extent is empty")

    @property
    def width_m(self) -> float:
        return self.east_max_m - self.east_min_m


@dataclass(frozen=True)
class SceneSpec:
    name: str
    origin: GeoPoint
    camera_height_m: float
    path_length_m: float
    frame_count: int
    fps: float
    image_width: int
    image_height: int
    focal_px: float
    strip: StripSpec
    objects: tuple = ()
    near_m: float = 0.5
    far_m: float = 6.0
    warmup_frames: int = 4
    capture_every: int = 1

    def __post_init__(self):
        if self.camera_height_m <= 0:
            raise DegenerateScene("camera must be above the ground plane")
        if self.far_m <= self.near_m:
            raise DegenerateScene("far plane must exceed near plane")
        if self.frame_count <= self.warmup_frames:
            raise DegenerateScene("trajectory shorter than the warmup")
        if self.capture_every < 1:
            raise DegenerateScene("capture cadence must be >= 1")
        if min(self.image_width, self.image_height, self.focal_px) <= 0:
            raise DegenerateScene("camera model is degenerate")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(
            fx=self.focal_px,
            fy=self.focal_px,
            cx=self.image_width / 2.0,
            cy=self.image_height / 2.0,
            width=self.image_width,
            height=self.image_height,
        )

    def class_selection(self) -> frozenset:
        present = {b.feature_class for b in self.objects}
        present.add(FeatureClass.SIDEWALK)
        return frozenset(present)


@dataclass(frozen=True)
class NoiseSpec:
    gps_sigma_m: float = 0.0
    depth_sigma_m: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gps_sigma_m < 0 or self.depth_sigma_m < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class TrajectoryPoint:
    timestamp: float
    pose: Pose
    fix: GpsFix  # noise-free device position


_SCENE_ORIGIN = GeoPoint(47.6062, -122.3321)
_STANDARD_STRIP = StripSpec(east_min_m=0.8, east_max_m=2.8)


def _pole(along: float) -> BillboardSpec:
    return BillboardSpec(FeatureClass.POLE, along, 0.05, 0.0, 3.0)


def _sign(along: float) -> BillboardSpec:
    return BillboardSpec(FeatureClass.TRAFFIC_SIGN, along, 0.3, 2.6, 3.2)


_BUILTIN = {
    # 50 captures at walking pace, full resolution
    "default": SceneSpec(
        name="default",
        origin=_SCENE_ORIGIN,
        camera_height_m=2.2,
        path_length_m=62.0,
        frame_count=54,
        fps=10.0,
        image_width=640,
        image_height=480,
        focal_px=500.0,
        strip=_STANDARD_STRIP,
        objects=(
            _pole(10.0), _sign(17.0), _pole(24.0), _sign(31.0),
            _pole(38.0), _pole(45.0), _sign(52.0), _pole(59.0),
        ),
    ),
    # 204 captures at a finer step and lower resolution, for noise statistics
    "dense": SceneSpec(
        name="dense",
        origin=_SCENE_ORIGIN,
        camera_height_m=2.2,
        path_length_m=62.0,
        frame_count=208,
        fps=10.0,
        image_width=320,
        image_height=240,
        focal_px=250.0,
        strip=_STANDARD_STRIP,
        objects=(
            _pole(10.0), _sign(17.0), _pole(24.0), _sign(31.0),
            _pole(38.0), _pole(45.0), _sign(52.0), _pole(59.0),
        ),
    ),
    # one pole + one sign, a few seconds end to end
    "smoke": SceneSpec(
        name="smoke",
        origin=_SCENE_ORIGIN,
        camera_height_m=2.2,
        path_length_m=8.0,
        frame_count=16,
        fps=10.0,
        image_width=320,
        image_height=240,
        focal_px=250.0,
        strip=_STANDARD_STRIP,
        objects=(_pole(4.0), _sign(7.0)),
    ),
}


_REQUIRED = object()


def scene_from_mapping(data) -> SceneSpec:
    """Build a SceneSpec from parsed JSON. Unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ValueError("scene spec must be a JSON object")

    def take(source: dict, key: str, default=_REQUIRED):
        if key in source:
            return source.pop(key)
        if default is _REQUIRED:
            raise ValueError(f"scene spec is missing {key!r}")
        return default

    def board_spec(board: dict) -> BillboardSpec:
        spec = BillboardSpec(
            feature_class=FeatureClass.from_wire(take(board, "class")),
            along_m=float(take(board, "along_m")),
            half_width_m=float(take(board, "half_width_m")),
            base_height_m=float(take(board, "base_height_m")),
            top_height_m=float(take(board, "top_height_m")),
            east_m=float(take(board, "east_m", 0.0)),
        )
        if board:
            raise ValueError(f"unknown object key {sorted(board)[0]!r}")
        return spec

    data = dict(data)
    origin = take(data, "origin")
    strip = take(data, "strip")
    objects = take(data, "objects", [])
    spec = SceneSpec(
        name=str(take(data, "name")),
        origin=GeoPoint(float(take(origin, "latitude")), float(take(origin, "longitude"))),
        camera_height_m=float(take(data, "camera_height_m")),
        path_length_m=float(take(data, "path_length_m")),
        frame_count=int(take(data, "frame_count")),
        fps=float(take(data, "fps")),
        image_width=int(take(data, "image_width")),
        image_height=int(take(data, "image_height")),
        focal_px=float(take(data, "focal_px")),
        strip=StripSpec(
            east_min_m=float(take(strip, "east_min_m")),
            east_max_m=float(take(strip, "east_max_m")),
        ),
        objects=tuple(board_spec(dict(b)) for b in objects),
        near_m=float(take(data, "near_m", 0.5)),
        far_m=float(take(data, "far_m", 6.0)),
        warmup_frames=int(take(data, "warmup_frames", 4)),
        capture_every=int(take(data, "capture_every", 1)),
    )
    for leftover in (data, origin, strip):
        if leftover:
            raise ValueError(f"unknown scene key {sorted(leftover)[0]!r}")
    return spec


def builtin_scene(name: str) -> SceneSpec:
    try:
        return _BUILTIN[name]
    except KeyError:
        known = ", ".join(sorted(_BUILTIN))
        raise ValueError(f"unknown scene {name!r} (known: {known})") from None


def builtin_scene_names() -> tuple:
    return tuple(sorted(_BUILTIN))


def straight_walk(scene: SceneSpec) -> tuple:
    """Constant-speed walk due north along the object line, camera level."""
    points = []
    step = scene.path_length_m / (scene.frame_count - 1)
    for i in range(scene.frame_count):
        along = i * step
        pose = Pose(
            rotation=NORTH_FACING,
            translation=np.array([0.0, along, scene.camera_height_m]),
        )
        fix = GpsFix(
            *_as_latlon(spherical_destination(scene.origin, PlanarDelta(along, 0.0)))
        )
        points.append(TrajectoryPoint(timestamp=i / scene.fps, pose=pose, fix=fix))
    return tuple(points)


def _as_latlon(p: GeoPoint) -> tuple:
    return (p.latitude, p.longitude)


def render_frame(scene: SceneSpec, pose: Pose) -> tuple:
    """Ray-cast one frame. Returns (labels uint8, depth float32).

    Depth is the camera-z distance of the nearest hit; pixels with no hit
    inside the visibility envelope get depth 0 and the background label.
    """
    h, w = scene.image_height, scene.image_width
    f = scene.focal_px
    cx, cy = w / 2.0, h / 2.0
    col_slope = (np.arange(w) - cx) / f
    row_slope = (np.arange(h) - cy) / f

    rot = pose.rotation
    origin = pose.translation
    # world-frame ray directions, scaled so the camera-z component is 1;
    # the ray parameter t is then directly the stored z-depth
    a = np.broadcast_to(col_slope, (h, w))
    b = np.broadcast_to(row_slope[:, None], (h, w))
    dir_e = rot[0, 0] * a + rot[0, 1] * b + rot[0, 2]
    dir_n = rot[1, 0] * a + rot[1, 1] * b + rot[1, 2]
    dir_u = rot[2, 0] * a + rot[2, 1] * b + rot[2, 2]

    t_buf = np.full((h, w), np.inf)
    labels = np.zeros((h, w), dtype=np.uint8)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dir_u < 0, -origin[2] / dir_u, np.inf)
        east = origin[0] + t_ground * dir_e  # nan where no hit; compares False
    ground_hit = (t_ground > scene.near_m) & (t_ground <= scene.far_m)
    t_buf[ground_hit] = t_ground[ground_hit]
    on_strip = (
        ground_hit
        & (east >= scene.strip.east_min_m)
        & (east <= scene.strip.east_max_m)
    )
    labels[on_strip] = FeatureClass.SIDEWALK

    for board in scene.objects:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_board = np.where(dir_n > 0, (board.along_m - origin[1]) / dir_n, np.inf)
            east_hit = origin[0] + t_board * dir_e
            up_hit = origin[2] + t_board * dir_u
        hit = (
            (t_board > scene.near_m)
            & (t_board <= scene.far_m)
            & (np.abs(east_hit - board.east_m) <= board.half_width_m)
            & (up_hit >= board.base_height_m)
            & (up_hit <= board.top_height_m)
            & (t_board < t_buf)
        )
        t_buf[hit] = t_board[hit]
        labels[hit] = board.feature_class

    depth = np.where(np.isfinite(t_buf), t_buf, 0.0).astype(np.float32)
    return labels, depth


def generate_synthetic(
    scene: SceneSpec,
    trajectory: Sequence,
    noise: NoiseSpec = NoiseSpec(),
    session_id: Optional[str] = None,
) -> Session:
    """Render a full session along ``trajectory`` and inject noise.

    Depth noise is additive Gaussian per valid pixel; GPS noise is a
    horizontal Gaussian whose per-axis sigma is gps_sigma_m / sqrt(2), so
    gps_sigma_m is the RMS of the injected 2-D error. The generator
    validates its own noise statistics and refuses to hand back a session
    whose injected error disagrees with the request.
    """
    if len(trajectory) != scene.frame_count:
        raise LengthMismatch(
            f"trajectory has {len(trajectory)} points, scene wants {scene.frame_count}"
        )
    rng = np.random.default_rng(noise.seed)
    intrinsics = scene.intrinsics()

    frames = []
    gps_errors = []
    for frame_id, point in enumerate(trajectory):
        labels, depth = render_frame(scene, point.pose)
        valid = depth > 0
        if noise.depth_sigma_m > 0:
            jitter = rng.normal(0.0, noise.depth_sigma_m, size=depth.shape)
            noisy = depth.astype(np.float64)
            noisy[valid] += jitter[valid]
            if np.any(noisy[valid] <= 0):
                raise DegenerateScene(
                    "depth noise drove a pixel non-positive; sigma too large for the scene"
                )
            depth = noisy.astype(np.float32)

        fix = point.fix
        if noise.gps_sigma_m > 0:
            north_err, east_err = rng.normal(
                0.0, noise.gps_sigma_m / math.sqrt(2.0), size=2
            )
            gps_errors.append(math.hypot(north_err, east_err))
            shifted = spherical_destination(
                fix.point(), PlanarDelta(north_err, east_err)
            )
            fix = GpsFix(
                shifted.latitude, shifted.longitude, horizontal_accuracy=noise.gps_sigma_m
            )

        frames.append(
            FrameBundle(
                frame_id=frame_id,
                timestamp=point.timestamp,
                mask=SegMask(labels),
                depth=DepthMap(depth),
                intrinsics=intrinsics,
                pose=point.pose,
                gps=fix,
            )
        )

    if gps_errors and len(gps_errors) >= 30:
        rms = math.sqrt(sum(e * e for e in gps_errors) / len(gps_errors))
        if not (0.8 * noise.gps_sigma_m <= rms <= 1.2 * noise.gps_sigma_m):
            raise DegenerateScene(
                f"injected GPS error RMS {rms:.3f} m outside "
                f"[0.8, 1.2] x {noise.gps_sigma_m} m"
            )

    captures = tuple(
        range(scene.warmup_frames, scene.frame_count, scene.capture_every)
    )
    truth = SessionGroundTruth(
        objects=tuple(
            (
                board.feature_class,
                spherical_destination(
                    scene.origin, PlanarDelta(board.along_m, board.east_m)
                ),
            )
            for board in scene.objects
        ),
        sidewalk_width_m=scene.strip.width_m,
        camera_points={i: t.fix.point() for i, t in enumerate(trajectory)},
    )
    return Session(
        session_id=session_id or new_session_id(),
        frames=tuple(frames),
        capture_indices=captures,
        class_selection=scene.class_selection(),
        ground_truth=truth,
    )


def build_session(
    scene: SceneSpec,
    noise: NoiseSpec = NoiseSpec(),
    session_id: Optional[str] = None,
) -> Session:
    """Straight-walk convenience wrapper around generate_synthetic."""
    return generate_synthetic(scene, straight_walk(scene), noise, session_id)
