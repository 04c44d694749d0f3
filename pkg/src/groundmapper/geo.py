"""Camera and geodesic math that turns labeled pixels into GPS coordinates.

Coordinate conventions (right-handed throughout):

    World frame:  x = east, y = north, z = up, meters, anchored at the device.
    Camera frame: x = right, y = down, z = forward along the optical axis.
    Image frame:  u = column (right), v = row (down), origin at the top-left
                  pixel center. A pose maps camera coordinates into the world
                  frame (camera-to-world).

A feature travels:

    pixel (u, v) + depth  ->  camera frame   (back_project)
                          ->  world frame    (to_world)
                          ->  north/east offset from the device (planar_delta)
                          ->  latitude/longitude (spherical_destination)

Distances between coordinates use the haversine form on a spherical earth.
The same radius is used everywhere so destination and distance stay mutually
consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, TYPE_CHECKING

import numpy as np
import scipy.ndimage as ndi

from .errors import (
    EmptyInstance,
    InvalidDepth,
    NoValidDepth,
    OutOfBounds,
)

if TYPE_CHECKING:  # only for annotations; stabilize imports this module at runtime
    from .stabilize import Contour, SegMask

EARTH_RADIUS_M = 6_371_000.0

# Guard band for the destination formula: the arcsine argument may exceed 1
# by float round-off only. Anything larger means broken inputs.
_ASIN_SLACK = 1e-12


def _normalize_longitude(lon: float) -> float:
    """Wrap a longitude in degrees into (-180, 180]."""
    wrapped = (lon + 180.0) % 360.0 - 180.0
    if wrapped == -180.0:
        return 180.0
    return wrapped


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform.

    ``rotation`` maps camera-frame vectors into the world frame and
    ``translation`` is the camera center in world coordinates.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation determinant must be +1")
        r = r.copy()
        t = t.copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in degrees, longitude wrapped to (-180, 180]."""

    latitude: float
    longitude: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not math.isfinite(self.longitude):
            raise ValueError(f"longitude not finite: {self.longitude}")
        object.__setattr__(self, "longitude", _normalize_longitude(self.longitude))


@dataclass(frozen=True)
class GpsFix(GeoPoint):
    """A GPS reading: position plus reported horizontal accuracy in meters."""

    horizontal_accuracy: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        if self.horizontal_accuracy < 0:
            raise ValueError("accuracy must be non-negative")

    def point(self) -> GeoPoint:
        return GeoPoint(self.latitude, self.longitude)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth along the optical axis, meters.

    Values that are zero, negative, or non-finite mark pixels without a
    usable depth estimate.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("depth map must be a 2-d array")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def validity(self) -> np.ndarray:
        return (self.values > 0) & np.isfinite(self.values)


class PlanarDelta(NamedTuple):
    """Horizontal offset from the device in meters."""

    north: float
    east: float


def back_project(u: float, v: float, depth_m: float, intrinsics: Intrinsics) -> np.ndarray:
    """Lift an image point at a known depth into the camera frame.

    Args:
        u, v: pixel coordinates (column, row). Fractional values are fine;
            instance centroids are usually not on the integer grid.
        depth_m: metric depth along the optical axis.
        intrinsics: pinhole parameters for the capturing camera.

    Returns:
        A 3-vector (x right, y down, z forward) in meters.
    """
    if not (math.isfinite(depth_m) and depth_m > 0):
        raise InvalidDepth(f"depth must be positive and finite, got {depth_m}")
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {intrinsics.width}x{intrinsics.height}")
    x = (u - intrinsics.cx) / intrinsics.fx * depth_m
    y = (v - intrinsics.cy) / intrinsics.fy * depth_m
    return np.array([x, y, depth_m])


def to_world(point_cam: np.ndarray, pose: Pose) -> np.ndarray:
    """Apply the camera-to-world rigid transform to a camera-frame point."""
    p = np.asarray(point_cam, dtype=float)
    if p.shape != (3,):
        raise ValueError("expected a 3-vector")
    return pose.rotation @ p + pose.translation


def planar_delta(point_world: np.ndarray, device_world: np.ndarray) -> PlanarDelta:
    """Horizontal north/east offset of a world point from the device.

    The vertical component is deliberately dropped: mapped features live on
    the ground plane and GPS carries no usable altitude here.
    """
    p = np.asarray(point_world, dtype=float)
    d = np.asarray(device_world, dtype=float)
    if p.shape != (3,) or d.shape != (3,):
        raise ValueError("expected 3-vectors")
    return PlanarDelta(north=float(p[1] - d[1]), east=float(p[0] - d[0]))


def spherical_destination(origin: GeoPoint, delta: PlanarDelta) -> GeoPoint:
    """Move ``delta`` meters over the spherical earth starting at ``origin``.

    The offset is converted to a ground distance and initial bearing, then
    advanced along the great circle. For a zero offset the origin is
    returned unchanged.
    """
    distance = math.hypot(delta.north, delta.east)
    if distance == 0.0:
        return GeoPoint(origin.latitude, origin.longitude)
    bearing = math.atan2(delta.east, delta.north)
    angular = distance / EARTH_RADIUS_M

    phi0 = math.radians(origin.latitude)
    lam0 = math.radians(origin.longitude)
    sin_phi = math.sin(phi0) * math.cos(angular) + math.cos(phi0) * math.sin(angular) * math.cos(bearing)
    if abs(sin_phi) > 1.0 + _ASIN_SLACK:
        raise ValueError(f"destination latitude argument out of range: {sin_phi}")
    sin_phi = max(-1.0, min(1.0, sin_phi))
    phi = math.asin(sin_phi)
    lam = lam0 + math.atan2(
        math.sin(bearing) * math.sin(angular) * math.cos(phi0),
        math.cos(angular) - math.sin(phi0) * sin_phi,
    )
    return GeoPoint(math.degrees(phi), math.degrees(lam))


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle ground distance between two coordinates, meters."""
    phi1 = math.radians(a.latitude)
    phi2 = math.radians(b.latitude)
    dphi = phi2 - phi1
    dlam = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing_rad(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle bearing from a to b, radians from north via east."""
    phi1 = math.radians(a.latitude)
    phi2 = math.radians(b.latitude)
    dlam = math.radians(b.longitude - a.longitude)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return math.atan2(y, x)


def average_depth(
    depth: DepthMap,
    center_uv: tuple[float, float],
    radius_px: float,
    member_mask: Optional[np.ndarray] = None,
) -> float:
    """Mean of valid depths within ``radius_px`` of a (u, v) center.

    When ``member_mask`` is given, only pixels set in it participate; this is
    how instance localization stays on its own surface.
    """
    u, v = center_uv
    h, w = depth.values.shape
    r = int(math.ceil(radius_px))
    row_lo = max(0, int(math.floor(v)) - r)
    row_hi = min(h, int(math.ceil(v)) + r + 1)
    col_lo = max(0, int(math.floor(u)) - r)
    col_hi = min(w, int(math.ceil(u)) + r + 1)
    if row_lo >= row_hi or col_lo >= col_hi:
        raise NoValidDepth("circle does not overlap the image")

    rows = np.arange(row_lo, row_hi)[:, None]
    cols = np.arange(col_lo, col_hi)[None, :]
    inside = (cols - u) ** 2 + (rows - v) ** 2 <= radius_px**2
    if member_mask is not None:
        if member_mask.shape != depth.values.shape:
            raise ValueError("member mask shape must match the depth map")
        inside &= member_mask[row_lo:row_hi, col_lo:col_hi]

    window = depth.values[row_lo:row_hi, col_lo:col_hi]
    usable = inside & (window > 0) & np.isfinite(window)
    if not usable.any():
        raise NoValidDepth(f"no valid depth within {radius_px}px of ({u:.1f}, {v:.1f})")
    return float(window[usable].astype(np.float64).mean())


def localize_pixel(
    u: float,
    v: float,
    depth_m: float,
    intrinsics: Intrinsics,
    pose: Pose,
    fix: GeoPoint,
) -> GeoPoint:
    """Chain back-projection, pose, and the destination step for one pixel."""
    cam = back_project(u, v, depth_m, intrinsics)
    world = to_world(cam, pose)
    delta = planar_delta(world, pose.translation)
    return spherical_destination(fix, delta)


def instance_member(mask: "SegMask", contour: "Contour") -> np.ndarray:
    """Boolean sub-mask M: the 8-connected component of the contour's class
    containing its seed point."""
    seed = contour.points[0]
    class_pixels = mask.labels == int(contour.feature_class)
    if not class_pixels[seed]:
        raise EmptyInstance(
            f"contour seed {seed} does not carry class {contour.feature_class}"
        )
    labeled, _ = ndi.label(class_pixels, structure=np.ones((3, 3), dtype=int))
    return labeled == labeled[seed]


def instance_centroid(mask: "SegMask", contour: "Contour") -> tuple:
    """Mean member pixel position as (u, v)."""
    rows, cols = np.nonzero(instance_member(mask, contour))
    return (float(cols.mean()), float(rows.mean()))


def localize_instance(
    mask: "SegMask",
    contour: "Contour",
    depth: DepthMap,
    intrinsics: Intrinsics,
    pose: Pose,
    fix: GeoPoint,
    radius_px: float = 5.0,
) -> GeoPoint:
    """Geolocate the feature instance traced by ``contour``.

    The instance sub-mask is the connected component of the contour's class
    containing its seed point. Its pixel centroid picks the representative
    image point; depth is averaged over the disc of ``radius_px`` around the
    centroid, restricted to the sub-mask, skipping invalid samples. If the
    centroid itself falls outside the sub-mask (possible for concave shapes),
    the nearest member pixel takes its place as the disc center.
    """
    if mask.labels.shape != depth.values.shape:
        raise ValueError("mask and depth dimensions differ")
    member = instance_member(mask, contour)
    rows, cols = np.nonzero(member)
    u = float(cols.mean())
    v = float(rows.mean())

    # The depth disc is centered on the centroid, or on the nearest member
    # pixel when the centroid of a concave shape lands off the instance.
    center_u, center_v = u, v
    nearest_row = int(round(v))
    nearest_col = int(round(u))
    in_bounds = 0 <= nearest_row < member.shape[0] and 0 <= nearest_col < member.shape[1]
    if not (in_bounds and member[nearest_row, nearest_col]):
        d2 = (cols - u) ** 2 + (rows - v) ** 2
        order = np.lexsort((cols, rows, d2))
        center_u = float(cols[order[0]])
        center_v = float(rows[order[0]])

    mean_depth = average_depth(depth, (center_u, center_v), radius_px, member_mask=member)
    return localize_pixel(u, v, mean_depth, intrinsics, pose, fix)
