"""Temporal label stabilization and instance extraction.

A captured segmentation mask is fused with the few frames before it: each
previous mask is re-projected into the capture's viewpoint with a
rotation-only (infinite) homography, then every pixel takes the majority
label across the aligned stack. Fused masks are then cut into per-class
connected components whose traced boundaries feed localization.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np
import scipy.ndimage as ndi

from .errors import DimensionMismatch, SingularHomography
from .geo import Intrinsics, Pose


class FeatureClass(IntEnum):
    """Segmentation label codes. Extra model classes fold into BACKGROUND."""

    BACKGROUND = 0
    SIDEWALK = 1
    BUILDING = 2
    TRAFFIC_SIGN = 3
    TRAFFIC_LIGHT = 4
    POLE = 5

    @property
    def wire_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_wire(cls, name: str) -> "FeatureClass":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown feature class {name!r}") from None


MAPPABLE_CLASSES = frozenset(
    {
        FeatureClass.SIDEWALK,
        FeatureClass.BUILDING,
        FeatureClass.TRAFFIC_SIGN,
        FeatureClass.TRAFFIC_LIGHT,
        FeatureClass.POLE,
    }
)

_N_CLASSES = len(FeatureClass)
_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class SegMask:
    """A single-channel label raster, one class code per pixel."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.size == 0:
            raise ValueError("mask must be a non-empty 2-d array")
        lab = lab.astype(np.uint8, copy=True)
        if lab.max(initial=0) >= _N_CLASSES:
            raise ValueError(f"label code above {_N_CLASSES - 1} in mask")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class Homography:
    """A 3x3 projective map on pixel coordinates, scaled so h33 = 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def compose(self, inner: "Homography") -> "Homography":
        """The map applying ``inner`` first, then this one."""
        return Homography(self.matrix @ inner.matrix)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))


def infinite_homography(pose_prev: Pose, pose_current: Pose, intrinsics: Intrinsics) -> Homography:
    """Pixel map from a previous frame into the current frame.

    Uses the rotation between the two camera orientations and ignores
    translation, the plane-at-infinity approximation. Valid while the
    inter-frame baseline is small against scene depth, which short capture
    strides satisfy.
    """
    r_rel = pose_current.rotation.T @ pose_prev.rotation
    k = intrinsics.matrix()
    return Homography(k @ r_rel @ intrinsics.inverse_matrix())


def warp_mask(mask: SegMask, hom: Homography, background: int = 0) -> SegMask:
    """Resample a label mask under a homography with nearest-neighbor lookup.

    Output pixels whose source falls outside the input frame become
    ``background``; labels are never interpolated.
    """
    if abs(float(np.linalg.det(hom.matrix))) < 1e-12:
        raise SingularHomography("homography determinant is numerically zero")
    inv = np.linalg.inv(hom.matrix)

    h, w = mask.labels.shape
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    ones = np.ones_like(cols)
    dest = np.stack([cols.ravel(), rows.ravel(), ones.ravel()]).astype(float)
    src = inv @ dest
    with np.errstate(divide="ignore", invalid="ignore"):
        su = src[0] / src[2]
        sv = src[1] / src[2]
    su = np.rint(su)
    sv = np.rint(sv)
    valid = np.isfinite(su) & np.isfinite(sv) & (su >= 0) & (su < w) & (sv >= 0) & (sv < h)

    out = np.full(h * w, background, dtype=np.uint8)
    out[valid] = mask.labels[sv[valid].astype(int), su[valid].astype(int)]
    return SegMask(out.reshape(h, w))


def majority_vote(captured: SegMask, aligned_previous: Sequence[SegMask]) -> SegMask:
    """Per-pixel modal label over the capture and its aligned predecessors.

    Ties resolve to the captured frame's label when it is among the tied
    modes, otherwise to the lowest class code. With no predecessors the
    captured mask is returned as-is.
    """
    stack = [captured] + list(aligned_previous)
    shape = captured.labels.shape
    for m in stack:
        if m.labels.shape != shape:
            raise DimensionMismatch(f"mask shape {m.labels.shape} != {shape}")
    if len(stack) == 1:
        return captured

    counts = np.zeros((_N_CLASSES,) + shape, dtype=np.int32)
    for m in stack:
        for code in range(_N_CLASSES):
            counts[code] += m.labels == code

    top = counts.max(axis=0)
    modal = counts.argmax(axis=0).astype(np.uint8)  # argmax takes the lowest tied code
    captured_count = np.take_along_axis(
        counts, captured.labels[None].astype(np.intp), axis=0
    )[0]
    fused = np.where(captured_count == top, captured.labels, modal)
    return SegMask(fused)


@dataclass(frozen=True)
class Contour:
    """Ordered boundary trace of one feature instance.

    ``points`` are (row, col) pixels walking the outer boundary; consecutive
    points are 8-adjacent and the trace closes back onto its start. ``area``
    is the pixel count of the traced component.
    """

    feature_class: FeatureClass
    points: tuple
    area: int

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValueError("contour needs at least 3 boundary points")
        if self.area < len(set(self.points)):
            raise ValueError("area smaller than boundary pixel count")
        for a, b in zip(self.points, self.points[1:] + (self.points[0],)):
            if max(abs(a[0] - b[0]), abs(a[1] - b[1])) > 1:
                raise ValueError(f"contour breaks adjacency between {a} and {b}")

    @property
    def bounding_box(self) -> tuple:
        rows = [p[0] for p in self.points]
        cols = [p[1] for p in self.points]
        return (min(rows), min(cols), max(rows), max(cols))


def _trace_boundary(component: np.ndarray, start: tuple) -> list:
    """Moore-neighbor boundary walk from the component's top-left pixel.

    ``start`` must be the lexicographically smallest (row, col) member so the
    walk can begin with a known outside neighbor (its west side). The walk
    stops when it would repeat its first transition (Jacob's criterion).
    """
    # clockwise neighborhood starting north
    offsets = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    dir_of = {off: i for i, off in enumerate(offsets)}
    h, w = component.shape

    def is_set(pixel):
        r, c = pixel
        return 0 <= r < h and 0 <= c < w and component[r, c]

    points = [start]
    current = start
    entry = (start[0], start[1] - 1)  # west neighbor, outside the component
    first_transition = None
    limit = 4 * int(component.sum()) + 8
    for _ in range(limit):
        start_dir = dir_of[(entry[0] - current[0], entry[1] - current[1])]
        found = None
        last_background = entry
        for step in range(1, 9):
            idx = (start_dir + step) % 8
            cand = (current[0] + offsets[idx][0], current[1] + offsets[idx][1])
            if is_set(cand):
                found = cand
                break
            last_background = cand
        if found is None:
            break  # isolated pixel
        transition = (found, last_background)
        if first_transition is None:
            first_transition = transition
        elif transition == first_transition:
            break
        points.append(found)
        entry = last_background
        current = found
    if len(points) > 1 and points[-1] == start:
        points.pop()
    return points


def extract_instances(
    mask: SegMask,
    classes: Iterable[FeatureClass],
    min_instance_area: int = 25,
) -> list:
    """Cut a fused mask into per-class instance contours.

    Components are 8-connected; anything below ``min_instance_area`` pixels
    is dropped as segmentation noise. Results are ordered by class code,
    then by descending area, then top-left position, so downstream indexing
    is reproducible.
    """
    wanted = sorted(set(classes), key=int)
    for cls in wanted:
        if cls not in MAPPABLE_CLASSES:
            raise ValueError(f"{cls!r} is not a mappable class")

    contours = []
    for cls in wanted:
        binary = mask.labels == int(cls)
        if not binary.any():
            continue
        labeled, count = ndi.label(binary, structure=_EIGHT_CONNECTED)
        slices = ndi.find_objects(labeled)
        per_class = []
        for index in range(1, count + 1):
            window = slices[index - 1]
            component = labeled[window] == index
            area = int(component.sum())
            if area < max(min_instance_area, 1):
                continue
            local_rows, local_cols = np.nonzero(component)
            order = np.lexsort((local_cols, local_rows))
            start = (int(local_rows[order[0]]), int(local_cols[order[0]]))
            trace = _trace_boundary(component, start)
            if len(trace) < 3:
                continue  # one- and two-pixel slivers cannot close a boundary
            offset_r, offset_c = window[0].start, window[1].start
            points = tuple((r + offset_r, c + offset_c) for r, c in trace)
            per_class.append(Contour(feature_class=cls, points=points, area=area))
        per_class.sort(key=lambda c: (-c.area, c.points[0]))
        contours.extend(per_class)
    return contours
