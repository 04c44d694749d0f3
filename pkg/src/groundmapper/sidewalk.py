"""Sidewalk extent extraction and width measurement.

The sidewalk in front of the device is approximated by a trapezoid fitted
inside a region of interest at the bottom of the frame: rows are kept when
they carry a long enough contiguous sidewalk run, the densest contiguous
band of kept rows becomes the trapezoid, and its top/bottom edges are
localized through the depth map to measure the physical width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoSidewalk, RoiOutOfBounds
from .geo import (
    DepthMap,
    GeoPoint,
    Intrinsics,
    Pose,
    average_depth,
    haversine_m,
    localize_pixel,
)
from .stabilize import FeatureClass, SegMask


@dataclass(frozen=True)
class RegionOfInterest:
    """Half-open pixel rectangle: rows [row_min, row_max), cols [col_min, col_max)."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self):
        if not (self.row_min < self.row_max and self.col_min < self.col_max):
            raise ValueError("region of interest must have positive extent")
        if min(self.row_min, self.col_min) < 0:
            raise ValueError("region of interest must not be negative")

    @classmethod
    def from_fractions(
        cls,
        width: int,
        height: int,
        top: float = 0.45,
        bottom: float = 1.0,
        left: float = 0.0,
        right: float = 1.0,
    ) -> "RegionOfInterest":
        return cls(
            row_min=int(top * height),
            row_max=int(bottom * height),
            col_min=int(left * width),
            col_max=int(right * width),
        )

    @property
    def width(self) -> int:
        return self.col_max - self.col_min

    def check_fits(self, mask_width: int, mask_height: int) -> None:
        if self.row_max > mask_height or self.col_max > mask_width:
            raise RoiOutOfBounds(
                f"roi {self} exceeds mask {mask_width}x{mask_height}"
            )


@dataclass(frozen=True)
class Trapezoid:
    """Sidewalk band in image space.

    Rows are inclusive; spans are half-open column intervals of the longest
    sidewalk run on the top and bottom rows.
    """

    top_row: int
    bottom_row: int
    top_span: tuple
    bottom_span: tuple

    def __post_init__(self):
        if not self.top_row < self.bottom_row:
            raise ValueError("trapezoid must span at least two rows")
        for span in (self.top_span, self.bottom_span):
            if not span[0] < span[1]:
                raise ValueError(f"empty span {span}")

    def corners(self) -> tuple:
        """(row, col) pixels: top-left, top-right, bottom-left, bottom-right."""
        return (
            (self.top_row, self.top_span[0]),
            (self.top_row, self.top_span[1] - 1),
            (self.bottom_row, self.bottom_span[0]),
            (self.bottom_row, self.bottom_span[1] - 1),
        )


@dataclass(frozen=True)
class SidewalkMeasurement:
    """Physical sidewalk estimate for one capture."""

    location: GeoPoint
    width_m: float

    def __post_init__(self):
        if not (math.isfinite(self.width_m) and self.width_m > 0):
            raise ValueError(f"width must be positive, got {self.width_m}")


def apply_roi(mask: SegMask, roi: RegionOfInterest) -> SegMask:
    """Suppress sidewalk labels outside the region of interest.

    Only the sidewalk class is touched; other labels stay where they are so
    object extraction is unaffected.
    """
    roi.check_fits(mask.width, mask.height)
    out = mask.labels.copy()
    keep = np.zeros_like(out, dtype=bool)
    keep[roi.row_min : roi.row_max, roi.col_min : roi.col_max] = True
    sidewalk = out == int(FeatureClass.SIDEWALK)
    out[sidewalk & ~keep] = int(FeatureClass.BACKGROUND)
    return SegMask(out)


def _longest_run(flags: np.ndarray) -> Optional[tuple]:
    """(start, end) of the longest True run, leftmost on ties, else None."""
    if not flags.any():
        return None
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    lengths = ends - starts
    best = int(np.argmax(lengths))  # argmax keeps the first (leftmost) maximum
    return int(starts[best]), int(ends[best])


def extract_trapezoid(
    mask: SegMask,
    roi: RegionOfInterest,
    min_run_fraction: float = 0.15,
) -> Trapezoid:
    """Fit the sidewalk trapezoid inside the region of interest.

    A row is usable when its longest contiguous sidewalk run covers at least
    ``min_run_fraction`` of the roi width. Among contiguous bands of usable
    rows the one with the most sidewalk pixels wins; ties go to the lower
    band. Bands need two rows, otherwise there is no trapezoid to fit.
    """
    roi.check_fits(mask.width, mask.height)
    if not 0 < min_run_fraction <= 1:
        raise ValueError("min_run_fraction must be in (0, 1]")
    threshold = min_run_fraction * roi.width

    sidewalk = mask.labels[roi.row_min : roi.row_max, roi.col_min : roi.col_max] == int(
        FeatureClass.SIDEWALK
    )
    runs = {}
    for offset in range(sidewalk.shape[0]):
        run = _longest_run(sidewalk[offset])
        if run is not None and run[1] - run[0] >= threshold:
            runs[roi.row_min + offset] = (roi.col_min + run[0], roi.col_min + run[1])

    best = None  # (area, bottom_row, top_row)
    valid_rows = sorted(runs)
    band_start = None
    previous = None
    for row in valid_rows + [None]:
        if band_start is None:
            band_start = row
        elif row is None or row != previous + 1:
            area = sum(runs[r][1] - runs[r][0] for r in range(band_start, previous + 1))
            candidate = (area, previous, band_start)
            if previous > band_start and (best is None or candidate > best):
                best = candidate
            band_start = row
        previous = row

    if best is None:
        raise NoSidewalk("no contiguous sidewalk band in the region of interest")
    _, bottom_row, top_row = best
    return Trapezoid(
        top_row=top_row,
        bottom_row=bottom_row,
        top_span=runs[top_row],
        bottom_span=runs[bottom_row],
    )


def _corner_depth(depth: DepthMap, pixel: tuple, radius_px: float) -> float:
    """Depth at a corner pixel, falling back to the disc mean when invalid."""
    value = float(depth.values[pixel[0], pixel[1]])
    if value > 0 and math.isfinite(value):
        return value
    return average_depth(depth, (pixel[1], pixel[0]), radius_px)


def measure_sidewalk(
    trapezoid: Trapezoid,
    depth: DepthMap,
    intrinsics: Intrinsics,
    pose: Pose,
    fix: GeoPoint,
    radius_px: float = 5.0,
) -> SidewalkMeasurement:
    """Measure sidewalk width and placement from a fitted trapezoid.

    All four corners are localized; the width is the mean of the top and
    bottom edge ground lengths, which tolerates the perspective taper. The
    reported location is the localized centroid of the corner pixels.
    """
    corner_points = []
    for (row, col) in trapezoid.corners():
        d = _corner_depth(depth, (row, col), radius_px)
        corner_points.append(localize_pixel(col, row, d, intrinsics, pose, fix))
    top_len = haversine_m(corner_points[0], corner_points[1])
    bottom_len = haversine_m(corner_points[2], corner_points[3])
    width = (top_len + bottom_len) / 2.0

    rows = [p[0] for p in trapezoid.corners()]
    cols = [p[1] for p in trapezoid.corners()]
    center_v = sum(rows) / 4.0
    center_u = sum(cols) / 4.0
    nearest = (int(round(center_v)), int(round(center_u)))
    center_depth = _corner_depth(depth, nearest, radius_px)
    location = localize_pixel(center_u, center_v, center_depth, intrinsics, pose, fix)
    return SidewalkMeasurement(location=location, width_m=width)
