"""Geometric loop-closure ground truth.

Covisibility between two camera frames is measured by back-projecting a grid
of test points from one view with its depth map, transforming them into the
other view, and counting the points that land in bounds, in front of the
camera, and not occluded. The two directed fractions combine into a surface
intersection-over-union (sIoU). Simpler labeling rules (frame distance on a
sequence, metric pose thresholds, synthetic place ids on a ring) share the
same ternary output.

Conventions: poses are camera-to-world with unit quaternions (w,x,y,z);
camera frames are right-handed with +z forward (standard CV); depth maps are
z-depth in meters with values <= 0 or NaN marking invalid pixels; yaw is the
rotation of the camera about the world z (gravity) axis.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class Label(enum.Enum):
    NEGATIVE = 0
    POSITIVE = 1
    AMBIGUOUS = 2


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        ok = (
            self.fx > 0
            and self.fy > 0
            and 0 < self.cx < self.width
            and 0 < self.cy < self.height
        )
        if not ok:
            raise ValueError("invalid intrinsics")


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform: unit quaternion (w,x,y,z) + translation."""

    quaternion: tuple
    translation: tuple

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("pose needs a 4-quaternion and a 3-translation")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {norm} is not 1")
        q = q / norm
        object.__setattr__(self, "quaternion", tuple(float(v) for v in q))
        object.__setattr__(self, "translation", tuple(float(v) for v in t))

    def rotation(self) -> np.ndarray:
        """3x3 rotation matrix (camera axes expressed in world coordinates)."""
        w, x, y, z = self.quaternion
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def yaw(self) -> float:
        """Rotation about the gravity-aligned world z axis, in radians: the
        yaw of the ZYX Euler decomposition. Degenerate at gimbal lock (camera
        x axis vertical)."""
        r = self.rotation()
        return math.atan2(r[1, 0], r[0, 0])


@dataclass(frozen=True)
class OverlapResult:
    """Directed covisible fractions and their combined sIoU."""

    f1: float
    f2: float
    siou: float


# Labeling rules


@dataclass(frozen=True)
class FrameDistance:
    """Positive iff same sequence and index distance <= max_frames."""

    max_frames: int


@dataclass(frozen=True)
class PoseThreshold:
    """Positive iff translation distance < max_dist_m and yaw difference
    < max_yaw_deg; Negative otherwise."""

    max_dist_m: float
    max_yaw_deg: float


@dataclass(frozen=True)
class SiouRule:
    """Positive above `positive`, Negative below `negative`, else Ambiguous."""

    positive: float = 0.7
    negative: float = 0.1
    grid: int = 16
    occlusion: float = 0.03
    mode: str = "points"


@dataclass(frozen=True)
class PlaceRing:
    """Synthetic rule: place ids on a ring of num_places; Positive iff ring
    distance <= max_ring_dist."""

    max_ring_dist: int
    num_places: int


LabelRule = FrameDistance | PoseThreshold | SiouRule | PlaceRing


def siou(f1: float, f2: float) -> float:
    """Surface IoU from the two directed covisible fractions:
    1 / (1/f1 + 1/f2 - 1), with 0 whenever either fraction is 0."""
    if not (0.0 <= f1 <= 1.0 and 0.0 <= f2 <= 1.0):
        raise ValueError("covisible fractions must lie in [0, 1]")
    if f1 == 0.0 or f2 == 0.0:
        return 0.0
    return 1.0 / (1.0 / f1 + 1.0 / f2 - 1.0)


def _grid_pixels(intr: Intrinsics, grid: int) -> tuple[np.ndarray, np.ndarray]:
    # cell-center pixel coordinates of a grid x grid lattice
    us = (np.arange(grid) + 0.5) * intr.width / grid
    vs = (np.arange(grid) + 0.5) * intr.height / grid
    uu, vv = np.meshgrid(us, vs)
    return uu.ravel(), vv.ravel()


def _depth_at(depth: np.ndarray, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    cols = np.clip(us.astype(np.int64), 0, depth.shape[1] - 1)
    rows = np.clip(vs.astype(np.int64), 0, depth.shape[0] - 1)
    return depth[rows, cols]


def covisible_fraction(frame_a, frame_b, grid: int = 16,
                       occlusion: float = 0.03, mode: str = "points") -> float:
    """Fraction of frame A's test points that are covisible in frame B.

    A grid x grid lattice of pixel centers is back-projected with A's depth,
    transformed A -> world -> B, and projected with B's intrinsics. A point
    counts when it lands inside B's image, has positive depth in B's camera,
    and agrees with B's depth map within a relative tolerance (occlusion
    test). Points with invalid depth in A are dropped from the denominator;
    if every point is invalid the fraction is 0.

    mode="points" returns covisible points / valid points; mode="cells"
    instead counts the distinct grid cells of B's image occupied by the
    covisible points, over grid^2.
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    if mode not in ("points", "cells"):
        raise ValueError(f"unknown covisibility mode {mode!r}")
    ia, ib = frame_a.intrinsics, frame_b.intrinsics
    depth_a, depth_b = np.asarray(frame_a.depth), np.asarray(frame_b.depth)

    us, vs = _grid_pixels(ia, grid)
    za = _depth_at(depth_a, us, vs)
    valid = np.isfinite(za) & (za > 0.0)
    if not valid.any():
        return 0.0
    us, vs, za = us[valid], vs[valid], za[valid]

    pts_a = np.stack(
        [(us - ia.cx) / ia.fx * za, (vs - ia.cy) / ia.fy * za, za], axis=1
    )
    ra, ta = frame_a.pose.rotation(), np.asarray(frame_a.pose.translation)
    rb, tb = frame_b.pose.rotation(), np.asarray(frame_b.pose.translation)
    pts_w = pts_a @ ra.T + ta
    pts_b = (pts_w - tb) @ rb

    zb = pts_b[:, 2]
    front = zb > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ub = ib.fx * pts_b[:, 0] / zb + ib.cx
        vb = ib.fy * pts_b[:, 1] / zb + ib.cy
    inside = front & (ub >= 0) & (ub < ib.width) & (vb >= 0) & (vb < ib.height)
    if not inside.any():
        return 0.0

    db = _depth_at(depth_b, ub[inside], vb[inside])
    depth_ok = np.isfinite(db) & (db > 0.0)
    agree = np.zeros_like(db, dtype=bool)
    agree[depth_ok] = (
        np.abs(zb[inside][depth_ok] - db[depth_ok]) <= occlusion * db[depth_ok]
    )

    if mode == "points":
        return float(agree.sum()) / float(len(za))
    cell_u = (ub[inside][agree] * grid / ib.width).astype(np.int64)
    cell_v = (vb[inside][agree] * grid / ib.height).astype(np.int64)
    occupied = np.unique(cell_v * grid + cell_u).size
    return float(occupied) / float(grid * grid)


def overlap(frame_a, frame_b, grid: int = 16, occlusion: float = 0.03,
            mode: str = "points") -> OverlapResult:
    """Both directed fractions plus their sIoU."""
    f1 = covisible_fraction(frame_a, frame_b, grid, occlusion, mode)
    f2 = covisible_fraction(frame_b, frame_a, grid, occlusion, mode)
    return OverlapResult(f1=f1, f2=f2, siou=siou(f1, f2))


def _require(frame, attrs, rule_name):
    for a in attrs:
        if getattr(frame, a, None) is None:
            raise ValueError(f"insufficient metadata: {rule_name} needs {a}")


def ring_distance(a: int, b: int, n: int) -> int:
    d = abs(a - b) % n
    return min(d, n - d)


def classify_pair(frame_a, frame_b, rule: LabelRule) -> Label:
    """Ternary loop label for a frame pair under the given rule."""
    if isinstance(rule, FrameDistance):
        if frame_a.seq == frame_b.seq and abs(frame_a.index - frame_b.index) <= rule.max_frames:
            return Label.POSITIVE
        return Label.NEGATIVE

    if isinstance(rule, PoseThreshold):
        _require(frame_a, ("pose",), "pose rule")
        _require(frame_b, ("pose",), "pose rule")
        dist = np.linalg.norm(
            np.asarray(frame_a.pose.translation) - np.asarray(frame_b.pose.translation)
        )
        dyaw = abs(frame_a.pose.yaw() - frame_b.pose.yaw())
        dyaw = min(dyaw, 2.0 * math.pi - dyaw)
        if dist < rule.max_dist_m and math.degrees(dyaw) < rule.max_yaw_deg:
            return Label.POSITIVE
        return Label.NEGATIVE

    if isinstance(rule, SiouRule):
        for f in (frame_a, frame_b):
            _require(f, ("pose", "depth", "intrinsics"), "sIoU rule")
        value = overlap(frame_a, frame_b, rule.grid, rule.occlusion, rule.mode).siou
        if value > rule.positive:
            return Label.POSITIVE
        if value < rule.negative:
            return Label.NEGATIVE
        return Label.AMBIGUOUS

    if isinstance(rule, PlaceRing):
        _require(frame_a, ("place_id",), "place rule")
        _require(frame_b, ("place_id",), "place rule")
        d = ring_distance(frame_a.place_id, frame_b.place_id, rule.num_places)
        return Label.POSITIVE if d <= rule.max_ring_dist else Label.NEGATIVE

    raise TypeError(f"unknown label rule {rule!r}")


def classify_against(frame, others, rule: LabelRule) -> np.ndarray:
    """Labels of `frame` against a list of frames, as int8 Label values.
    Vectorized for the cheap metadata rules; falls back to per-pair calls."""
    if isinstance(rule, PlaceRing):
        if any(f.place_id is None for f in others) or frame.place_id is None:
            raise ValueError("insufficient metadata: place rule needs place_id")
        ids = np.array([f.place_id for f in others], dtype=np.int64)
        d = np.abs(ids - frame.place_id) % rule.num_places
        d = np.minimum(d, rule.num_places - d)
        return np.where(d <= rule.max_ring_dist,
                        Label.POSITIVE.value, Label.NEGATIVE.value).astype(np.int8)
    if isinstance(rule, FrameDistance):
        same = np.array([f.seq == frame.seq for f in others])
        didx = np.abs(np.array([f.index for f in others], dtype=np.int64) - frame.index)
        return np.where(same & (didx <= rule.max_frames),
                        Label.POSITIVE.value, Label.NEGATIVE.value).astype(np.int8)
    return np.array(
        [classify_pair(frame, other, rule).value for other in others], dtype=np.int8
    )


def pair_label_matrix(frames, rule: LabelRule) -> np.ndarray:
    """Full n x n int8 label matrix over a frame list."""
    n = len(frames)
    if isinstance(rule, (PlaceRing, FrameDistance)):
        out = np.empty((n, n), dtype=np.int8)
        for i, f in enumerate(frames):
            out[i] = classify_against(f, frames, rule)
        return out
    out = np.empty((n, n), dtype=np.int8)
    for i in range(n):
        out[i, i] = classify_pair(frames[i], frames[i], rule).value
        for j in range(i + 1, n):
            lab = classify_pair(frames[i], frames[j], rule).value
            out[i, j] = lab
            out[j, i] = lab
    return out
