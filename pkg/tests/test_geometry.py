"""Covisibility, sIoU algebra, and labeling-rule contracts.

The plane fixture is the independent oracle for grid covisibility: two
identity-rotation cameras viewing the plane z = d, camera B shifted along x
by s. Every pixel of A maps to B shifted by du = fx*s/d pixels, so the exact
covisible fraction is (width - du) / width, in closed form.
"""

import math

import numpy as np
import pytest

from looplearn.geometry import (CameraPose, FrameDistance, Intrinsics, Label,
                                PlaceRing, PoseThreshold, SiouRule,
                                classify_against, classify_pair,
                                covisible_fraction, overlap, pair_label_matrix,
                                ring_distance, siou)


class Obs:
    """Bare frame stand-in for geometry tests."""

    def __init__(self, pose=None, depth=None, intrinsics=None, place_id=None,
                 seq="s", index=0, env="e"):
        self.pose = pose
        self.depth = depth
        self.intrinsics = intrinsics
        self.place_id = place_id
        self.seq = seq
        self.index = index
        self.env = env


IDENTITY = CameraPose(quaternion=(1, 0, 0, 0), translation=(0, 0, 0))


def _plane_cam(shift_x, width=64, height=48, f=50.0, d=2.0):
    intr = Intrinsics(fx=f, fy=f, cx=width / 2, cy=height / 2,
                      width=width, height=height)
    pose = CameraPose(quaternion=(1, 0, 0, 0), translation=(shift_x, 0, 0))
    depth = np.full((height, width), d)
    return Obs(pose=pose, depth=depth, intrinsics=intr)


def test_identical_frames_fully_covisible():
    a = _plane_cam(0.0)
    assert covisible_fraction(a, a, grid=8) == 1.0
    assert covisible_fraction(a, a, grid=8, mode="cells") == 1.0


def test_opposite_facing_camera_sees_nothing():
    a = _plane_cam(0.0)
    # 180 degrees about the vertical (y) axis: quaternion (0, 0, 1, 0)
    b = Obs(pose=CameraPose(quaternion=(0, 0, 1, 0), translation=(0, 0, 0)),
            depth=a.depth.copy(), intrinsics=a.intrinsics)
    assert covisible_fraction(a, b, grid=8) == 0.0
    assert overlap(a, b).siou == 0.0


@pytest.mark.parametrize("grid", [8, 16, 32])
def test_plane_fixture_converges_to_closed_form(grid):
    width, f, d = 64, 50.0, 2.0
    shift = 0.5 * width * d / f  # du = width/2 -> exactly 50% overlap
    a = _plane_cam(0.0, width=width, f=f, d=d)
    b = _plane_cam(shift, width=width, f=f, d=d)
    exact = 0.5  # (width - du) / width from the closed-form projection
    measured = covisible_fraction(a, b, grid=grid)
    assert abs(measured - exact) <= 2.0 / grid
    # and the sIoU built from the two directed fractions matches the algebra
    res = overlap(a, b, grid=grid)
    assert res.siou == pytest.approx(siou(res.f1, res.f2))
    assert res.siou <= min(res.f1, res.f2) + 1e-12


def test_plane_fixture_matches_exact_grid_count():
    # closed-form count of grid columns whose center survives the shift
    width, f, d, grid = 64, 50.0, 2.0, 16
    shift = 0.5 * width * d / f
    du = f * shift / d
    cols = sum(1 for i in range(grid) if 0 <= (i + 0.5) * width / grid - du < width)
    expected = cols / grid
    a = _plane_cam(0.0, width=width, f=f, d=d)
    b = _plane_cam(shift, width=width, f=f, d=d)
    assert covisible_fraction(a, b, grid=grid) == pytest.approx(expected)


def test_occlusion_test_rejects_hidden_points():
    a = _plane_cam(0.0, d=4.0)
    b = _plane_cam(0.0, d=4.0)
    # B's depth map says everything is at 1m, so A's points at 4m are behind
    # a nearer surface and must fail the relative depth agreement
    b.depth = np.full_like(b.depth, 1.0)
    assert covisible_fraction(a, b, grid=8) == 0.0


def test_invalid_depth_excluded_from_denominator():
    a = _plane_cam(0.0)
    b = _plane_cam(0.0)
    half = a.depth.copy()
    half[:, : half.shape[1] // 2] = 0.0  # invalid on the left half
    a.depth = half
    assert covisible_fraction(a, b, grid=8) == 1.0
    a.depth = np.zeros_like(half)
    assert covisible_fraction(a, b, grid=8) == 0.0


def test_covisible_fraction_validations():
    a = _plane_cam(0.0)
    with pytest.raises(ValueError):
        covisible_fraction(a, a, grid=1)
    with pytest.raises(ValueError):
        covisible_fraction(a, a, mode="blobs")
    with pytest.raises(ValueError, match="invalid intrinsics"):
        Intrinsics(fx=-1, fy=1, cx=1, cy=1, width=4, height=4)


def test_siou_algebra():
    assert siou(1.0, 1.0) == 1.0
    assert siou(0.5, 0.5) == pytest.approx(1.0 / 3.0)
    assert siou(0.0, 0.9) == 0.0
    assert siou(0.9, 0.0) == 0.0
    with pytest.raises(ValueError):
        siou(-0.1, 0.5)
    with pytest.raises(ValueError):
        siou(0.5, 1.2)


def test_siou_symmetric_and_monotone(rng):
    for _ in range(200):
        f1, f2 = rng.uniform(0, 1, 2)
        assert siou(f1, f2) == siou(f2, f1)
    grid = np.linspace(0.05, 1.0, 20)
    for f2 in (0.2, 0.7, 1.0):
        vals = [siou(f1, f2) for f1 in grid]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_pose_validation():
    with pytest.raises(ValueError):
        CameraPose(quaternion=(1, 1, 0, 0), translation=(0, 0, 0))
    q = (1 + 5e-7, 0, 0, 0)  # tiny deviation is renormalized
    pose = CameraPose(quaternion=q, translation=(0, 0, 0))
    r = pose.rotation()
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert abs(np.linalg.norm(pose.quaternion) - 1) <= 1e-9


def test_classify_frame_distance():
    rule = FrameDistance(max_frames=3)
    a = Obs(seq="run0", index=10)
    b = Obs(seq="run0", index=12)
    c = Obs(seq="run0", index=14)
    d = Obs(seq="run1", index=11)
    assert classify_pair(a, b, rule) is Label.POSITIVE
    assert classify_pair(a, c, rule) is Label.NEGATIVE
    assert classify_pair(a, d, rule) is Label.NEGATIVE


def _pose_yaw(x, y, yaw_deg):
    half = math.radians(yaw_deg) / 2
    return CameraPose(quaternion=(math.cos(half), 0, 0, math.sin(half)),
                      translation=(x, y, 0))


def test_classify_pose_threshold():
    rule = PoseThreshold(max_dist_m=10.0, max_yaw_deg=15.0)
    a = Obs(pose=_pose_yaw(0, 0, 0))
    assert classify_pair(a, Obs(pose=_pose_yaw(3, 0, 5)), rule) is Label.POSITIVE
    assert classify_pair(a, Obs(pose=_pose_yaw(11, 0, 5)), rule) is Label.NEGATIVE
    assert classify_pair(a, Obs(pose=_pose_yaw(3, 0, 20)), rule) is Label.NEGATIVE
    # yaw difference wraps: 359 vs 1 degree is 2 degrees apart
    assert classify_pair(Obs(pose=_pose_yaw(0, 0, 359)),
                         Obs(pose=_pose_yaw(1, 0, 1)), rule) is Label.POSITIVE
    with pytest.raises(ValueError, match="insufficient metadata"):
        classify_pair(a, Obs(), rule)


def test_classify_siou_thresholds_and_symmetry():
    rule = SiouRule(positive=0.7, negative=0.1, grid=8)
    a = _plane_cam(0.0)
    same = _plane_cam(0.0)
    assert classify_pair(a, same, rule) is Label.POSITIVE
    width, f, d = 64, 50.0, 2.0
    mid = _plane_cam(0.5 * width * d / f)   # sIoU ~ 1/3: the excluded middle
    assert classify_pair(a, mid, rule) is Label.AMBIGUOUS
    assert classify_pair(mid, a, rule) is Label.AMBIGUOUS
    far = _plane_cam(10 * width * d / f)
    assert classify_pair(a, far, rule) is Label.NEGATIVE
    with pytest.raises(ValueError, match="insufficient metadata"):
        classify_pair(a, Obs(pose=IDENTITY), rule)


def test_classify_place_ring():
    rule = PlaceRing(max_ring_dist=1, num_places=8)
    assert ring_distance(0, 7, 8) == 1
    assert classify_pair(Obs(place_id=0), Obs(place_id=7), rule) is Label.POSITIVE
    assert classify_pair(Obs(place_id=0), Obs(place_id=4), rule) is Label.NEGATIVE


def test_classify_against_matches_scalar_path(rng):
    rule = PlaceRing(max_ring_dist=1, num_places=16)
    frames = [Obs(place_id=int(rng.integers(16)), index=i) for i in range(30)]
    probe = Obs(place_id=3)
    batch = classify_against(probe, frames, rule)
    scalar = [classify_pair(probe, f, rule).value for f in frames]
    assert batch.tolist() == scalar

    rule2 = FrameDistance(max_frames=2)
    frames2 = [Obs(seq=f"s{i % 2}", index=i) for i in range(20)]
    probe2 = Obs(seq="s0", index=6)
    assert classify_against(probe2, frames2, rule2).tolist() == [
        classify_pair(probe2, f, rule2).value for f in frames2
    ]


def test_pair_label_matrix_symmetric(rng):
    rule = PlaceRing(max_ring_dist=1, num_places=8)
    frames = [Obs(place_id=int(rng.integers(8)), index=i) for i in range(12)]
    m = pair_label_matrix(frames, rule)
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == Label.POSITIVE.value)
