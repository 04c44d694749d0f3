"""Synthetic session generator: determinism, rendering physics, noise budget.

The generator is the ground-truth oracle for the end-to-end suites, so
these tests pin what it promises: exact plane depth, a hard visibility
envelope, and noise whose injected RMS matches the request.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from groundmapper.errors import DegenerateScene, LengthMismatch
from groundmapper.geo import haversine_m
from groundmapper.stabilize import FeatureClass
from groundmapper.synth import (
    NoiseSpec,
    SceneSpec,
    build_session,
    builtin_scene,
    builtin_scene_names,
    generate_synthetic,
    scene_from_mapping,
    straight_walk,
)


def _scene_mapping(**overrides) -> dict:
    doc = {
        "name": "custom",
        "origin": {"latitude": 47.0, "longitude": -122.0},
        "camera_height_m": 2.2,
        "path_length_m": 8.0,
        "frame_count": 12,
        "fps": 10.0,
        "image_width": 64,
        "image_height": 48,
        "focal_px": 60.0,
        "strip": {"east_min_m": 0.8, "east_max_m": 2.8},
        "objects": [
            {
                "class": "pole",
                "along_m": 4.0,
                "half_width_m": 0.05,
                "base_height_m": 0.0,
                "top_height_m": 3.0,
                "east_m": 1.8,
            }
        ],
    }
    doc.update(overrides)
    return doc


class TestBuiltinScenes:
    def test_known_names(self):
        names = builtin_scene_names()
        assert "default" in names and "dense" in names and "smoke" in names
        for name in names:
            assert builtin_scene(name).name == name

    def test_unknown_name_lists_choices(self):
        with pytest.raises(ValueError, match="default"):
            builtin_scene("boulevard")

    def test_default_scene_shape(self):
        scene = builtin_scene("default")
        assert (scene.image_width, scene.image_height) == (640, 480)
        assert len(scene.objects) == 8  # five poles, three signs
        assert scene.strip.width_m == pytest.approx(2.0)


class TestSceneFromMapping:
    def test_round_trips_the_fields(self):
        scene = scene_from_mapping(_scene_mapping())
        assert scene.name == "custom"
        assert scene.frame_count == 12
        assert scene.objects[0].feature_class is FeatureClass.POLE
        assert scene.objects[0].east_m == pytest.approx(1.8)

    def test_missing_key(self):
        doc = _scene_mapping()
        del doc["fps"]
        with pytest.raises(ValueError, match="fps"):
            scene_from_mapping(doc)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="pavement"):
            scene_from_mapping(_scene_mapping(pavement=True))

    def test_unknown_object_key(self):
        doc = _scene_mapping()
        doc["objects"][0]["tilt"] = 0.5
        with pytest.raises(ValueError, match="tilt"):
            scene_from_mapping(doc)

    def test_unknown_class(self):
        doc = _scene_mapping()
        doc["objects"][0]["class"] = "hydrant"
        with pytest.raises(ValueError):
            scene_from_mapping(doc)

    def test_not_an_object(self):
        with pytest.raises(ValueError):
            scene_from_mapping([1, 2, 3])


class TestDeterminism:
    def test_same_seed_same_session(self):
        from groundmapper.session import sessions_equal

        scene = builtin_scene("smoke")
        a = build_session(scene, NoiseSpec(gps_sigma_m=0.5, seed=11), session_id="s")
        b = build_session(scene, NoiseSpec(gps_sigma_m=0.5, seed=11), session_id="s")
        assert sessions_equal(a, b)

    def test_different_seed_moves_the_fixes(self):
        scene = builtin_scene("smoke")
        a = build_session(scene, NoiseSpec(gps_sigma_m=0.5, seed=1), session_id="s")
        b = build_session(scene, NoiseSpec(gps_sigma_m=0.5, seed=2), session_id="s")
        gaps = [
            haversine_m(fa.gps.point(), fb.gps.point())
            for fa, fb in zip(a.frames, b.frames)
        ]
        assert max(gaps) > 0.01


class TestRendering:
    def test_labels_and_depth_share_the_visibility_envelope(self, smoke_session):
        scene = builtin_scene("smoke")
        for frame in smoke_session.frames:
            valid = frame.depth.values > 0
            labeled = frame.mask.labels != int(FeatureClass.BACKGROUND)
            # every labeled pixel carries a valid depth inside (near, far]
            assert (valid[labeled]).all()
            inside = frame.depth.values[valid]
            assert (inside > scene.near_m).all()
            assert (inside <= scene.far_m + 1e-6).all()

    def test_ground_plane_depth_is_exact(self, smoke_session):
        # hand-check one pixel: depth of the plane at row v is
        # h * fy / (v - cy) for a straight-down-looking row of a level camera
        scene = builtin_scene("smoke")
        frame = smoke_session.frames[0]
        k = frame.intrinsics
        sidewalk = np.nonzero(frame.mask.labels == int(FeatureClass.SIDEWALK))
        v, u = sidewalk[0][-1], sidewalk[1][-1]
        expected = scene.camera_height_m * k.fy / (v - k.cy)
        assert frame.depth.values[v, u] == pytest.approx(expected, rel=1e-6)

    def test_ground_truth_lists_scene_objects(self, smoke_session):
        truth = smoke_session.ground_truth
        scene = builtin_scene("smoke")
        assert truth.sidewalk_width_m == pytest.approx(scene.strip.width_m)
        assert len(truth.objects) == len(scene.objects)
        for (cls, point), board in zip(truth.objects, scene.objects):
            assert cls is board.feature_class
            expected = math.hypot(board.along_m, board.east_m)
            assert haversine_m(scene.origin, point) == pytest.approx(expected, rel=1e-6)

    def test_warmup_frames_are_not_captures(self, smoke_session):
        scene = builtin_scene("smoke")
        assert min(smoke_session.capture_indices) == scene.warmup_frames

    def test_camera_points_cover_captures(self, smoke_session):
        camera_points = smoke_session.ground_truth.camera_points
        for capture_id in smoke_session.capture_indices:
            assert capture_id in camera_points


class TestTrajectory:
    def test_straight_walk_heads_north_on_schedule(self):
        scene = builtin_scene("smoke")
        points = straight_walk(scene)
        assert len(points) == scene.frame_count
        for i, point in enumerate(points):
            assert point.timestamp == pytest.approx(i / scene.fps)
        step = scene.path_length_m / (scene.frame_count - 1)
        gap = haversine_m(points[0].fix.point(), points[1].fix.point())
        assert gap == pytest.approx(step, rel=1e-6)
        assert points[1].fix.latitude > points[0].fix.latitude

    def test_trajectory_length_must_match(self):
        scene = builtin_scene("smoke")
        points = straight_walk(scene)[:-1]
        with pytest.raises(LengthMismatch):
            generate_synthetic(scene, points)


class TestNoise:
    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(gps_sigma_m=-1.0)
        with pytest.raises(ValueError):
            NoiseSpec(depth_sigma_m=-0.5)

    def test_gps_noise_rms_matches_request(self):
        scene = builtin_scene("dense")
        session = build_session(scene, NoiseSpec(gps_sigma_m=1.0, seed=0), session_id="s")
        errors = [
            haversine_m(frame.gps.point(), truth)
            for frame, truth in zip(
                session.frames,
                [p.fix.point() for p in straight_walk(scene)],
            )
        ]
        rms = math.sqrt(sum(e * e for e in errors) / len(errors))
        assert 0.8 <= rms <= 1.2  # the generator enforces this itself

    def test_noisy_fix_reports_its_accuracy(self):
        scene = builtin_scene("smoke")
        session = build_session(scene, NoiseSpec(gps_sigma_m=0.5, seed=3), session_id="s")
        assert all(f.gps.horizontal_accuracy == pytest.approx(0.5) for f in session.frames)

    def test_depth_noise_perturbs_only_valid_pixels(self):
        scene = builtin_scene("smoke")
        clean = build_session(scene, NoiseSpec(), session_id="s")
        noisy = build_session(scene, NoiseSpec(depth_sigma_m=0.02, seed=5), session_id="s")
        for a, b in zip(clean.frames, noisy.frames):
            invalid = a.depth.values <= 0
            np.testing.assert_array_equal(b.depth.values[invalid], a.depth.values[invalid])
            valid = ~invalid
            assert (a.depth.values[valid] != b.depth.values[valid]).any()

    def test_catastrophic_depth_noise_refused(self):
        scene = builtin_scene("smoke")
        with pytest.raises(DegenerateScene):
            build_session(scene, NoiseSpec(depth_sigma_m=10.0, seed=0), session_id="s")


class TestSceneValidation:
    def test_camera_below_ground(self):
        with pytest.raises(DegenerateScene):
            dataclasses.replace(builtin_scene("smoke"), camera_height_m=0.0)

    def test_far_must_exceed_near(self):
        with pytest.raises(DegenerateScene):
            dataclasses.replace(builtin_scene("smoke"), near_m=6.0, far_m=6.0)

    def test_walk_shorter_than_warmup(self):
        with pytest.raises(DegenerateScene):
            dataclasses.replace(builtin_scene("smoke"), frame_count=3, warmup_frames=4)

    def test_scene_classes_cover_objects_and_sidewalk(self):
        scene = builtin_scene("default")
        selection = scene.class_selection()
        assert FeatureClass.SIDEWALK in selection
        assert FeatureClass.POLE in selection
        assert FeatureClass.TRAFFIC_SIGN in selection
        assert FeatureClass.BACKGROUND not in selection
