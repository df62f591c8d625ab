import dataclasses

import numpy as np
import pytest

from extcontact.errors import DataError
from extcontact.geometry import axis_angle
from extcontact.labels import extract_contact_patch, generate_affordance
from extcontact.synth import (MODES, Box, CameraPose, ContactGeometry, DatasetSpec, GraspParams, Plane,
                              SceneConfig, SceneState, generate_dataset, generate_episode, look_at,
                              render_pointcloud, synth_tactile, synth_wrench)


def cfg(**kw):
    return dataclasses.replace(SceneConfig(), **kw)


def episodes_equal(a, b):
    assert a.id == b.id and a.contact == b.contact
    np.testing.assert_array_equal(a.annotation, b.annotation)
    for fa, fb in zip(a.frames, b.frames):
        for name in ("cloud", "rotation", "wrench", "tactile_left", "tactile_right", "annotation"):
            np.testing.assert_array_equal(getattr(fa, name), getattr(fb, name))


def test_mode_none_has_no_contact():
    ep = generate_episode(cfg(mode="none"), 3)
    assert not ep.contact
    assert all(not f.contact and len(f.annotation) == 0 for f in ep.frames)


@pytest.mark.parametrize("mode", MODES)
def test_deterministic(mode):
    episodes_equal(generate_episode(cfg(mode=mode), 11), generate_episode(cfg(mode=mode), 11))


def test_seeds_differ():
    a, b = generate_episode(cfg(mode="point"), 1), generate_episode(cfg(mode="point"), 2)
    assert not np.array_equal(a.frames[0].cloud, b.frames[0].cloud)


def test_point_contact_constant_annotation_positive_force():
    ep = generate_episode(cfg(mode="point", frames=30), 5)
    assert ep.num_frames == 30
    for f in ep.frames:
        np.testing.assert_array_equal(f.annotation, ep.annotation)
    assert all(fn > 0 for fn in ep.meta["normal_forces"])
    rots = np.array([f.rotation for f in ep.frames])
    wr = np.array([f.wrench for f in ep.frames])
    assert np.ptp(rots, axis=0).max() > 0 and np.ptp(wr, axis=0).max() > 0


@pytest.mark.parametrize("mode", MODES)
def test_frame_invariants(mode):
    ep = generate_episode(cfg(mode=mode), 21)
    for f in ep.frames:
        assert f.cloud.shape == (1024, 3)
        assert abs(np.linalg.norm(f.rotation.astype(float)) - 1) < 1e-6
        assert np.all(np.isfinite(f.tactile_left)) and np.all(np.isfinite(f.tactile_right))
        assert (len(f.annotation) > 0) == f.contact


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("seed", range(4))
def test_label_consistency(mode, seed):
    ep = generate_episode(cfg(mode=mode), seed)
    for f in ep.frames:
        patch = extract_contact_patch(f.cloud, generate_affordance(f.cloud, f.annotation))
        assert (len(patch) > 0) == f.contact


def test_chained_annotates_both_interfaces():
    ep = generate_episode(cfg(mode="chained"), 4)
    assert len(ep.annotation) >= 2


def test_wrench_no_contact_zero():
    np.testing.assert_array_equal(synth_wrench(False, None, 0), np.zeros(6))


def test_wrench_cross_product():
    R = axis_angle([1, 2, 3], 0.7)
    g = ContactGeometry(point=np.array([0.1, -0.05, 0.0]), force=np.array([1.0, 2.0, 8.0]),
                        wrist=np.array([0.0, 0.0, 0.3]), rotation=R)
    w = synth_wrench(True, g, 0)
    r = g.point - g.wrist
    np.testing.assert_allclose(R @ w[:3], g.force, atol=1e-12)
    np.testing.assert_allclose(R @ w[3:], np.cross(r, g.force), atol=1e-12)


def test_wrench_noise_zero_mean():
    rng = np.random.default_rng(0)
    s = np.array([synth_wrench(False, None, rng, sigma=0.1) for _ in range(10_000)])
    assert np.all(np.abs(s.mean(axis=0)) < 3 * 0.1 / np.sqrt(10_000))


def test_tactile_no_contact_zero():
    l, r = synth_tactile(False, np.zeros(6), GraspParams(), 8, 8, 0)
    assert not l.any() and not r.any()


def test_tactile_linear_in_tangential_force():
    w = np.array([2.0, 1.5, -0.8, 0.0, 0.0, 0.0])
    l1, _ = synth_tactile(True, w, GraspParams(), 8, 8, 0)
    w2 = w.copy()
    w2[1:3] *= 2
    l2, _ = synth_tactile(True, w2, GraspParams(), 8, 8, 0)
    m1, m2 = l1.mean(axis=(0, 1)), l2.mean(axis=(0, 1))
    np.testing.assert_allclose(np.linalg.norm(m2), 2 * np.linalg.norm(m1), rtol=1e-12)


def test_tactile_seeded_and_zero_mean_noise():
    a = synth_tactile(False, np.zeros(6), GraspParams(), 8, 8, 9, sigma=0.02)
    b = synth_tactile(False, np.zeros(6), GraspParams(), 8, 8, 9, sigma=0.02)
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(DataError):
        synth_tactile(False, np.zeros(6), GraspParams(), 1, 8, 0)


def test_render_on_box_surface():
    box = Box(np.array([0.0, 0.0, 0.5]), np.eye(3), np.array([0.5, 0.5, 0.5]))
    scene = SceneState(Plane(np.zeros(3), 0.0), [box])
    cam = look_at(np.array([2.0, 1.0, 2.5]), box.center)
    pts = render_pointcloud(scene, cam, 1024, 0)
    assert pts.shape == (1024, 3)
    world = cam.camera_to_world(pts)
    assert np.abs(box.surface_distance(world)).max() < 1e-9


def test_render_transforms_with_extrinsic():
    box = Box(np.array([0.0, 0.0, 0.05]), np.eye(3), np.array([0.05, 0.05, 0.05]))
    scene = SceneState(Plane(np.zeros(3), 0.2), [box])
    cams = [look_at(np.array([0.6, 0.0, 0.5]), np.zeros(3)), look_at(np.array([0.0, -0.6, 0.4]), np.zeros(3))]
    clouds = [render_pointcloud(scene, c, 256, 0) for c in cams]
    assert not np.allclose(clouds[0], clouds[1])
    contact = np.array([[0.05, 0.0, 0.0]])
    for c in cams:
        np.testing.assert_allclose(c.camera_to_world(c.world_to_camera(contact)), contact, atol=1e-12)


def test_render_no_visible_surface():
    box = Box(np.array([0.0, 0.0, 0.5]), np.eye(3), np.array([0.1, 0.1, 0.1]))
    inside = CameraPose(np.array([0.0, 0.0, 0.5]), np.eye(3))
    with pytest.raises(DataError):
        render_pointcloud(SceneState(Plane(np.zeros(3), 0.0), [box]), inside, 10, 0)
    with pytest.raises(ValueError):
        render_pointcloud(SceneState(Plane(np.zeros(3), 0.1), []), inside, 0, 0)


def test_config_validation():
    with pytest.raises(DataError):
        generate_episode(cfg(mode="bogus"), 0)
    with pytest.raises(DataError):
        generate_episode(cfg(frames=0), 0)


def test_dataset_deterministic_and_mixed():
    spec = DatasetSpec(episodes=12)
    a, b = generate_dataset(spec, 3), generate_dataset(spec, 3)
    for x, y in zip(a, b):
        episodes_equal(x, y)
    assert {e.contact for e in a} == {True, False}
