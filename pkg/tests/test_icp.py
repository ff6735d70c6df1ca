from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from binpose.icp import (
    DegenerateSamplingError, IcpParams, NoCorrespondenceError, ScanIndex, model_faces, refine_icp, rigid_align,
    sample_bin_model, visible_mask,
)
from binpose.metrics import rotation_error, translation_error
from binpose.scan import BinSpec, Pose, StructuredScan
from binpose.synth import FLOOR_TOP_LABEL, bin_boxes, perturb_pose, render_scan
from conftest import suite, top_down_scene
from oracles import brute_nearest


def on_bin_surface(spec: BinSpec, p: np.ndarray) -> bool:
    for lo, hi in bin_boxes(spec):
        inside = np.all(p >= lo - 1e-9) and np.all(p <= hi + 1e-9)
        if inside and np.min(np.minimum(np.abs(p - lo), np.abs(p - hi))) < 1e-9:
            return True
    return False


def test_grid_per_face():
    spec = BinSpec(100, 100, 100, 5)
    pts = sample_bin_model(spec, 50.0)
    faces = model_faces(spec)
    exterior = [f for f in faces if "outer" in f[0]]
    assert len(exterior) == 5
    for name, o, u, v in faces:
        n = np.cross(u, v)
        n /= np.linalg.norm(n)
        a = (pts - o) @ (u / np.linalg.norm(u)) / np.linalg.norm(u)
        b = (pts - o) @ (v / np.linalg.norm(v)) / np.linalg.norm(v)
        on = (np.abs((pts - o) @ n) < 1e-9) & (a >= -1e-9) & (a <= 1 + 1e-9) & (b >= -1e-9) & (b <= 1 + 1e-9)
        assert on.sum() >= (9 if "rim" not in name else 6), name


def test_samples_lie_on_the_bin():
    spec = BinSpec(300, 200, 150, 6)
    pts = sample_bin_model(spec, 7.0)
    assert all(on_bin_surface(spec, p) for p in pts[::5])


def test_spacing_too_large():
    with pytest.raises(DegenerateSamplingError):
        sample_bin_model(BinSpec(300, 300, 300, 5), 1000.0)
    with pytest.raises(DegenerateSamplingError):
        sample_bin_model(BinSpec(300, 300, 300, 5), 0.0)


@pytest.mark.parametrize("spacing", [10.0, 5.0, 3.0])
def test_halving_spacing_quadruples_count(spacing):
    spec = BinSpec(300, 200, 150, 6)
    ratio = len(sample_bin_model(spec, spacing / 2)) / len(sample_bin_model(spec, spacing))
    assert 3.5 <= ratio <= 4.5


def test_visible_mask_from_above():
    scene = top_down_scene()
    spec = scene.bin
    pts = sample_bin_model(spec, 5.0)
    vis = visible_mask(spec, scene.bin_pose, pts)
    hd = spec.inner_depth / 2
    floor_in = np.isclose(pts[:, 2], -hd) & (np.abs(pts[:, 0]) < 100) & (np.abs(pts[:, 1]) < 60)
    bottom = np.isclose(pts[:, 2], -hd - spec.wall_thickness)
    rim = np.isclose(pts[:, 2], hd) & ~np.isclose(np.abs(pts[:, 0]), spec.inner_length / 2)
    assert vis[floor_in].all() and not vis[bottom].any() and vis[rim].mean() > 0.95


def test_index_matches_brute_force():
    scene, scan, gt = suite()[0]
    index = ScanIndex(scan)
    rng = np.random.default_rng(0)
    pts = index.points
    queries = pts[rng.integers(0, len(pts), 1000)] + rng.normal(scale=15, size=(1000, 3))
    d, i = index.query(queries)
    d_ref, i_ref = brute_nearest(pts, queries)
    assert np.allclose(d, d_ref, atol=1e-9)
    # ties aside, the same point
    assert np.all((i == i_ref) | np.isclose(np.linalg.norm(pts[i] - queries, axis=1), d_ref))


def test_empty_scan_index():
    with pytest.raises(NoCorrespondenceError):
        ScanIndex(StructuredScan(3, 2, np.zeros((2, 3, 3)), np.zeros((2, 3), bool)))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 60))
def test_rigid_align_recovers_transform(seed, n):
    rng = np.random.default_rng(seed)
    src = rng.normal(scale=100, size=(n, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    t = rng.normal(scale=50, size=3)
    R_est, t_est = rigid_align(src, src @ R.T + t)
    assert np.allclose(R_est, R, atol=1e-8) and np.allclose(t_est, t, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rigid_align_is_proper_on_planar_and_mirrored_sets(seed):
    rng = np.random.default_rng(seed)
    src = np.column_stack([rng.normal(size=(20, 2)) * 100, np.zeros(20)])
    mirrored = src * [1, -1, 1]
    for dst in (src @ Rotation.random(random_state=seed).as_matrix().T, mirrored, src[:, [1, 0, 2]]):
        R, _ = rigid_align(src, dst)
        assert abs(np.linalg.det(R) - 1) < 1e-6
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)


def test_fixed_point_at_ground_truth():
    for scene, scan, gt in suite()[:10]:
        r = refine_icp(scan, gt, scene.bin)
        assert r.iterations_used <= 3
        assert rotation_error(gt.R, r.pose.R) < 1e-3 and translation_error(r.pose.t, gt.t) < 0.1
        assert r.confident


def test_perturbed_starts_converge():
    for i, (scene, scan, gt) in enumerate(suite()[:12]):
        init = perturb_pose(gt, 5.0, 20.0, np.random.default_rng([7, i]))
        r = refine_icp(scan, init, scene.bin)
        assert rotation_error(gt.R, r.pose.R) < 0.01
        assert translation_error(r.pose.t, gt.t) < 2.0
        assert r.iterations_used <= IcpParams().max_iterations and r.final_mean_distance >= 0
        for steps in r.history:
            assert all(b <= a + 1e-9 for a, b in zip(steps, steps[1:]))
        R = r.pose.R
        assert R[0, 1] > 0 or (R[0, 1] == 0 and R[1, 1] > 0)


def test_idempotent_at_optimum():
    scene, scan, gt = suite()[2]
    init = perturb_pose(gt, 5.0, 20.0, np.random.default_rng(1))
    a = refine_icp(scan, init, scene.bin)
    b = refine_icp(scan, a.pose, scene.bin)
    assert translation_error(a.pose.t, b.pose.t) < 0.1 and rotation_error(a.pose.R, b.pose.R) < 1e-3


def test_iteration_budget():
    scene, scan, gt = suite()[2]
    init = perturb_pose(gt, 5.0, 20.0, np.random.default_rng(1))
    r = refine_icp(scan, init, scene.bin, IcpParams(max_iterations=1))
    assert r.iterations_used <= 1


def floor_patch_scan(scene, camera, half: int = 18):
    """Only floor pixels in a small window around the floor centre survive."""
    scan, gt, labels = render_scan(scene, camera, return_labels=True)
    floor = labels == FLOOR_TOP_LABEL
    rows, cols = np.nonzero(floor)
    r0, c0 = int(rows.mean()), int(cols.mean())
    window = np.zeros_like(floor)
    window[r0 - half:r0 + half, c0 - half:c0 + half] = True
    keep = floor & window
    return StructuredScan(scan.width, scan.height, scan.points, keep), gt


def test_floor_only_scan_is_not_confident(camera):
    scene = top_down_scene()
    scan, gt = floor_patch_scan(scene, camera)
    init = perturb_pose(gt, 3.0, 15.0, np.random.default_rng(4))
    r = refine_icp(scan, init, scene.bin, IcpParams(rejection_radius=10.0))
    assert r.paired_points < 500 and not r.confident
    # the floor patch pins nothing in-plane, so the rim stays misplaced
    rim = scene.bin.rim_corners()
    assert np.linalg.norm(r.pose.apply(rim) - gt.apply(rim), axis=1).mean() > 5.0


def test_no_correspondence(camera):
    scene, scan, gt = suite()[0]
    far = Pose(gt.R, gt.t + [0, 0, 5000.0])
    with pytest.raises(NoCorrespondenceError):
        refine_icp(scan, far, scene.bin)


def test_params_validation():
    for change in ({"max_iterations": 0}, {"rejection_radius": 0.0}, {"model_sample_spacing": -1.0},
                   {"min_paired_points": 0}, {"convergence_delta": 0.0}):
        with pytest.raises(ValueError):
            replace(IcpParams(), **change)
